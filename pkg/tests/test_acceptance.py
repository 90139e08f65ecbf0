"""Acceptance suite: one recorded pass/fail line per criterion (see the terminal summary).

The benchmark criterion trains every network on the default dataset through the
command-line interface, so this module takes most of the suite's runtime.
"""

import dataclasses
import json
import time
from pathlib import Path

import numpy as np
import pytest

from contactdiff import autodiff as ad
from contactdiff import nn
from contactdiff.body import DEFAULT_TREE, PARAM_DIM, pose, region_min_distance
from contactdiff.cli import main
from contactdiff.config import OUT_DIR_ENV, RunConfig
from contactdiff.contact import (ContactPredictor, bce_from_logits, centered_inputs, f1_score,
                                 predict_contact_map, threshold_contacts)
from contactdiff.data import Dataset, load_split, mirror_augment, validate_dataset
from contactdiff.denoiser import ConditionSet, Denoiser
from contactdiff.diffusion import build_linear_schedule, ddim_step, predict_x0, q_sample, sample_timesteps
from contactdiff.guidance import chamfer, chamfer_unidirectional, contact_objective, guidance_gradient
from contactdiff.metrics import (FeatureClassifier, GaussianStats, fhid, frechet_distance,
                                 non_collision_scores, top1_accuracy, train_classifier)
from contactdiff.serialization import read_blob
from helpers import FD_STEP, grad_check, max_rel_error, record_criterion

TREE = DEFAULT_TREE
RUNTIME_BUDGET_S = 30 * 60
HANDSHAKE_EXAMPLE = ["--label", "handshake", "--count", "16", "--seed", "7"]


def cli(*args) -> None:
    code = main(["--quiet", *args])
    assert code == 0, f"{args} exited with {code}"


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Full default pipeline; returns the run directory and per-command wall times."""
    root = tmp_path_factory.mktemp("acceptance")
    mp = pytest.MonkeyPatch()
    mp.setenv(OUT_DIR_ENV, str(root))
    times = {}
    try:
        for cmd in (["gen-data"], ["train-contact"], ["train-diffusion"], ["train-classifier"],
                    ["sample", "--unguided"], ["sample"], ["evaluate", "--samples", "unguided"],
                    ["evaluate", "--samples", "guided"]):
            t0 = time.perf_counter()
            cli(*cmd)
            times[" ".join(cmd)] = time.perf_counter() - t0
    finally:
        mp.undo()
    return root, times


def _eval(root: Path, name: str) -> dict:
    return json.loads((root / "eval" / f"{name}.json").read_text())["rows"]["All"]


# ---------------------------------------------------------------- 1


def test_criterion_1_guidance_improves_contact_within_budget(run):
    root, times = run
    g, u = _eval(root, "guided"), _eval(root, "unguided")
    total = sum(times.values())
    contact_ratio = g["contact"] / u["contact"]
    fhid_ratio = g["fhid"] / u["fhid"]
    nc_drop = u["non_collision"] - g["non_collision"]
    checks = {"contact": contact_ratio <= 0.7, "fhid": fhid_ratio <= 1.2, "non_collision": nc_drop <= 5.0,
              "runtime": total <= RUNTIME_BUDGET_S}
    detail = (f"contact {g['contact']:.5f}/{u['contact']:.5f}={contact_ratio:.3f} (<=0.7), "
              f"FHID {g['fhid']:.3f}/{u['fhid']:.3f}={fhid_ratio:.3f} (<=1.2), "
              f"non-collision {u['non_collision']:.2f}->{g['non_collision']:.2f} drop {nc_drop:.2f} (<=5), "
              f"runtime {total / 60:.1f} min on this machine (<=30)")
    assert record_criterion("1", "guided vs unguided benchmark", all(checks.values()), detail), \
        f"failed parts: {[k for k, v in checks.items() if not v]}"


# ---------------------------------------------------------------- 2


def test_criterion_2_zero_lambda_is_unguided_bitwise(run, monkeypatch):
    root, _ = run
    monkeypatch.setenv(OUT_DIR_ENV, str(root))
    cli("sample", *HANDSHAKE_EXAMPLE, "--lambda", "0", "--name", "lam0")
    cli("sample", *HANDSHAKE_EXAMPLE, "--unguided", "--name", "ref")
    a = read_blob(root / "samples" / "lam0.bin")["x_h"]
    b = read_blob(root / "samples" / "ref.bin")["x_h"]
    evals = json.loads((root / "samples" / "lam0.bin.json").read_text())["guidance_evals"]
    ok = np.array_equal(a, b) and evals == 1000
    assert record_criterion("2", "lambda=0 off-switch", ok,
                            f"16 samples bitwise equal={np.array_equal(a, b)}, objective evaluated {evals} times")


# ---------------------------------------------------------------- 3


def _worst(values):
    return max(values), len(values)


def test_criterion_3_gradients_match_finite_differences(run):
    root, _ = run
    te = load_split(root / "data", "test")
    den, _ = Denoiser.load(root / "models" / "denoiser.bin")
    pred = ContactPredictor.load(root / "models" / "contact.bin")
    clf = FeatureClassifier.load(root / "models" / "classifier.bin")
    results = {}

    # guidance gradient at denoised estimates near real samples, pairs from the trained predictor
    errs = []
    rng = np.random.default_rng(0)
    for k in rng.permutation(len(te)):
        if len(errs) == 20:
            break
        x0 = te.x_h[k:k + 1] + 0.02 * rng.standard_normal((1, PARAM_DIM))
        g, sets = guidance_gradient(x0, te.x_p[k:k + 1], te.labels[k:k + 1], pred, 0.5)
        if not sets[0]:
            continue
        num = ad.numeric_grad(lambda: contact_objective(x0[0], te.x_p[k], te.labels[k], sets[0]), x0, FD_STEP)
        errs.append(max_rel_error(g, num))
    results["guidance_gradient"] = _worst(errs)

    errs = []
    names = ["time1.w", "partner.w", "label_emb", "inp.w", "block0.fc1.w", "block3.fc2.w", "out.ln.g", "out.w"]
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        idx = rng.integers(0, len(te), 2)
        t = rng.integers(1, 1001, 2)
        x_t = ad.Tensor(q_sample(te.x_h[idx], t, rng.standard_normal((2, PARAM_DIM)), build_linear_schedule()),
                        requires_grad=True)
        cond = ConditionSet(te.x_p[idx], te.labels[idx], rng.random(2) < 0.8, rng.random(2) < 0.9)
        target = rng.standard_normal((2, PARAM_DIM))
        tensors = [x_t] + [den.store[n] for n in names]
        errs.append(grad_check(lambda: ad.mean(ad.square(den(x_t, t, cond) - target)), tensors, rng, 8))
    results["denoiser"] = _worst(errs)

    errs = []
    names = ["embed_h.w", "region_p", "blk0.h.self.q.w", "blk1.p.cross.o.w", "head_h.w", "pair_bias", "dist_w",
             "bias"]
    for seed in range(20):
        rng = np.random.default_rng(200 + seed)
        idx = rng.integers(0, len(te), 2)
        ch, cp = centered_inputs(pose(te.x_h[idx]), pose(te.x_p[idx]))
        errs.append(grad_check(lambda: bce_from_logits(pred.logits(ch, cp, te.labels[idx]), te.contacts[idx]),
                               [pred.store[n] for n in names], rng, 8))
    results["contact predictor"] = _worst(errs)

    errs = []
    for seed in range(20):
        rng = np.random.default_rng(300 + seed)
        idx = rng.integers(0, len(te), 8)
        tensors = [clf.store[n] for n in ("fc1.w", "fc1.b", "fc2.w", "cls.w", "cls.b")]
        errs.append(grad_check(lambda: nn.cross_entropy(clf.logits_tensor(te.x_h[idx], te.x_p[idx]),
                                                        te.labels[idx]), tensors, rng, 10))
    results["classifier"] = _worst(errs)

    ok = all(w < 1e-4 and n >= 20 for w, n in results.values())
    detail = ", ".join(f"{k} max rel err {w:.1e} over {n} configs" for k, (w, n) in results.items())
    assert record_criterion("3", "finite-difference gradients", ok, detail)


# ---------------------------------------------------------------- 4


def test_criterion_4_diffusion_math():
    s = build_linear_schedule()
    rec = float(np.max(np.abs(s.alpha_hat[1:] - s.alpha_hat[:-1] * s.alphas[1:])))
    worst_z = 0.0
    for t in (1, 250, 500, 1000):
        rng = np.random.default_rng(t)
        n = 100_000
        x0 = np.linspace(-1.0, 1.0, 4)
        xt = q_sample(np.broadcast_to(x0, (n, 4)), np.full(n, t), rng.standard_normal((n, 4)), s)
        ah = s.alpha_hat[t]
        z_mean = np.abs(xt.mean(axis=0) - np.sqrt(ah) * x0) / np.sqrt((1 - ah) / n)
        z_var = np.abs(xt.var(axis=0, ddof=1) - (1 - ah)) / ((1 - ah) * np.sqrt(2.0 / (n - 1)))
        worst_z = max(worst_z, float(z_mean.max()), float(z_var.max()))
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=(8, PARAM_DIM))
    x = q_sample(x0, 1000, rng.normal(size=x0.shape), s)
    ts = sample_timesteps(1000, 1)
    for k, t in enumerate(ts):
        eps = (x - np.sqrt(s.alpha_hat[t]) * x0) / np.sqrt(1 - s.alpha_hat[t])
        x = ddim_step(x, predict_x0(x, t, eps, s), t, s, ts[k + 1] if k + 1 < len(ts) else 0)
    roundtrip = float(np.max(np.abs(x - x0)))
    ok = rec <= 1e-15 and worst_z < 4.0 and roundtrip < 1e-8
    assert record_criterion("4", "diffusion math", ok,
                            f"recursion err {rec:.1e}, worst moment z {worst_z:.2f} (<4), "
                            f"oracle roundtrip {roundtrip:.1e}")


# ---------------------------------------------------------------- 5


def test_criterion_5_frechet_oracles(run):
    root, _ = run
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 65))
        m1, m2 = rng.normal(size=d), rng.normal(size=d)
        v1, v2 = rng.uniform(0.01, 4.0, d), rng.uniform(0.01, 4.0, d)
        closed = sum((m1[k] - m2[k]) ** 2 + (np.sqrt(v1[k]) - np.sqrt(v2[k])) ** 2 for k in range(d))
        got = frechet_distance(GaussianStats(m1, np.diag(v1), 10), GaussianStats(m2, np.diag(v2), 10))
        worst = max(worst, abs(got - closed))
    clf = FeatureClassifier.load(root / "models" / "classifier.bin")
    te = load_split(root / "data", "test")
    self_d = []
    for seed in range(5):
        idx = np.random.default_rng(seed).choice(len(te), 200, replace=False)
        self_d.append(fhid(te.x_h[idx], te.x_p[idx], te.x_h[idx], te.x_p[idx], clf))
    ok = worst < 1e-9 and max(self_d) < 1e-9
    assert record_criterion("5", "Frechet oracles", ok,
                            f"closed-form err {worst:.1e}, max fhid(S,S) {max(self_d):.1e} over 5 sets")


# ---------------------------------------------------------------- 6


def _brute_nearest(a, b):
    out = []
    for p in a:
        best = np.inf
        for q in b:
            best = min(best, float(np.sum((p - q) ** 2)))
        out.append(best)
    return np.array(out)


def test_criterion_6_geometry_oracles(run):
    root, _ = run
    rng = np.random.default_rng(6)
    chamfer_ok = True
    for _ in range(100):
        a = rng.normal(size=(int(rng.integers(1, 201)), 3))
        b = rng.normal(size=(int(rng.integers(1, 201)), 3))
        ab, ba = _brute_nearest(a, b), _brute_nearest(b, a)
        chamfer_ok &= chamfer_unidirectional(a, b) == float(np.mean(ab))
        chamfer_ok &= chamfer(a, b) == float(np.mean(ab) + np.mean(ba))
    region_ok = True
    for _ in range(100):
        xa, xb = 0.4 * rng.normal(size=(2, PARAM_DIM))
        xb[:3] += rng.normal(scale=0.3, size=3)
        ba, bb = pose(xa), pose(xb)
        i, j = rng.integers(0, TREE.n_reg, 2)
        region_ok &= region_min_distance(ba, i, bb, j) == np.sqrt(
            _brute_nearest(ba.region_vertices(i), bb.region_vertices(j)).min())
    te = load_split(root / "data", "test")
    nc_ok = True
    for k in range(10):
        bh, bp = pose(te.x_h[k]), pose(te.x_p[k])
        outside = 0
        for v in bh.vertex_array[0]:
            inside = False
            for c in range(TREE.num_capsules):
                a, b = bp.seg_start[0, c], bp.seg_end[0, c]
                t = np.clip(np.dot(v - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
                if np.linalg.norm(v - (a + t * (b - a))) - TREE.radii[c] <= 0:
                    inside = True
                    break
            outside += not inside
        nc_ok &= non_collision_scores(te.x_h[k], te.x_p[k])[0] == 100.0 * outside / TREE.num_vertices
    ok = bool(chamfer_ok and region_ok and nc_ok)
    assert record_criterion("6", "Chamfer/SDF oracles", ok,
                            f"chamfer exact on 100={bool(chamfer_ok)}, region_min_distance exact on 100="
                            f"{bool(region_ok)}, non-collision recount exact on 10 test pairs={bool(nc_ok)}")


# ---------------------------------------------------------------- 7


def test_criterion_7_contact_pipeline(run):
    root, _ = run
    te = load_split(root / "data", "test")
    tr = load_split(root / "data", "train")
    pred = ContactPredictor.load(root / "models" / "contact.bin")
    prob = predict_contact_map(pose(te.x_h), pose(te.x_p), te.labels, pred)
    f1 = f1_score(prob >= 0.5, te.contacts > 0.5)
    tau_ok = all(threshold_contacts(prob[k], 0.5) == {(i, j) for i in range(16) for j in range(16)
                                                       if prob[k, i, j] >= 0.5} for k in range(len(te)))
    base = _samples(tr)[:1000]
    involution = all(np.array_equal(mirror_augment(mirror_augment(s)).x_h, s.x_h)
                     and np.array_equal(mirror_augment(mirror_augment(s)).x_p, s.x_p)
                     and np.array_equal(mirror_augment(mirror_augment(s)).contacts, s.contacts) for s in base)
    preserved = validate_dataset(Dataset.from_samples([mirror_augment(s) for s in base])) == []
    ok = f1 >= 0.8 and tau_ok and involution and preserved and len(base) == 1000
    assert record_criterion("7", "contact pipeline", ok,
                            f"held-out F1 {f1:.3f} (>=0.8), tau=0.5 sets exact={tau_ok}, "
                            f"mirror involution={involution} and contact preserved={preserved} on {len(base)}")


def _samples(ds: Dataset):
    from contactdiff.data import InteractionSample

    return [InteractionSample(ds.x_p[k], ds.x_h[k], int(ds.labels[k]), ds.contacts[k], 0, int(ds.index[k]),
                              bool(ds.mirrored[k])) for k in range(len(ds))]


# ---------------------------------------------------------------- 8


def test_criterion_8_classifier(run):
    root, _ = run
    te = load_split(root / "data", "test")
    tr = load_split(root / "data", "train")
    clf = FeatureClassifier.load(root / "models" / "classifier.bin")
    acc = top1_accuracy(clf, te.x_h, te.x_p, te.labels)
    cfg = dataclasses.replace(RunConfig().networks.classifier, seed=8)
    shuffled = train_classifier(tr.x_h, tr.x_p, np.random.default_rng(8).permutation(tr.labels), cfg,
                                log_every=0)
    chance = top1_accuracy(shuffled, te.x_h, te.x_p, te.labels)
    sigma = 100.0 * np.sqrt(0.125 * 0.875 / len(te))
    ok = acc >= 90.0 and abs(chance - 12.5) <= 3 * sigma
    assert record_criterion("8", "classifier", ok,
                            f"held-out top-1 {acc:.2f}% (>=90), shuffled-label top-1 {chance:.2f}% "
                            f"(12.5 +- {3 * sigma:.2f})")


# ---------------------------------------------------------------- 9


SMALL = {
    "data": {"count": 44, "seed": 1},
    "diffusion": {"T": 100, "stride": 5},
    "networks": {
        "denoiser": {"hidden": 32, "blocks": 2, "time_dim": 16, "label_dim": 8, "partner_dim": 16},
        "denoiser_train": {"steps": 50, "batch_size": 16, "log_every": 0},
        "contact": {"width": 16, "heads": 2, "blocks": 1, "steps": 30, "batch_size": 16},
        "classifier": {"hidden": 16, "features": 8, "steps": 30, "batch_size": 16},
    },
    "sampling": {"count": 8, "split": "train"},
}
ALL_COMMANDS = [
    ["gen-data"], ["validate-data"], ["train-diffusion"], ["train-contact"], ["train-classifier"],
    ["sample"], ["sample", "--unguided"], ["evaluate"], ["export", "--format", "obj"],
    ["export", "--format", "json"], ["selftest"],
]


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_cli_determinism(run, tmp_path, monkeypatch):
    root, _ = run
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(SMALL))
    snapshots = []
    for rep in ("a", "b"):
        monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / rep))
        for cmd in ALL_COMMANDS:
            assert main(["--quiet", "--config", str(cfg), *cmd]) == 0, cmd
        snapshots.append(_tree_bytes(tmp_path / rep))
    small_ok = snapshots[0] == snapshots[1]
    # the documented example on the full-size models
    monkeypatch.setenv(OUT_DIR_ENV, str(root))
    blobs = []
    for rep in ("x", "y"):
        cli("sample", *HANDSHAKE_EXAMPLE, "--name", f"repeat_{rep}")
        blobs.append((root / "samples" / f"repeat_{rep}.bin").read_bytes())
    full_ok = blobs[0] == blobs[1]
    ok = small_ok and full_ok
    assert record_criterion("9", "CLI determinism", ok,
                            f"{len(ALL_COMMANDS)} commands, {len(snapshots[0])} artifacts byte-identical="
                            f"{small_ok}; full-size 'sample {' '.join(HANDSHAKE_EXAMPLE)}' repeat identical={full_ok}")
