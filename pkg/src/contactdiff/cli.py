"""Command-line front end.

Every command reads a RunConfig (``--config``, defaults otherwise), applies flag
overrides, and writes its artifacts under the run directory:

    data/       train.bin test.bin manifest.json
    models/     denoiser.bin contact.bin classifier.bin (+ .json sidecars)
    samples/    <name>.bin + <name>.bin.json
    eval/       <name>.json <name>.txt
    export/     <name>/sample_NNN.{obj,json}

The run directory comes from the config (``paths.out_dir``) unless the
``CONTACTDIFF_OUT_DIR`` environment variable is set.

Exit codes: 0 ok, 1 usage, 2 validation failure, 3 numerical failure.  Failures
print a single ``contactdiff: error kind=<kind> reason=<text>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .body import obj_lines, pose
from .config import ConfigError, RunConfig, load_config, override, resolve_out_dir
from .contact import (ContactPredictor, f1_score, ground_truth_contacts, predict_contact_map,
                      threshold_contacts, train_contact_predictor)
from .data import (LABEL_NAMES, Dataset, InteractionLabel, build_dataset, load_manifest, load_split,
                   save_dataset, validate_dataset)
from .denoiser import Denoiser
from .diffusion import SampleTrace, guided_sample, sample_seeds, train
from .metrics import (FeatureClassifier, contact_scores, evaluate, non_collision_scores, region_stats,
                      top1_accuracy, train_classifier)
from .serialization import (BlobFormatError, atomic_write_text, dumps_json, read_blob, read_json,
                            write_blob, write_json)

log = logging.getLogger("contactdiff")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- paths


def _paths(cfg: RunConfig) -> dict[str, Path]:
    root = Path(cfg.paths.out_dir)
    return {"root": root, "data": root / "data", "models": root / "models", "samples": root / "samples",
            "eval": root / "eval", "export": root / "export"}


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ValidationFailure(f"missing {what}: {path}")
    return path


def _check_finite(name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"non-finite values in {name}")


def _load_split(cfg: RunConfig, split: str) -> Dataset:
    path = _require(_paths(cfg)["data"] / f"{split}.bin", f"{split} split (run gen-data first)")
    try:
        return load_split(path.parent, split)
    except BlobFormatError as exc:
        raise ValidationFailure(f"{path}: {exc}") from exc


def _meta(cfg: RunConfig, **extra) -> dict:
    out = {"config_hash": cfg.hash(), "version": __version__}
    out.update(extra)
    return out


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: RunConfig, args) -> int:
    cfg = override(cfg, "data", count=args.count, seed=args.seed)
    tree = cfg.body.tree()
    t0 = time.perf_counter()
    train_ds, test_ds, manifest = build_dataset(cfg.data, tree)
    manifest["run_config_hash"] = cfg.hash()
    save_dataset(_paths(cfg)["data"], train_ds, test_ds, manifest)
    log.info("event=gen-data train=%d test=%d seconds=%.1f", len(train_ds),
             len(test_ds) if test_ds is not None else 0, time.perf_counter() - t0)
    return EXIT_OK


def _dataset_from_export(path: Path) -> Dataset:
    doc = read_json(path)
    try:
        return Dataset(np.array([doc["x_p"]], dtype=float), np.array([doc["x_h"]], dtype=float),
                       np.array([InteractionLabel.parse(doc["label"])], dtype=np.int64),
                       np.array([doc["contact_map"]], dtype=float), np.zeros(1, dtype=np.int64),
                       np.zeros(1, dtype=bool))
    except (KeyError, ValueError) as exc:
        raise ValidationFailure(f"{path}: not an exported sample ({exc})") from exc


def cmd_validate_data(cfg: RunConfig, args) -> int:
    tree = cfg.body.tree()
    problems = []
    if args.file:
        for f in args.file:
            ds = _dataset_from_export(_require(Path(f), "export file"))
            problems += [f"{f}: {p}" for p in validate_dataset(ds, tree, cfg.data.delta, require_contact=False)]
    else:
        data_dir = Path(args.data) if args.data else _paths(cfg)["data"]
        _require(data_dir / "manifest.json", "dataset manifest")
        manifest = load_manifest(data_dir)
        for split in ("train", "test"):
            if not (data_dir / f"{split}.bin").exists():
                continue
            ds = load_split(data_dir, split)
            if len(ds) != manifest["counts"][split]:
                problems.append(f"{split}: {len(ds)} samples, manifest says {manifest['counts'][split]}")
            if ds.fingerprint() != manifest["fingerprint"][split]:
                problems.append(f"{split}: fingerprint mismatch")
            problems += [f"{split}: {p}" for p in validate_dataset(ds, tree, manifest["config"]["delta"])]
    for p in problems[:20]:
        log.warning("problem %s", p)
    if problems:
        raise ValidationFailure(f"{len(problems)} problem(s); first: {problems[0]}")
    log.info("event=validate-data status=ok")
    return EXIT_OK


def cmd_train_diffusion(cfg: RunConfig, args) -> int:
    cfg = override(cfg, "networks.denoiser_train", steps=args.steps, seed=args.seed)
    ds = _load_split(cfg, "train")
    model = Denoiser(cfg.networks.denoiser)
    sched = cfg.diffusion.schedule()
    path = _paths(cfg)["models"] / "denoiser.bin"
    meta = _meta(cfg, dataset=ds.fingerprint())
    stats = train(ds.x_h, ds.x_p, ds.labels, model, sched, cfg.networks.denoiser_train,
                  checkpoint_path=path, meta=meta)
    _check_finite("denoiser loss", stats.losses)
    model.save(path, dict(meta, final_loss=float(np.mean(stats.losses[-100:])),
                          epoch_losses=stats.epoch_losses,
                          masked={"draws": stats.draws, "partner": stats.partner_masked,
                                  "label": stats.label_masked}))
    log.info("event=train-diffusion steps=%d loss=%.5f", len(stats.losses), float(np.mean(stats.losses[-100:])))
    return EXIT_OK


def cmd_train_contact(cfg: RunConfig, args) -> int:
    cfg = override(cfg, "networks.contact", steps=args.steps, seed=args.seed)
    ds = _load_split(cfg, "train")
    tree = cfg.body.tree()
    trace = []
    model = train_contact_predictor(ds.x_h, ds.x_p, ds.labels, ds.contacts, cfg.networks.contact, tree,
                                    loss_trace=trace)
    _check_finite("contact loss", trace)
    extra = _meta(cfg, dataset=ds.fingerprint(), final_loss=float(np.mean(trace[-100:])))
    test_path = _paths(cfg)["data"] / "test.bin"
    if test_path.exists():
        te = load_split(test_path.parent, "test")
        prob = predict_contact_map(pose(te.x_h, tree), pose(te.x_p, tree), te.labels, model)
        extra["test_f1"] = f1_score(prob >= model.config.tau, te.contacts > 0.5)
        log.info("event=train-contact test_f1=%.4f", extra["test_f1"])
    model.save(_paths(cfg)["models"] / "contact.bin", extra)
    return EXIT_OK


def cmd_train_classifier(cfg: RunConfig, args) -> int:
    cfg = override(cfg, "networks.classifier", steps=args.steps, seed=args.seed)
    ds = _load_split(cfg, "train")
    model = train_classifier(ds.x_h, ds.x_p, ds.labels, cfg.networks.classifier)
    extra = _meta(cfg, dataset=ds.fingerprint())
    test_path = _paths(cfg)["data"] / "test.bin"
    if test_path.exists():
        te = load_split(test_path.parent, "test")
        extra["test_top1"] = top1_accuracy(model, te.x_h, te.x_p, te.labels)
        log.info("event=train-classifier test_top1=%.2f", extra["test_top1"])
    model.save(_paths(cfg)["models"] / "classifier.bin", extra)
    return EXIT_OK


def _parse_lambda(values) -> tuple[float, float, float, float] | None:
    if values is None:
        return None
    if len(values) == 1:
        return (values[0],) * 4
    if len(values) == 4:
        return tuple(values)
    raise UsageError("--lambda takes 1 or 4 values")


def _sample_inputs(cfg: RunConfig, label: str | None, count: int) -> tuple[np.ndarray, np.ndarray]:
    ds = _load_split(cfg, cfg.sampling.split)
    if label is not None:
        try:
            lab = int(InteractionLabel.parse(label))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        ds = ds.subset(ds.labels == lab)
        if len(ds) == 0:
            raise ValidationFailure(f"no {cfg.sampling.split} partners with label {label}")
    idx = np.arange(count) % len(ds)
    return ds.x_p[idx], ds.labels[idx]


def cmd_sample(cfg: RunConfig, args) -> int:
    cfg = override(cfg, "sampling", count=args.count, seed=args.seed)
    cfg = override(cfg, "guidance", lam=_parse_lambda(args.lam), s_p=args.s_p, s_l=args.s_l)
    cfg = override(cfg, "diffusion", stride=args.stride)
    paths = _paths(cfg)
    tree = cfg.body.tree()
    denoiser, _ = Denoiser.load(_require(paths["models"] / "denoiser.bin", "denoiser checkpoint"))
    predictor = None
    if not args.unguided:
        predictor = ContactPredictor.load(_require(paths["models"] / "contact.bin", "contact checkpoint"))
    x_p, labels = _sample_inputs(cfg, args.label, cfg.sampling.count)
    x_T = sample_seeds(cfg.sampling.seed, cfg.sampling.count)
    trace = SampleTrace()
    g = cfg.guidance
    x_h = guided_sample(x_p, labels, denoiser, cfg.diffusion.schedule(), predictor, g.guidance(),
                        x_T=x_T, stride=cfg.diffusion.stride, s_p=g.s_p, s_l=g.s_l, tree=tree, trace=trace)
    _check_finite("samples", x_h)
    name = args.name or ("unguided" if args.unguided else "guided")
    meta = _meta(cfg, guided=predictor is not None, lam=list(g.lam), seed=cfg.sampling.seed,
                 count=cfg.sampling.count, label=args.label, stride=cfg.diffusion.stride,
                 guidance_evals=trace.guidance_evals, steps=trace.steps)
    write_blob(paths["samples"] / f"{name}.bin", {"x_h": x_h, "x_p": x_p, "labels": labels.astype(float),
                                                  "x_T": x_T})
    write_json(paths["samples"] / f"{name}.bin.json", meta)
    log.info("event=sample name=%s count=%d guided=%s", name, len(x_h), predictor is not None)
    return EXIT_OK


def _load_samples(cfg: RunConfig, name: str):
    path = _require(_paths(cfg)["samples"] / f"{name}.bin", f"samples {name!r}")
    a = read_blob(path)
    return a["x_h"], a["x_p"], a["labels"].astype(np.int64)


def cmd_evaluate(cfg: RunConfig, args) -> int:
    paths = _paths(cfg)
    tree = cfg.body.tree()
    clf = FeatureClassifier.load(_require(paths["models"] / "classifier.bin", "classifier checkpoint"))
    train_ds = _load_split(cfg, "train")
    ref = _load_split(cfg, "test")
    stats = region_stats(train_ds.contacts, train_ds.labels)
    x_h, x_p, labels = _load_samples(cfg, args.samples)
    report = evaluate(x_h, x_p, labels, ref.x_h, ref.x_p, ref.labels, clf, stats, LABEL_NAMES, tree)
    doc = dict(report.to_dict(), **_meta(cfg, samples=args.samples, region_pairs=stats.to_dict()))
    write_json(paths["eval"] / f"{args.samples}.json", doc)
    atomic_write_text(paths["eval"] / f"{args.samples}.txt", report.table() + "\n")
    print(report.table())
    return EXIT_OK


def cmd_export(cfg: RunConfig, args) -> int:
    paths = _paths(cfg)
    tree = cfg.body.tree()
    x_h, x_p, labels = _load_samples(cfg, args.samples)
    n = len(x_h) if args.limit is None else min(args.limit, len(x_h))
    x_h, x_p, labels = x_h[:n], x_p[:n], labels[:n]
    bh, bp = pose(x_h, tree), pose(x_p, tree)
    geo = ground_truth_contacts(bh, bp, cfg.data.delta)
    prob = None
    cpath = paths["models"] / "contact.bin"
    if cpath.exists():
        prob = predict_contact_map(bh, bp, labels, ContactPredictor.load(cpath))
    scores = None
    train_path = paths["data"] / "train.bin"
    if train_path.exists():
        tr = load_split(train_path.parent, "train")
        scores = contact_scores(x_h, x_p, labels, region_stats(tr.contacts, tr.labels), tree)
    noncol = non_collision_scores(x_h, x_p, tree)
    out = paths["export"] / args.samples
    for k in range(n):
        stem = out / f"sample_{k:03d}"
        annotations = {"label": LABEL_NAMES[labels[k]], "non_collision": float(noncol[k])}
        if scores is not None:
            annotations["contact_score"] = float(scores[k])
        pairs = None
        if prob is not None:
            pairs = [list(p) for p in sorted(threshold_contacts(prob[k], cfg.guidance.tau))]
        geo_pairs = [list(map(int, p)) for p in np.argwhere(geo[k] > 0)]
        if args.format == "obj":
            lines = [f"# contactdiff sample {k} config {cfg.hash()}",
                     f"# annotations {json.dumps(annotations, sort_keys=True)}",
                     f"# predicted_pairs {json.dumps(pairs)}", f"# geometric_pairs {json.dumps(geo_pairs)}"]
            lines += obj_lines(bh, k, "interactive") + obj_lines(bp, k, "partner")
            atomic_write_text(stem.with_suffix(".obj"), "\n".join(lines) + "\n")
        else:
            doc = {"config_hash": cfg.hash(), "label": LABEL_NAMES[labels[k]],
                   "x_h": x_h[k].tolist(), "x_p": x_p[k].tolist(),
                   "region_names": list(tree.region_names), "region_ids": tree.region_ids.tolist(),
                   "interactive_vertices": bh.vertex_array[k].tolist(),
                   "partner_vertices": bp.vertex_array[k].tolist(),
                   "contact_map": geo[k].tolist(), "geometric_pairs": geo_pairs,
                   "predicted_pairs": pairs, "annotations": annotations}
            atomic_write_text(stem.with_suffix(".json"), dumps_json(doc) + "\n")
    log.info("event=export samples=%s count=%d format=%s", args.samples, n, args.format)
    return EXIT_OK


def cmd_selftest(cfg: RunConfig, args) -> int:
    from .selftest import run_checks

    failures = run_checks(log)
    if failures:
        raise ValidationFailure(f"{len(failures)} self-check(s) failed: {', '.join(failures)}")
    log.info("event=selftest status=ok")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="contactdiff", description="Contact-guided diffusion toy benchmark.")
    p.add_argument("--config", help="RunConfig JSON (defaults if omitted)")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-data", help="synthesize the interaction dataset")
    s.add_argument("--count", type=int)
    s.add_argument("--seed", type=int)

    s = sub.add_parser("validate-data", help="re-check stored contacts against geometry")
    s.add_argument("--data", help="dataset directory (default: run data dir)")
    s.add_argument("--file", nargs="+", help="exported sample JSON files instead of a dataset")

    for name, help_ in (("train-diffusion", "train the denoiser"), ("train-contact", "train the contact predictor"),
                        ("train-classifier", "train the evaluation classifier")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--steps", type=int)
        s.add_argument("--seed", type=int)

    s = sub.add_parser("sample", help="generate interactive bodies for test partners")
    s.add_argument("--label")
    s.add_argument("--count", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--lambda", dest="lam", type=float, nargs="+", help="guidance scale: 1 value or 4 per segment")
    s.add_argument("--unguided", action="store_true", help="skip the contact objective entirely")
    s.add_argument("--stride", type=int)
    s.add_argument("--s-p", dest="s_p", type=float)
    s.add_argument("--s-l", dest="s_l", type=float)
    s.add_argument("--name", help="output name (default guided/unguided)")

    s = sub.add_parser("evaluate", help="score a sample set against the test split")
    s.add_argument("--samples", default="guided")

    s = sub.add_parser("export", help="write samples as OBJ or JSON files")
    s.add_argument("--samples", default="guided")
    s.add_argument("--format", choices=("obj", "json"), default="json")
    s.add_argument("--limit", type=int)

    sub.add_parser("selftest", help="run the built-in invariant checks")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data, "validate-data": cmd_validate_data, "train-diffusion": cmd_train_diffusion,
    "train-contact": cmd_train_contact, "train-classifier": cmd_train_classifier, "sample": cmd_sample,
    "evaluate": cmd_evaluate, "export": cmd_export, "selftest": cmd_selftest,
}


def _fail(kind: str, reason: str, code: int) -> int:
    reason = " ".join(str(reason).split())
    print(f"contactdiff: error kind={kind} reason={reason}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="level=%(levelname)s logger=%(name)s %(message)s", force=True)
    try:
        cfg = load_config(args.config)
        cfg = override(cfg, "paths", out_dir=str(resolve_out_dir(cfg)))
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (ValidationFailure, ConfigError, BlobFormatError) as exc:
        return _fail("validation", exc, EXIT_VALIDATION)
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail("numerical", exc, EXIT_NUMERIC)
    except OSError as exc:
        return _fail("validation", exc, EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
