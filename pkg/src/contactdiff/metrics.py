"""Evaluation: feature classifier, Frechet distance on its features, top-1, contact and non-collision scores."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ParameterStore, Tensor
from .body import DEFAULT_TREE, PARAM_DIM, KinematicTree, capsule_sdf, pairwise_sq_dists, pose
from .serialization import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

NUM_LABELS = 8
REGION_FREQUENCY = 0.2
EIG_NEG_WARN = -1e-10


# ---------------------------------------------------------------- classifier


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: int = 128
    features: int = 64
    num_labels: int = NUM_LABELS
    seed: int = 0
    lr: float = 2e-3
    steps: int = 1500
    batch_size: int = 128


class FeatureClassifier:
    """MLP on concat(x_p, x_h); the penultimate activations are the evaluation features."""

    def __init__(self, config: ClassifierConfig = ClassifierConfig()):
        self.config = config
        self.store = ParameterStore()
        rng = np.random.default_rng(config.seed)
        nn.init_linear(self.store, "fc1", 2 * PARAM_DIM, config.hidden, rng)
        nn.init_linear(self.store, "fc2", config.hidden, config.features, rng)
        nn.init_linear(self.store, "cls", config.features, config.num_labels, rng)
        self.mean = np.zeros(2 * PARAM_DIM)
        self.std = np.ones(2 * PARAM_DIM)

    def _inputs(self, x_h, x_p) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(x_p), np.atleast_2d(x_h)], axis=-1)
        if x.shape[-1] != 2 * PARAM_DIM:
            raise ad.ShapeError(f"classifier expects {2 * PARAM_DIM} inputs, got {x.shape[-1]}")
        return (x - self.mean) / self.std

    def _features(self, z) -> Tensor:
        h = ad.gelu(nn.linear(self.store, "fc1", z))
        return ad.gelu(nn.linear(self.store, "fc2", h))

    def logits_tensor(self, x_h, x_p) -> Tensor:
        return nn.linear(self.store, "cls", self._features(self._inputs(x_h, x_p)))

    def features(self, x_h, x_p) -> np.ndarray:
        with ad.no_grad():
            return self._features(self._inputs(x_h, x_p)).data

    def logits(self, x_h, x_p) -> np.ndarray:
        with ad.no_grad():
            return self.logits_tensor(x_h, x_p).data

    def predict(self, x_h, x_p) -> np.ndarray:
        return np.argmax(self.logits(x_h, x_p), axis=-1)

    def save(self, path, extra: dict | None = None) -> None:
        arrays = dict(self.store.arrays())
        arrays["input.mean"] = self.mean
        arrays["input.std"] = self.std
        meta = {"kind": "classifier", "config": asdict(self.config)}
        meta.update(extra or {})
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "FeatureClassifier":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "classifier":
            raise ValueError(f"{path} is not a classifier checkpoint")
        model = cls(ClassifierConfig(**meta["config"]))
        model.mean = arrays.pop("input.mean")
        model.std = arrays.pop("input.std")
        model.store.load_arrays(arrays)
        return model


def train_classifier(x_h, x_p, labels, config: ClassifierConfig = ClassifierConfig(),
                     log_every: int = 500) -> FeatureClassifier:
    n = len(x_h)
    if n == 0:
        raise ValueError("cannot train the classifier on an empty dataset")
    labels = np.asarray(labels, dtype=np.int64)
    model = FeatureClassifier(config)
    x = np.concatenate([x_p, x_h], axis=-1)
    model.mean = x.mean(axis=0)
    model.std = np.maximum(x.std(axis=0), 1e-3)
    rng = np.random.default_rng(config.seed + 1)
    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch_size, n))
        lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * step / config.steps))
        with ad.fresh_tape() as tape:
            loss = nn.cross_entropy(model.logits_tensor(x_h[idx], x_p[idx]), labels[idx])
            tape.backward(loss)
        ad.adam_step(model.store, lr)
        if log_every and (step + 1) % log_every == 0:
            log.info("classifier step=%d loss=%.4f", step + 1, float(loss.data))
    return model


def top1_accuracy(classifier: FeatureClassifier, x_h, x_p, labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        return 0.0
    return 100.0 * float(np.mean(classifier.predict(x_h, x_p) == labels))


# ---------------------------------------------------------------- Frechet distance


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def fit_gaussian(features) -> GaussianStats:
    f = np.asarray(features, dtype=float)
    if f.ndim != 2 or len(f) < 2:
        raise ValueError(f"need at least 2 feature vectors, got shape {f.shape}")
    mu = f.mean(axis=0)
    c = f - mu
    cov = c.T @ c / (len(f) - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T), len(f))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    m = 0.5 * (m + m.T)
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition did not converge: {exc}") from exc
    if w.min() < EIG_NEG_WARN * max(1.0, abs(w).max()):
        warnings.warn(f"clipping negative eigenvalue {w.min():.3e} in covariance square root")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    if g1.mean.shape != g2.mean.shape:
        raise ValueError(f"feature dimensions differ: {g1.mean.shape} vs {g2.mean.shape}")
    diff = g1.mean - g2.mean
    s1 = _psd_sqrt(g1.cov)
    cross = _psd_sqrt(s1 @ g2.cov @ s1)
    value = float(diff @ diff + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def fhid(gen_h, gen_p, ref_h, ref_p, classifier: FeatureClassifier) -> float:
    """Frechet distance between classifier features of generated and reference pairs."""
    return frechet_distance(fit_gaussian(classifier.features(gen_h, gen_p)),
                            fit_gaussian(classifier.features(ref_h, ref_p)))


# ---------------------------------------------------------------- contact statistics


@dataclass
class RegionStats:
    """Per label, the region pairs in contact in at least ``threshold`` of training samples."""

    threshold: float
    frequency: np.ndarray  # (L, R, R)
    pairs: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    def regions(self, label: int) -> tuple[np.ndarray, np.ndarray]:
        pairs = self.pairs.get(int(label), [])
        if not pairs:
            raise ValueError(f"label {label} has no potential contact regions; rebuild region stats")
        rows = np.array(sorted({i for i, _ in pairs}))
        cols = np.array(sorted({j for _, j in pairs}))
        return rows, cols

    def to_dict(self) -> dict:
        return {"threshold": self.threshold,
                "pairs": {str(k): [list(p) for p in v] for k, v in sorted(self.pairs.items())}}


def region_stats(contacts, labels, threshold: float = REGION_FREQUENCY,
                 num_labels: int = NUM_LABELS) -> RegionStats:
    contacts = np.asarray(contacts, dtype=float)
    labels = np.asarray(labels)
    R = contacts.shape[-1]
    freq = np.zeros((num_labels, R, R))
    pairs = {}
    for lab in range(num_labels):
        sel = labels == lab
        if not np.any(sel):
            pairs[lab] = []
            continue
        freq[lab] = contacts[sel].mean(axis=0)
        ii, jj = np.nonzero(freq[lab] >= threshold)
        pairs[lab] = [(int(i), int(j)) for i, j in zip(ii, jj)]
    return RegionStats(threshold, freq, pairs)


def contact_scores(x_h, x_p, labels, stats: RegionStats, tree: KinematicTree = DEFAULT_TREE) -> np.ndarray:
    """Per-sample unidirectional squared Chamfer from the interactive body's potential contact
    regions for that label to the whole partner surface."""
    x_h = np.atleast_2d(x_h)
    x_p = np.atleast_2d(x_p)
    labels = np.broadcast_to(np.asarray(labels), (len(x_h),))
    bh, bp = pose(x_h, tree), pose(x_p, tree)
    vp = bp.vertex_array
    out = np.empty(len(x_h))
    for k in range(len(x_h)):
        rows, _ = stats.regions(labels[k])
        a = bh.vertices.data[k, rows].reshape(-1, 3)
        d2 = pairwise_sq_dists(a, vp[k])
        out[k] = np.mean(np.min(d2, axis=1))
    return out


def contact_score(x_h, x_p, label, stats: RegionStats, tree: KinematicTree = DEFAULT_TREE) -> float:
    return float(contact_scores(x_h, x_p, [label], stats, tree)[0])


def non_collision_scores(x_h, x_p, tree: KinematicTree = DEFAULT_TREE) -> np.ndarray:
    """Percentage of interactive-body vertices outside every partner capsule, per sample."""
    x_h = np.atleast_2d(x_h)
    x_p = np.atleast_2d(x_p)
    bh, bp = pose(x_h, tree), pose(x_p, tree)
    sdf = capsule_sdf(bh.vertex_array, bp)
    return 100.0 * np.mean(sdf > 0, axis=-1)


def non_collision_score(x_h, x_p, tree: KinematicTree = DEFAULT_TREE) -> float:
    return float(non_collision_scores(x_h, x_p, tree)[0])


# ---------------------------------------------------------------- report


REPORT_COLUMNS = ("fhid", "top1", "contact", "non_collision")


@dataclass
class MetricsReport:
    rows: dict[str, dict[str, float]]
    label_names: list[str]

    def to_dict(self) -> dict:
        return {"columns": list(REPORT_COLUMNS), "rows": self.rows}

    def table(self) -> str:
        head = f"{'label':<14}{'FHID':>10}{'top-1 %':>10}{'contact':>12}{'non-col %':>11}"
        lines = [head, "-" * len(head)]
        for name in list(self.label_names) + ["All"]:
            r = self.rows[name]
            lines.append(f"{name:<14}{r['fhid']:>10.4f}{r['top1']:>10.2f}{r['contact']:>12.6f}"
                         f"{r['non_collision']:>11.2f}")
        return "\n".join(lines)


def evaluate(gen_h, gen_p, gen_labels, ref_h, ref_p, ref_labels, classifier: FeatureClassifier,
             stats: RegionStats, label_names, tree: KinematicTree = DEFAULT_TREE) -> MetricsReport:
    """Per-label and overall scores of generated samples against a reference set."""
    gen_h, gen_p = np.atleast_2d(gen_h), np.atleast_2d(gen_p)
    gen_labels = np.asarray(gen_labels)
    ref_labels = np.asarray(ref_labels)
    gf = classifier.features(gen_h, gen_p)
    rf = classifier.features(ref_h, ref_p)
    pred = classifier.predict(gen_h, gen_p)
    cs = contact_scores(gen_h, gen_p, gen_labels, stats, tree)
    nc = non_collision_scores(gen_h, gen_p, tree)

    def row(gsel, rsel):
        if gsel.sum() >= 2 and rsel.sum() >= 2:
            fd = frechet_distance(fit_gaussian(gf[gsel]), fit_gaussian(rf[rsel]))
        else:
            fd = float("nan")
        if not gsel.any():
            return {"fhid": fd, "top1": float("nan"), "contact": float("nan"), "non_collision": float("nan")}
        return {"fhid": fd, "top1": 100.0 * float(np.mean(pred[gsel] == gen_labels[gsel])),
                "contact": float(np.mean(cs[gsel])), "non_collision": float(np.mean(nc[gsel]))}

    rows = {}
    for lab, name in enumerate(label_names):
        rows[name] = row(gen_labels == lab, ref_labels == lab)
    rows["All"] = row(np.ones(len(gen_labels), bool), np.ones(len(ref_labels), bool))
    return MetricsReport(rows, list(label_names))
