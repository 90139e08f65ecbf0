"""Contact objective over predicted region pairs and its gradient as sampling guidance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .body import DEFAULT_TREE, PARAM_DIM, SEGMENTS, KinematicTree, PosedBody, forward_kinematics, pose
from .contact import ContactPredictor, predict_contact_map


@dataclass(frozen=True)
class GuidanceConfig:
    # one scale per parameter segment: translation, root rotation, body pose, hand pose
    lam: tuple[float, float, float, float] = (0.02, 0.005, 0.02, 0.02)
    tau: float = 0.5
    inner_iters: int = 1

    def __post_init__(self):
        if len(self.lam) != len(SEGMENTS):
            raise ValueError(f"lam needs {len(SEGMENTS)} entries, got {len(self.lam)}")
        if any(not np.isfinite(v) or v < 0 for v in self.lam):
            raise ValueError("lam entries must be finite and non-negative")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")

    def scale_vector(self) -> np.ndarray:
        return lambda_vector(self.lam)


def lambda_vector(lam: Sequence[float]) -> np.ndarray:
    out = np.empty(PARAM_DIM)
    for (lo, hi), v in zip(SEGMENTS, lam):
        out[lo:hi] = v
    return out


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3 or len(a) == 0:
        raise ValueError(f"chamfer needs a non-empty (n, 3) point set, got shape {a.shape}")
    return a


def chamfer_unidirectional(a, b) -> float:
    """mean over a of the squared distance to the nearest point of b."""
    a, b = _as_points(a), _as_points(b)
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return float(np.mean(np.min(d2, axis=1)))


def chamfer(a, b) -> float:
    """Symmetric squared Chamfer distance, mean-reduced in each direction."""
    a, b = _as_points(a), _as_points(b)
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return float(np.mean(np.min(d2, axis=1)) + np.mean(np.min(d2, axis=0)))


def _pair_sq_dists(va: ad.Tensor, vb: np.ndarray) -> ad.Tensor:
    """(P, m, n) squared distances; ``va`` is tracked, ``vb`` constant."""
    aa = ad.sum(ad.square(va), axis=-1, keepdims=True)
    bb = np.sum(vb * vb, axis=-1)[:, None, :]
    cross = ad.matmul(va, np.swapaxes(vb, 1, 2))
    return aa + bb - 2.0 * cross


def pairs_from_sets(sets: Sequence[Iterable[tuple[int, int]]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    b, i, j = [], [], []
    for k, s in enumerate(sets):
        for ri, rj in sorted(s):
            b.append(k)
            i.append(ri)
            j.append(rj)
    return np.array(b, dtype=np.int64), np.array(i, dtype=np.int64), np.array(j, dtype=np.int64)


ObjectiveHook = Callable[[PosedBody, PosedBody, np.ndarray], ad.Tensor]


@dataclass
class ObjectiveTerms:
    """Objectives summed into the guidance target; only the contact term ships enabled."""

    extra: list[ObjectiveHook] = field(default_factory=list)


def contact_objective_tensor(x_h, body_p: PosedBody, pair_b: np.ndarray, pair_i: np.ndarray,
                             pair_j: np.ndarray, tree: KinematicTree = DEFAULT_TREE,
                             per_sample: bool = False) -> ad.Tensor:
    """Sum of symmetric Chamfer distances over (sample, region_h, region_p) triples.

    Differentiable in ``x_h`` (B, 54).  With ``per_sample`` returns a (B,) tensor.
    """
    x = ad.as_tensor(x_h)
    if x.ndim == 1:
        x = ad.reshape(x, (1, PARAM_DIM))
    B = x.shape[0]
    if len(pair_b) == 0:
        zero = ad.Tensor(np.zeros(B) if per_sample else 0.0)
        return zero
    body_h = forward_kinematics(tree, x)
    vh = body_h.vertices[(pair_b, pair_i)]
    vp = body_p.vertices.data[pair_b, pair_j]
    d2 = _pair_sq_dists(vh, vp)
    cd = ad.mean(ad.min_reduce(d2, axis=2), axis=1) + ad.mean(ad.min_reduce(d2, axis=1), axis=1)
    if not per_sample:
        return ad.sum(cd)
    onehot = np.zeros((len(pair_b), B))
    onehot[np.arange(len(pair_b)), pair_b] = 1.0
    return ad.reshape(ad.matmul(ad.reshape(cd, (1, len(pair_b))), onehot), (B,))


def contact_objective(x_h, x_p, label, pairs: Iterable[tuple[int, int]],
                      tree: KinematicTree = DEFAULT_TREE) -> float:
    """Objective value for a single pair of bodies; ``label`` is carried for interface symmetry."""
    pairs = sorted(pairs)
    if not pairs:
        return 0.0
    body_p = pose(x_p, tree)
    b, i, j = pairs_from_sets([pairs])
    with ad.no_grad():
        return float(contact_objective_tensor(np.asarray(x_h, dtype=float), body_p, b, i, j, tree).data)


def objective_gradient(x_h: np.ndarray, body_p: PosedBody, pair_sets, tree: KinematicTree = DEFAULT_TREE,
                       terms: ObjectiveTerms | None = None) -> np.ndarray:
    """Gradient of the summed objective w.r.t. every row of ``x_h`` with the pair sets held fixed."""
    x_h = np.atleast_2d(np.asarray(x_h, dtype=float))
    b, i, j = pairs_from_sets(pair_sets)
    hooks = terms.extra if terms is not None else []
    if len(b) == 0 and not hooks:
        return np.zeros_like(x_h)
    x = ad.Tensor(x_h.copy(), requires_grad=True)
    with ad.fresh_tape() as tape:
        obj = contact_objective_tensor(x, body_p, b, i, j, tree)
        for hook in hooks:
            obj = obj + hook(forward_kinematics(tree, x), body_p, x_h)
        if not obj.requires_grad:
            return np.zeros_like(x_h)
        tape.backward(obj)
    return x.grad


def predict_pairs(x0: np.ndarray, body_p: PosedBody, labels, predictor: ContactPredictor,
                  tau: float, tree: KinematicTree = DEFAULT_TREE) -> list[set[tuple[int, int]]]:
    body_h = pose(x0, tree)
    prob = predict_contact_map(body_h, body_p, labels, predictor)
    out = []
    for k in range(len(prob)):
        ii, jj = np.nonzero(prob[k] >= tau)
        out.append({(int(a), int(c)) for a, c in zip(ii, jj)})
    return out


def guidance_gradient(x0, x_p, labels, predictor: ContactPredictor, tau: float = 0.5,
                      tree: KinematicTree = DEFAULT_TREE, body_p: PosedBody | None = None,
                      terms: ObjectiveTerms | None = None):
    """Gradient of the contact objective at ``x0``; returns (g, predicted pair sets).

    The pair sets come from the contact predictor on ``x0`` and are treated as constants.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if body_p is None:
        body_p = pose(np.atleast_2d(x_p), tree)
    sets = predict_pairs(x0, body_p, labels, predictor, tau, tree)
    return objective_gradient(x0, body_p, sets, tree, terms), sets


def apply_guidance(x0, g, lam) -> np.ndarray:
    """x0 - lam * g with ``lam`` given per segment (4 values) or per entry (54 values)."""
    lam = np.asarray(lam, dtype=float)
    scale = lambda_vector(lam) if lam.shape == (len(SEGMENTS),) else lam
    return np.asarray(x0, dtype=float) - scale * np.asarray(g, dtype=float)
