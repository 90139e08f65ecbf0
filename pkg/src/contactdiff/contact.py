"""Part-wise contact prediction between the interactive body and its partner.

Rows of every contact map index regions of the interactive body, columns
regions of the partner.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ParameterStore, Tensor
from .body import DEFAULT_TREE, KinematicTree, PosedBody, pose, region_distance_matrix
from .serialization import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

NUM_LABELS = 8
PROB_CLAMP = 1e-7
CONTACT_DELTA = 0.02


@dataclass(frozen=True)
class ContactPredictorConfig:
    n_reg: int = 16
    tau: float = 0.5
    width: int = 32
    heads: int = 4
    blocks: int = 2
    num_labels: int = NUM_LABELS
    seed: int = 0
    lr: float = 1e-3
    steps: int = 3000
    batch_size: int = 64
    # std of parameter noise added to the interactive body during training
    input_noise: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")


class ContactPredictor:
    """Self/cross-attention over region-center tokens with a bilinear pairwise head."""

    def __init__(self, config: ContactPredictorConfig = ContactPredictorConfig()):
        self.config = config
        self.store = ParameterStore()
        rng = np.random.default_rng(config.seed)
        d, R = config.width, config.n_reg
        s = self.store
        for side in ("h", "p"):
            nn.init_linear(s, f"embed_{side}", 3, d, rng)
            s.add(f"region_{side}", rng.normal(0.0, 0.1, size=(R, d)))
            s.add(f"label_{side}", rng.normal(0.0, 0.1, size=(config.num_labels, d)))
        for b in range(config.blocks):
            for side in ("h", "p"):
                nn.init_layer_norm(s, f"blk{b}.{side}.ln_self", d)
                nn.init_attention(s, f"blk{b}.{side}.self", d, rng)
                nn.init_layer_norm(s, f"blk{b}.{side}.ln_q", d)
                nn.init_layer_norm(s, f"blk{b}.{side}.ln_kv", d)
                nn.init_attention(s, f"blk{b}.{side}.cross", d, rng)
                nn.init_mlp_block(s, f"blk{b}.{side}.ffn", d, 2 * d, rng)
        nn.init_layer_norm(s, "head_h.ln", d)
        nn.init_layer_norm(s, "head_p.ln", d)
        nn.init_linear(s, "head_h", d, d, rng)
        nn.init_linear(s, "head_p", d, d, rng)
        s.add("pair_bias", np.zeros((R, R)))
        s.add("dist_w", np.full((R, R), -5.0))
        s.add("bias", np.array(-2.0))

    def logits(self, centers_h, centers_p, labels) -> Tensor:
        """Contact logits (B, R, R) from region centers already in the partner frame."""
        cfg, s = self.config, self.store
        labels = np.asarray(labels, dtype=np.int64)
        ch = np.asarray(centers_h, dtype=float)
        cp = np.asarray(centers_p, dtype=float)
        if ch.shape[-2] != cfg.n_reg or cp.shape[-2] != cfg.n_reg:
            raise ad.ShapeError(
                f"contact predictor expects {cfg.n_reg} regions, got {ch.shape[-2]} and {cp.shape[-2]}")
        B = ch.shape[0]
        tok = {}
        for side, c in (("h", ch), ("p", cp)):
            lab = ad.reshape(s[f"label_{side}"][labels], (B, 1, cfg.width))
            tok[side] = nn.linear(s, f"embed_{side}", c) + s[f"region_{side}"] + lab
        for b in range(cfg.blocks):
            for side in ("h", "p"):
                x = tok[side]
                h = nn.layer_norm(s, f"blk{b}.{side}.ln_self", x)
                tok[side] = x + nn.attention(s, f"blk{b}.{side}.self", h, h, cfg.heads)
            new = {}
            for side, other in (("h", "p"), ("p", "h")):
                q = nn.layer_norm(s, f"blk{b}.{side}.ln_q", tok[side])
                kv = nn.layer_norm(s, f"blk{b}.{side}.ln_kv", tok[other])
                new[side] = tok[side] + nn.attention(s, f"blk{b}.{side}.cross", q, kv, cfg.heads)
            tok = {side: nn.mlp_block(s, f"blk{b}.{side}.ffn", new[side]) for side in new}
        qh = nn.linear(s, "head_h", nn.layer_norm(s, "head_h.ln", tok["h"]))
        kp = nn.linear(s, "head_p", nn.layer_norm(s, "head_p.ln", tok["p"]))
        bil = ad.matmul(qh, ad.transpose(kp, (0, 2, 1))) * (1.0 / math.sqrt(cfg.width))
        dist = np.sqrt(np.sum((ch[:, :, None, :] - cp[:, None, :, :]) ** 2, axis=-1))
        return bil + s["pair_bias"] + s["dist_w"] * dist + s["bias"]

    def __call__(self, centers_h, centers_p, labels) -> Tensor:
        return ad.sigmoid(self.logits(centers_h, centers_p, labels))

    # ------------------------------------------------------------ persistence

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"kind": "contact_predictor", "config": asdict(self.config)}
        meta.update(extra or {})
        save_checkpoint(path, self.store.arrays(), meta)

    @classmethod
    def load(cls, path) -> "ContactPredictor":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "contact_predictor":
            raise ValueError(f"{path} is not a contact predictor checkpoint")
        model = cls(ContactPredictorConfig(**meta["config"]))
        model.store.load_arrays(arrays)
        return model


def centered_inputs(body_h: PosedBody, body_p: PosedBody) -> tuple[np.ndarray, np.ndarray]:
    """Region centers of both bodies relative to the partner pelvis."""
    origin = body_p.joints.data[:, 0:1, :]
    ch = np.mean(body_h.vertices.data, axis=2) - origin
    cp = np.mean(body_p.vertices.data, axis=2) - origin
    return ch, cp


def predict_contact_map(body_h: PosedBody, body_p: PosedBody, labels,
                        predictor: ContactPredictor) -> np.ndarray:
    """Contact probabilities (B, R, R); rows are the interactive body's regions."""
    if body_h.tree.n_reg != body_p.tree.n_reg:
        raise ad.ShapeError(f"region count mismatch: {body_h.tree.n_reg} vs {body_p.tree.n_reg}")
    ch, cp = centered_inputs(body_h, body_p)
    with ad.no_grad():
        return predictor(ch, cp, np.broadcast_to(np.asarray(labels), (ch.shape[0],))).data


def bce_loss(pred, target) -> Tensor:
    """Mean binary cross-entropy over a (..., R, R) map, probabilities clamped to [1e-7, 1-1e-7]."""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"bce_loss: shape mismatch {pred.shape} vs {target.shape}")
    p = ad.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = target * ad.log(p) + (1.0 - target) * ad.log(1.0 - p)
    return -ad.mean(terms)


def bce_from_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Same objective as :func:`bce_loss` on sigmoid(logits), in a numerically stable form."""
    z = logits.data
    target = np.asarray(target, dtype=float)
    # log(1 + exp(z)) - t*z
    sp = np.logaddexp(0.0, z)
    sig = 1.0 / (1.0 + np.exp(-z))
    n = z.size

    def bw(g):
        return ((sig - target) * g / n,)

    return ad._emit("bce_logits", (logits,), np.mean(sp - target * z), bw)


def threshold_contacts(prob, tau: float = 0.5) -> set[tuple[int, int]]:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    c = np.asarray(prob)
    ii, jj = np.nonzero(c >= tau)
    return {(int(i), int(j)) for i, j in zip(ii, jj)}


def ground_truth_contacts(body_h: PosedBody, body_p: PosedBody, delta: float = CONTACT_DELTA) -> np.ndarray:
    """Binary (B, R, R) map: 1 where the regions' closest vertices are within ``delta``."""
    return (region_distance_matrix(body_h, body_p) < delta).astype(float)


def f1_score(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = np.sum(pred & truth)
    fp = np.sum(pred & ~truth)
    fn = np.sum(~pred & truth)
    if tp == 0:
        return 1.0 if fp == 0 and fn == 0 else 0.0
    return float(2 * tp / (2 * tp + fp + fn))


def train_contact_predictor(x_h: np.ndarray, x_p: np.ndarray, labels: np.ndarray,
                            contacts: np.ndarray, config: ContactPredictorConfig = ContactPredictorConfig(),
                            tree: KinematicTree = DEFAULT_TREE, log_every: int = 500,
                            loss_trace: list | None = None) -> ContactPredictor:
    """Adam on the BCE objective; returns the trained predictor."""
    n = len(x_h)
    if n == 0:
        raise ValueError("cannot train the contact predictor on an empty dataset")
    model = ContactPredictor(config)
    rng = np.random.default_rng(config.seed + 1)
    # region centers of the clean partners never change; precompute them
    origin_bodies = pose(x_p, tree)
    origin = origin_bodies.joints.data[:, 0:1, :]
    cp_all = np.mean(origin_bodies.vertices.data, axis=2) - origin
    clean_ch = None
    if config.input_noise == 0.0:
        clean_ch = np.mean(pose(x_h, tree).vertices.data, axis=2) - origin
    running = []
    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch_size, n))
        if clean_ch is None:
            xh = x_h[idx] + config.input_noise * rng.standard_normal((len(idx), x_h.shape[1]))
            ch = np.mean(pose(xh, tree).vertices.data, axis=2) - origin[idx]
        else:
            ch = clean_ch[idx]
        with ad.fresh_tape() as tape:
            logits = model.logits(ch, cp_all[idx], labels[idx])
            loss = bce_from_logits(logits, contacts[idx])
            tape.backward(loss)
        ad.adam_step(model.store, config.lr)
        running.append(float(loss.data))
        if loss_trace is not None:
            loss_trace.append(float(loss.data))
        if log_every and (step + 1) % log_every == 0:
            log.info("contact step=%d loss=%.5f", step + 1, float(np.mean(running)))
            running.clear()
    return model
