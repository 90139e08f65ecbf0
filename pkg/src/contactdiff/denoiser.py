"""Conditional noise-prediction network with classifier-free condition masking."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ParameterStore, Tensor
from .body import PARAM_DIM
from .serialization import load_checkpoint, save_checkpoint

NUM_LABELS = 8


@dataclass(frozen=True)
class DenoiserConfig:
    hidden: int = 256
    blocks: int = 4
    time_dim: int = 64
    label_dim: int = 64
    partner_dim: int = 128
    num_labels: int = NUM_LABELS
    p_partner: float = 0.1
    p_both: float = 0.1
    s_p: float = 1.5
    s_l: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_partner <= 1.0 and 0.0 <= self.p_both <= 1.0):
            raise ValueError("dropout probabilities must lie in [0, 1]")
        if self.p_partner + self.p_both > 1.0:
            raise ValueError("p_partner + p_both must not exceed 1")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")


def embed_time(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding, sin/cos interleaved: [sin(t w0), cos(t w0), sin(t w1), ...]."""
    t = np.asarray(t, dtype=float)
    k = np.arange(dim // 2)
    freqs = np.exp(-np.log(10000.0) * 2.0 * k / dim)
    ang = t[..., None] * freqs
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


@dataclass
class ConditionSet:
    x_p: np.ndarray  # (B, 54)
    labels: np.ndarray  # (B,)
    partner_present: np.ndarray  # (B,) bool
    label_present: np.ndarray  # (B,) bool

    @classmethod
    def full(cls, x_p, labels) -> "ConditionSet":
        x_p = np.atleast_2d(np.asarray(x_p, dtype=float))
        labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (len(x_p),))
        ones = np.ones(len(x_p), dtype=bool)
        return cls(x_p, labels, ones, ones.copy())


def sample_condition_masks(rng: np.random.Generator, n: int, p_partner: float, p_both: float):
    """Per-sample masking: partner hidden with p_partner, both hidden with p_both."""
    u = rng.random(n)
    hide_both = u < p_both
    hide_partner = (u >= p_both) & (u < p_both + p_partner)
    partner_present = ~(hide_both | hide_partner)
    label_present = ~hide_both
    return partner_present, label_present


class Denoiser:
    """eps_theta(x_t, t, x_p, l): residual MLP over [x_t, time, partner, label]."""

    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        self.config = config
        self.store = ParameterStore()
        rng = np.random.default_rng(config.seed)
        c, s = config, self.store
        nn.init_linear(s, "time1", c.time_dim, c.time_dim, rng)
        nn.init_linear(s, "partner", PARAM_DIM, c.partner_dim, rng)
        s.add("partner_null", rng.normal(0.0, 0.5, size=c.partner_dim))
        s.add("label_emb", rng.normal(0.0, 0.5, size=(c.num_labels, c.label_dim)))
        s.add("label_null", rng.normal(0.0, 0.5, size=c.label_dim))
        nn.init_linear(s, "inp", PARAM_DIM + c.time_dim + c.partner_dim + c.label_dim, c.hidden, rng)
        for b in range(c.blocks):
            nn.init_mlp_block(s, f"block{b}", c.hidden, c.hidden, rng)
        nn.init_layer_norm(s, "out.ln", c.hidden)
        nn.init_linear(s, "out", c.hidden, PARAM_DIM, rng, scale=0.1)

    def denoise(self, x_t, t, cond: ConditionSet) -> Tensor:
        c, s = self.config, self.store
        x_t = ad.as_tensor(x_t)
        B = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t), (B,))
        temb = ad.gelu(nn.linear(s, "time1", embed_time(t, c.time_dim)))
        pm = cond.partner_present.astype(float)[:, None]
        lm = cond.label_present.astype(float)[:, None]
        enc = nn.linear(s, "partner", cond.x_p)
        pfeat = enc * pm + ad.reshape(s["partner_null"], (1, c.partner_dim)) * (1.0 - pm)
        lab = s["label_emb"][np.asarray(cond.labels, dtype=np.int64)]
        lfeat = lab * lm + ad.reshape(s["label_null"], (1, c.label_dim)) * (1.0 - lm)
        h = nn.linear(s, "inp", ad.concat([x_t, temb, pfeat, lfeat], axis=-1))
        for b in range(c.blocks):
            h = nn.mlp_block(s, f"block{b}", h)
        return nn.linear(s, "out", nn.layer_norm(s, "out.ln", h))

    __call__ = denoise

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"kind": "denoiser", "config": asdict(self.config)}
        meta.update(extra or {})
        save_checkpoint(path, self.store.arrays(), meta)

    @classmethod
    def load(cls, path) -> tuple["Denoiser", dict]:
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "denoiser":
            raise ValueError(f"{path} is not a denoiser checkpoint")
        model = cls(DenoiserConfig(**meta["config"]))
        model.store.load_arrays(arrays)
        return model, meta


def cfg_denoise(model: Denoiser, x_t, t, x_p, labels, s_p: float | None = None,
                s_l: float | None = None) -> np.ndarray:
    """Two-level classifier-free guidance.

    eps = eps_none + s_l (eps_label - eps_none) + s_p (eps_full - eps_label)
    """
    s_p = model.config.s_p if s_p is None else s_p
    s_l = model.config.s_l if s_l is None else s_l
    x_t = np.asarray(x_t, dtype=float)
    B = len(x_t)
    full = ConditionSet.full(x_p, labels)
    with ad.no_grad():
        if s_p == 1.0 and s_l == 1.0:
            return model.denoise(x_t, t, full).data
        if s_p == 0.0 and s_l == 0.0:
            off = np.zeros(B, dtype=bool)
            return model.denoise(x_t, t, ConditionSet(full.x_p, full.labels, off, off)).data
        # one batched pass for the three branches
        pp = np.concatenate([np.ones(B), np.zeros(B), np.zeros(B)]).astype(bool)
        lp = np.concatenate([np.ones(B), np.ones(B), np.zeros(B)]).astype(bool)
        cond = ConditionSet(np.concatenate([full.x_p] * 3), np.concatenate([full.labels] * 3), pp, lp)
        t3 = np.concatenate([np.broadcast_to(np.asarray(t), (B,))] * 3)
        eps = model.denoise(np.concatenate([x_t] * 3), t3, cond).data
    e_full, e_label, e_none = eps[:B], eps[B:2 * B], eps[2 * B:]
    return e_none + s_l * (e_label - e_none) + s_p * (e_full - e_label)
