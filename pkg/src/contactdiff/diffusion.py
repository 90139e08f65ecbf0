"""Noise schedule, forward noising, segment-weighted loss, training loop and guided DDIM."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .body import DEFAULT_TREE, PARAM_DIM, SEGMENTS, KinematicTree, pose
from .contact import ContactPredictor
from .denoiser import ConditionSet, Denoiser, cfg_denoise, sample_condition_masks
from .guidance import GuidanceConfig, ObjectiveTerms, apply_guidance, guidance_gradient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays indexed by t = 0..T; entry 0 holds the conventions beta=0, alpha_hat=1."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_hat: np.ndarray

    def check_t(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep outside [1, {self.T}]: {t}")


def build_linear_schedule(T: int = 1000, beta_1: float = 5e-6, beta_T: float = 5e-3) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_1 <= beta_T < 1.0):
        raise ValueError(f"need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_T}")
    betas = np.zeros(T + 1)
    betas[1:] = np.linspace(beta_1, beta_T, T) if T > 1 else beta_1
    alphas = 1.0 - betas
    alpha_hat = np.ones(T + 1)
    for t in range(1, T + 1):
        alpha_hat[t] = alpha_hat[t - 1] * alphas[t]
    return NoiseSchedule(T, betas, alphas, alpha_hat)


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 1000
    beta_1: float = 5e-6
    beta_T: float = 5e-3
    stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.stride < 1 or self.T % self.stride:
            raise ValueError(f"stride {self.stride} must divide T={self.T}")

    def schedule(self) -> NoiseSchedule:
        return build_linear_schedule(self.T, self.beta_1, self.beta_T)


def q_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(a_hat_t) x0 + sqrt(1 - a_hat_t) eps; ``t`` scalar or per-row."""
    sched.check_t(t)
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"q_sample: x0 {x0.shape} and noise {eps.shape} differ")
    ah = sched.alpha_hat[np.asarray(t)]
    if np.ndim(ah) and x0.ndim > 1:
        ah = ah[:, None]
    return np.sqrt(ah) * x0 + np.sqrt(1.0 - ah) * eps


def training_loss(eps_pred, eps) -> ad.Tensor:
    """Sum over the four parameter segments of the segment mean squared error.

    Batched inputs (B, 54) are averaged over the batch.
    """
    eps_pred = ad.as_tensor(eps_pred)
    eps = np.asarray(eps, dtype=float)
    if eps_pred.shape != eps.shape or eps.shape[-1] != PARAM_DIM:
        raise ad.ShapeError(f"training_loss: shapes {eps_pred.shape} and {eps.shape}, need (..., {PARAM_DIM})")
    sq = ad.square(eps_pred - eps)
    if sq.ndim == 1:
        sq = ad.reshape(sq, (1, PARAM_DIM))
    total = None
    for lo, hi in SEGMENTS:
        part = ad.mean(sq[:, lo:hi])
        total = part if total is None else total + part
    return total


def predict_x0(x_t, t, eps_pred, sched: NoiseSchedule) -> np.ndarray:
    """Invert the forward process given a noise estimate."""
    ah = sched.alpha_hat[t]
    return (np.asarray(x_t) - math.sqrt(1.0 - ah) * np.asarray(eps_pred)) / math.sqrt(ah)


def ddim_step(x_t, x0_hat, t: int, sched: NoiseSchedule, t_prev: int | None = None) -> np.ndarray:
    t_prev = t - 1 if t_prev is None else t_prev
    ah_t = sched.alpha_hat[t]
    ah_p = sched.alpha_hat[t_prev]
    x_t = np.asarray(x_t)
    x0_hat = np.asarray(x0_hat)
    return math.sqrt(ah_p) * x0_hat + (math.sqrt(1.0 - ah_p) / math.sqrt(1.0 - ah_t)) * (x_t - math.sqrt(ah_t) * x0_hat)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 256
    lr: float = 1e-3
    lr_final: float = 1e-4
    seed: int = 0
    log_every: int = 500
    checkpoint_every: int = 0
    grad_clip: float | None = 1.0


@dataclass
class TrainStats:
    losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    draws: int = 0
    partner_masked: int = 0
    label_masked: int = 0


def _cosine_lr(cfg: TrainConfig, step: int) -> float:
    frac = step / max(cfg.steps - 1, 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + math.cos(math.pi * frac))


def train(x_h: np.ndarray, x_p: np.ndarray, labels: np.ndarray, denoiser: Denoiser,
          sched: NoiseSchedule, config: TrainConfig = TrainConfig(),
          checkpoint_path: str | Path | None = None, meta: dict | None = None) -> TrainStats:
    """Denoising training: random triple, random t, noise, Adam on the segment loss."""
    n = len(x_h)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    dc = denoiser.config
    stats = TrainStats()
    steps_per_epoch = max(1, n // config.batch_size)
    epoch_acc = []
    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch_size, n))
        t = rng.integers(1, sched.T + 1, size=len(idx))
        eps = rng.standard_normal((len(idx), PARAM_DIM))
        xt = q_sample(x_h[idx], t, eps, sched)
        pp, lp = sample_condition_masks(rng, len(idx), dc.p_partner, dc.p_both)
        stats.draws += len(idx)
        stats.partner_masked += int(np.sum(~pp))
        stats.label_masked += int(np.sum(~lp))
        cond = ConditionSet(x_p[idx], labels[idx], pp, lp)
        with ad.fresh_tape() as tape:
            loss = training_loss(denoiser.denoise(xt, t, cond), eps)
            tape.backward(loss)
        ad.adam_step(denoiser.store, _cosine_lr(config, step), grad_clip=config.grad_clip)
        value = float(loss.data)
        stats.losses.append(value)
        epoch_acc.append(value)
        if (step + 1) % steps_per_epoch == 0:
            stats.epoch_losses.append(float(np.mean(epoch_acc)))
            epoch_acc.clear()
        if config.log_every and (step + 1) % config.log_every == 0:
            log.info("diffusion step=%d loss=%.5f", step + 1, float(np.mean(stats.losses[-config.log_every:])))
        if checkpoint_path and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            denoiser.save(checkpoint_path, dict(meta or {}, step=step + 1))
    return stats


# ---------------------------------------------------------------- sampling


@dataclass
class SampleTrace:
    guidance_evals: int = 0
    steps: int = 0
    pair_sets: list = field(default_factory=list)


def sample_timesteps(T: int, stride: int = 1) -> list[int]:
    if stride < 1 or T % stride:
        raise ValueError(f"stride {stride} must divide T={T}")
    return list(range(T, 0, -stride))


def guided_sample(x_p, labels, denoiser: Denoiser, sched: NoiseSchedule,
                  predictor: ContactPredictor | None = None,
                  guidance: GuidanceConfig = GuidanceConfig(),
                  rng: np.random.Generator | None = None, x_T: np.ndarray | None = None,
                  stride: int = 1, s_p: float | None = None, s_l: float | None = None,
                  tree: KinematicTree = DEFAULT_TREE, trace: SampleTrace | None = None,
                  record_pairs: bool = False, terms: ObjectiveTerms | None = None,
                  callback: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    """DDIM sampling with contact guidance applied to the denoised estimate.

    Without a ``predictor`` this is plain classifier-free-guided DDIM.
    """
    x_p = np.atleast_2d(np.asarray(x_p, dtype=float))
    B = len(x_p)
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (B,))
    if x_T is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        x_T = rng.standard_normal((B, PARAM_DIM))
    x = np.array(x_T, dtype=float)
    body_p = pose(x_p, tree) if predictor is not None else None
    lam = guidance.scale_vector()
    ts = sample_timesteps(sched.T, stride)
    for k, t in enumerate(ts):
        t_prev = ts[k + 1] if k + 1 < len(ts) else 0
        eps = cfg_denoise(denoiser, x, t, x_p, labels, s_p, s_l)
        x0 = predict_x0(x, t, eps, sched)
        if predictor is not None:
            for _ in range(guidance.inner_iters):
                g, sets = guidance_gradient(x0, x_p, labels, predictor, guidance.tau, tree, body_p, terms)
                x0 = apply_guidance(x0, g, lam)
                if trace is not None:
                    trace.guidance_evals += 1
                    if record_pairs:
                        trace.pair_sets.append(sets)
        x = ddim_step(x, x0, t, sched, t_prev)
        if trace is not None:
            trace.steps += 1
        if callback is not None:
            callback(t, x)
    return x


def sample_seeds(seed: int, count: int) -> np.ndarray:
    """Initial noise for ``count`` samples; row i depends only on (seed, i)."""
    return np.stack([np.random.default_rng([seed, i]).standard_normal(PARAM_DIM) for i in range(count)]) \
        if count else np.zeros((0, PARAM_DIM))


def schedule_dict(cfg: DiffusionConfig) -> dict:
    return asdict(cfg)
