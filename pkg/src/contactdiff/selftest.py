"""Fast invariant checks runnable from an installed package (``contactdiff selftest``)."""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from . import autodiff as ad
from .body import DEFAULT_TREE, PARAM_DIM, capsule_sdf, forward_kinematics, mirror_params, pose
from .contact import ContactPredictor, ContactPredictorConfig, threshold_contacts
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import build_linear_schedule, ddim_step, guided_sample, predict_x0, q_sample
from .guidance import GuidanceConfig, chamfer
from .metrics import GaussianStats, frechet_distance, non_collision_scores


def _rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


def check_autodiff() -> bool:
    rng = np.random.default_rng(1)
    w = ad.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    x = rng.normal(size=(3, 5))

    def f():
        return ad.sum(ad.gelu(ad.matmul(x, w)) * ad.sin(ad.matmul(x, w)))

    with ad.fresh_tape() as tape:
        tape.backward(f())
    with ad.no_grad():
        num = ad.numeric_grad(lambda: float(f().data), w.data)
    return _rel_err(w.grad, num) < 1e-4


def check_fk_gradient() -> bool:
    rng = np.random.default_rng(2)
    x = ad.Tensor(0.3 * rng.normal(size=(1, PARAM_DIM)), requires_grad=True)

    def f():
        return ad.sum(ad.square(forward_kinematics(DEFAULT_TREE, x).vertices))

    with ad.fresh_tape() as tape:
        tape.backward(f())
    with ad.no_grad():
        num = ad.numeric_grad(lambda: float(f().data), x.data)
    return _rel_err(x.grad, num) < 1e-4


def check_schedule() -> bool:
    s = build_linear_schedule()
    ok = bool(np.all(np.abs(s.alpha_hat[1:] - s.alpha_hat[:-1] * s.alphas[1:]) <= 1e-15))
    rng = np.random.default_rng(3)
    x0, eps = rng.normal(size=(4, PARAM_DIM)), rng.normal(size=(4, PARAM_DIM))
    xt = q_sample(x0, 500, eps, s)
    ok &= np.max(np.abs(predict_x0(xt, 500, eps, s) - x0)) < 1e-10
    x = xt
    for t in range(500, 0, -1):
        e = (x - np.sqrt(s.alpha_hat[t]) * x0) / np.sqrt(1.0 - s.alpha_hat[t])
        x = ddim_step(x, predict_x0(x, t, e, s), t, s)
    return bool(ok and np.max(np.abs(x - x0)) < 1e-8)


def check_mirror() -> bool:
    x = np.random.default_rng(4).normal(size=(8, PARAM_DIM))
    return bool(np.array_equal(mirror_params(mirror_params(x)), x))


def check_geometry() -> bool:
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(30, 3)), rng.normal(size=(40, 3))
    brute = np.mean([min(np.sum((p - q) ** 2) for q in b) for p in a]) + \
        np.mean([min(np.sum((p - q) ** 2) for p in a) for q in b])
    ok = abs(chamfer(a, b) - brute) < 1e-12
    xh, xp = np.zeros((1, PARAM_DIM)), np.zeros((1, PARAM_DIM))
    xh[0, 2] = 10.0
    ok &= non_collision_scores(xh, xp)[0] == 100.0
    bp = pose(xp)
    ok &= bool(np.all(capsule_sdf(bp.vertex_array[0], bp) <= 1e-9))
    return bool(ok)


def check_frechet() -> bool:
    g1 = GaussianStats(np.zeros(1), np.array([[4.0]]), 10)
    g2 = GaussianStats(np.zeros(1), np.array([[1.0]]), 10)
    return abs(frechet_distance(g1, g2) - 1.0) < 1e-9


def check_threshold() -> bool:
    c = np.zeros((16, 16))
    c[2, 3] = 0.7
    c[4, 5] = 0.5
    return threshold_contacts(c, 0.5) == {(2, 3), (4, 5)}


def check_guidance_off_switch() -> bool:
    den = Denoiser(DenoiserConfig(hidden=32, blocks=1, time_dim=16, label_dim=8, partner_dim=16))
    pred = ContactPredictor(ContactPredictorConfig(width=16, heads=2, blocks=1))
    sched = build_linear_schedule(T=20, beta_1=1e-4, beta_T=0.05)
    rng = np.random.default_rng(6)
    x_p = 0.1 * rng.normal(size=(2, PARAM_DIM))
    x_T = rng.normal(size=(2, PARAM_DIM))
    ref = guided_sample(x_p, [0, 3], den, sched, None, x_T=x_T)
    off = guided_sample(x_p, [0, 3], den, sched, pred, GuidanceConfig(lam=(0.0, 0.0, 0.0, 0.0)), x_T=x_T)
    return bool(np.array_equal(ref, off))


CHECKS: dict[str, Callable[[], bool]] = {
    "autodiff": check_autodiff, "fk_gradient": check_fk_gradient, "schedule": check_schedule,
    "mirror": check_mirror, "geometry": check_geometry, "frechet": check_frechet,
    "threshold": check_threshold, "guidance_off_switch": check_guidance_off_switch,
}


def run_checks(log: logging.Logger | None = None) -> list[str]:
    """Run every check; returns the names of those that failed."""
    failed = []
    for name, fn in CHECKS.items():
        try:
            ok = fn()
        except Exception as exc:  # a crash is a failed check, reported by name
            ok = False
            if log:
                log.warning("check=%s error=%s", name, exc)
        if log:
            log.info("check=%s status=%s", name, "ok" if ok else "FAIL")
        if not ok:
            failed.append(name)
    return failed
