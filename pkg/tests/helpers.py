"""Shared oracles for the test-suite."""

from __future__ import annotations

import numpy as np

from contactdiff import autodiff as ad

FD_STEP = 1e-5
# below this magnitude an entry is compared absolutely (finite differences resolve ~1e-11)
REL_FLOOR = 1e-6


def max_rel_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def grad_check(loss_fn, tensors, rng=None, max_entries: int | None = None) -> float:
    """Worst relative error between tape gradients and central differences over ``tensors``.

    ``loss_fn`` builds a scalar Tensor from the current tensor values.
    """
    for t in tensors:
        t.grad = None
    with ad.fresh_tape() as tape:
        tape.backward(loss_fn())
    worst = 0.0
    for t in tensors:
        idx = None
        if max_entries is not None and t.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(t.size, max_entries, replace=False)
        with ad.no_grad():
            num = ad.numeric_grad(lambda: float(loss_fn().data), t.data, FD_STEP, idx)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        if idx is not None:
            ana, num = ana.reshape(-1)[idx], num.reshape(-1)[idx]
        worst = max(worst, max_rel_error(ana, num))
    return worst


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: str, name: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE_LINES.append(f"criterion {number:<3} {'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return passed
