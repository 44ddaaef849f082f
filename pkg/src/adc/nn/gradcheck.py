"""Central finite-difference check of the analytic BPTT gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adc.nn.model import Model, init_params, loss_and_grads
from adc.rng import Stream


def numeric_grads(model: Model, X, y, step: float = 1e-5) -> list[np.ndarray]:
    """d(loss)/d(param) for every parameter by central differences."""
    model = model.copy()
    out = []
    for a in model.arrays():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + step
            lp, _ = loss_and_grads(model, X, y)
            a[idx] = old - step
            lm, _ = loss_and_grads(model, X, y)
            a[idx] = old
            g[idx] = (lp - lm) / (2 * step)
        out.append(g)
    return out


# Central differences at step 1e-5 resolve a loss near 1 only to about
# eps * L / step ~ 2e-11, so gradients below this floor are compared on an
# absolute scale instead.
RELATIVE_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = RELATIVE_FLOOR) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


@dataclass(frozen=True)
class GradCheckCase:
    input_size: int
    hidden_size: int
    steps: int
    batch: int
    max_rel_error: float


def check_case(I: int, H: int, T: int, B: int, seed: int, step: float = 1e-5) -> GradCheckCase:
    rng = Stream(seed)
    model = init_params(I, H, seed)
    X = rng.substream("x").normal(0.0, 1.0, B * T * I).reshape(B, T, I)
    ys = rng.substream("y")
    y = np.array([ys.integers(model.n_classes) for _ in range(B)], dtype=np.int64)
    _, analytic = loss_and_grads(model, X, y)
    numeric = numeric_grads(model, X, y, step)
    worst = max(float(relative_error(a, n).max()) for a, n in zip(analytic, numeric))
    return GradCheckCase(I, H, T, B, worst)


def random_cases(n: int, seed: int, max_input: int = 3, max_hidden: int = 4, max_steps: int = 8, max_batch: int = 4):
    """``n`` random small configurations, each checked independently."""
    rng = Stream(seed).substream("configs")
    cases = []
    for k in range(n):
        I = 1 + int(rng.integers(max_input))
        H = 1 + int(rng.integers(max_hidden))
        T = 1 + int(rng.integers(max_steps))
        B = 1 + int(rng.integers(max_batch))
        cases.append(check_case(I, H, T, B, seed=int(rng.next_u64())))
    return cases
