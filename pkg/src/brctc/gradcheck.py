"""Central finite-difference checks of the analytic logit gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import PosteriorGrid, is_feasible, log_softmax
from .risk import RiskSpec, brctc_loss, group_masses

REL_FLOOR = 1e-6


def random_instance(rng: np.random.Generator, T_max: int = 8, U_max: int = 4, V: int = 3, scale: float = 1.5):
    """A random feasible ``(logits, labels)`` pair with ``T <= T_max``."""
    while True:
        U = int(rng.integers(1, U_max + 1))
        labels = [int(k) for k in rng.integers(1, V + 1, size=U)]
        T = int(rng.integers(U, T_max + 1))
        if is_feasible(T, labels):
            return rng.normal(size=(T, V + 1)) * scale, labels


def random_grid(rng: np.random.Generator, T_max: int = 8, U_max: int = 4, V_max: int = 3, scale: float = 1.5):
    """A random feasible ``(PosteriorGrid, labels)`` pair; ``V`` varies too."""
    while True:
        V = int(rng.integers(1, V_max + 1))
        U = int(rng.integers(1, U_max + 1))
        labels = [int(k) for k in rng.integers(1, V + 1, size=U)]
        T = int(rng.integers(1, T_max + 1))
        if is_feasible(T, labels):
            return PosteriorGrid(log_softmax(rng.normal(size=(T, V + 1)) * scale)), labels


def numeric_grad(f, z: np.ndarray, step: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(z)
    for idx in np.ndindex(*z.shape):
        zp = z.copy()
        zm = z.copy()
        zp[idx] += step
        zm[idx] -= step
        g[idx] = (f(zp) - f(zm)) / (2 * step)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, 1e-6)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def bias_frames(logits: np.ndarray, labels) -> list[int]:
    logp = log_softmax(logits)
    return [int(np.argmax(group_masses(logp, labels, u))) for u in range(1, len(labels) + 1)]


def argmax_stable(logits: np.ndarray, labels, step: float) -> bool:
    """True if no single-coordinate perturbation of size ``step`` moves any bias frame.

    Checking every perturbation is exact but slow; instead require each
    token's best group to beat the runner-up by a margin far larger than any
    ``step``-sized change of the log masses could close.
    """
    logp = log_softmax(logits)
    for u in range(1, len(labels) + 1):
        m = np.sort(group_masses(logp, labels, u))[::-1]
        if len(m) > 1 and np.isfinite(m[1]) and m[0] - m[1] < 1e3 * step * logits.shape[0]:
            return False
    return True


@dataclass(frozen=True)
class GradCheckResult:
    T: int
    labels: tuple[int, ...]
    rel_error: float
    skipped: bool = False


def check_instance(logits: np.ndarray, labels, spec: RiskSpec, step: float = 1e-5) -> GradCheckResult:
    labels = tuple(labels)
    if spec.kind == "early_emission" and not argmax_stable(logits, labels, step):
        return GradCheckResult(logits.shape[0], labels, float("nan"), skipped=True)

    def f(z):
        return brctc_loss(log_softmax(z), labels, spec).neg_log_objective

    analytic = brctc_loss(log_softmax(logits), labels, spec, grad=True).grad_logits
    numeric = numeric_grad(f, logits, step)
    return GradCheckResult(logits.shape[0], labels, relative_error(analytic, numeric))


def run_grad_check(
    spec: RiskSpec,
    seed: int = 0,
    num_instances: int = 20,
    T_max: int = 8,
    U_max: int = 4,
    V: int = 3,
    step: float = 1e-5,
) -> list[GradCheckResult]:
    """Check ``num_instances`` checked (non-skipped) random instances."""
    rng = np.random.default_rng(seed)
    results = []
    checked = 0
    while checked < num_instances:
        logits, labels = random_instance(rng, T_max, U_max, V)
        res = check_instance(logits, labels, spec, step)
        results.append(res)
        checked += not res.skipped
    return results
