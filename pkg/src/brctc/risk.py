"""Bayes-risk weighting of CTC path groups.

Paths are grouped by the last frame ``tau`` at which they occupy extended
position ``2u`` (token ``u``, 1-based). Each group's mass is
``alpha(tau, 2u) * beta_hat(tau, 2u) / y``; a risk ``r(tau)`` multiplies it
and the weighted masses are summed. Two risks are provided: down-sampling,
``exp(-lam * tau / T)`` on the last token, and early emission,
``exp(-lam * (tau - tau') / T)`` on every token with ``tau'`` the most
probable end frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateObjective, MissingBias, NumericalCancellation
from .lattice import (
    NEG_INF,
    ExtendedLabels,
    GridLike,
    PosteriorGrid,
    LabelsLike,
    LossResult,
    _check_feasible,
    _prepare,
    ctc_loss,
    lattice,
    logsumexp,
)

KINDS = ("vanilla", "downsample", "early_emission")
DEFAULT_CLAMP_FLOOR = -1e30


@dataclass(frozen=True)
class RiskSpec:
    kind: str = "vanilla"
    lam: float = 0.0
    clamp_floor: float = DEFAULT_CLAMP_FLOOR

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        if kind not in KINDS:
            raise ValueError(f"unknown risk kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if not self.lam >= 0:
            raise ValueError(f"risk factor must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class GroupPosterior:
    u: int
    tau: int
    log_mass: float

    @property
    def mass(self) -> float:
        return math.exp(self.log_mass)


def risk_value(spec: RiskSpec, tau: int, T: int, tau_star: int | None = None) -> float:
    """Log of the group risk for end frame ``tau`` (1-based)."""
    if spec.kind == "vanilla":
        return 0.0
    if T < 1:
        raise ValueError("T must be >= 1")
    if spec.kind == "downsample":
        return -spec.lam * tau / T
    if tau_star is None:
        raise MissingBias("early-emission risk needs the bias frame tau_star")
    return -spec.lam * (tau - tau_star) / T


def _log_risk_vector(spec: RiskSpec, T: int, tau_star: int | None = None) -> np.ndarray:
    return np.array([risk_value(spec, tau, T, tau_star) for tau in range(1, T + 1)])


def _log_sub(a: float, b: float) -> float:
    """log(exp(a) - exp(b)) for a >= b; -inf when equal."""
    if b == NEG_INF:
        return a
    if b >= a:
        return NEG_INF
    return a + math.log1p(-math.exp(b - a))


def beta_hat(y: GridLike, lp, tau: int, u: int) -> float:
    """Modified backward variable at ``(tau, 2u)``, by subtracting the stay term.

    ``beta_hat = beta(tau, 2u) - beta(tau+1, 2u) * y`` for ``tau < T`` and
    ``beta(T, 2u)`` otherwise. When the two operands agree to 1e-12 relative
    the difference is meaningless; an exact zero (confirmed by summing the
    exit transitions) maps to ``-inf``, anything else raises
    :class:`NumericalCancellation`.
    """
    y, lp = _prepare(y, lp)
    U = lp.source.U
    if not (1 <= u <= U and 1 <= tau <= y.T):
        raise IndexError(f"(tau={tau}, u={u}) outside 1..{y.T} x 1..{U}")
    lv = lattice(y, lp)
    q = 2 * u - 1
    whole = lv.beta[tau - 1, q]
    if tau == y.T:
        return float(whole)
    stay = lv.beta[tau, q] + y.logp[tau - 1, lp.symbols[q]]
    if stay != NEG_INF and whole != NEG_INF and abs(stay - whole) <= 1e-12:
        exits = _kernels.exit_mass(lv.beta, y.logp, lp.symbols, q)[tau - 1]
        if exits == NEG_INF:
            return NEG_INF
        raise NumericalCancellation(
            f"beta({tau},{2 * u}) and its stay term agree to 1e-12; difference is ill-conditioned"
        )
    return _log_sub(whole, stay)


def group_masses(y: GridLike, labels: LabelsLike, u: int) -> np.ndarray:
    """Log group mass for token ``u`` at every end frame; index ``tau - 1``."""
    y, lp = _prepare(y, labels)
    if not 1 <= u <= lp.source.U:
        raise IndexError(f"token index {u} outside 1..{lp.source.U}")
    lv = lattice(y, lp)
    return _kernels.group_masses(lv.alpha, lv.beta, y.logp, lp.symbols, 2 * u - 1)


def group_posterior(y: GridLike, labels: LabelsLike, u: int, tau: int) -> GroupPosterior:
    masses = group_masses(y, labels, u)
    if not 1 <= tau <= len(masses):
        raise IndexError(f"frame {tau} outside 1..{len(masses)}")
    return GroupPosterior(u=u, tau=tau, log_mass=float(masses[tau - 1]))


def _argmax_first(values: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the smallest tau on ties
    return int(np.argmax(values)) + 1


def tau_star(y: GridLike, labels: LabelsLike, u: int) -> int:
    """Most probable end frame (1-based) of token ``u``; ties go to the smallest."""
    return _argmax_first(group_masses(y, labels, u))


_KIND_CODES = {
    "vanilla": _kernels.VANILLA,
    "downsample": _kernels.DOWNSAMPLE,
    "early_emission": _kernels.EARLY_EMISSION,
}


def evaluate_objective(y: PosteriorGrid, lp: ExtendedLabels, spec: RiskSpec, grad: bool) -> LossResult:
    """Run the fused kernel on an already validated grid and extended labels."""
    value, g, clamped = _kernels.objective(
        y.logp, lp.symbols, _KIND_CODES[spec.kind], float(spec.lam), float(spec.clamp_floor), grad
    )
    if value == np.inf:
        raise DegenerateObjective(f"{spec.kind} objective has zero path mass")
    return LossResult(
        neg_log_objective=float(value),
        grad_logits=g if grad else None,
        clamped=tuple(int(u) + 1 for u in np.flatnonzero(clamped)),
    )


def brctc_downsample_loss(y: GridLike, labels: LabelsLike, spec: RiskSpec, grad: bool = False) -> LossResult:
    """``-log sum_tau exp(-lam*tau/T) * mass(U, tau)``."""
    if spec.kind != "downsample":
        raise ValueError(f"expected a downsample spec, got {spec.kind}")
    y, lp = _prepare(y, labels)
    _check_feasible(y, lp)
    return evaluate_objective(y, lp, spec, grad)


def per_token_objectives(y: GridLike, labels: LabelsLike, spec: RiskSpec) -> np.ndarray:
    """``log J'(u)`` for every token, unclamped, with each ``tau'`` from the grid."""
    y, lp = _prepare(y, labels)
    _check_feasible(y, lp)
    alpha = _kernels.forward(y.logp, lp.symbols)
    beta = _kernels.backward(y.logp, lp.symbols)
    out = np.empty(lp.source.U)
    for u in range(1, lp.source.U + 1):
        masses = _kernels.group_masses(alpha, beta, y.logp, lp.symbols, 2 * u - 1)
        log_risk = _log_risk_vector(spec, y.T, _argmax_first(masses))
        out[u - 1] = logsumexp(masses + log_risk)
    return out


def brctc_earlyemit_loss(y: GridLike, labels: LabelsLike, spec: RiskSpec, grad: bool = False) -> LossResult:
    """``-(1/U) sum_u log J'(u)`` with ``tau'`` held constant (no gradient through it).

    Terms with ``log J'(u)`` below ``spec.clamp_floor`` are floored, contribute
    no gradient, and are listed in ``LossResult.clamped``.
    """
    if spec.kind != "early_emission":
        raise ValueError(f"expected an early_emission spec, got {spec.kind}")
    y, lp = _prepare(y, labels)
    _check_feasible(y, lp)
    return evaluate_objective(y, lp, spec, grad)


def brctc_loss(y: GridLike, labels: LabelsLike, spec: RiskSpec, grad: bool = False) -> LossResult:
    """Dispatch on ``spec.kind``.

    Vanilla, and any risk with ``lam == 0`` (every risk is then 1), goes
    through plain CTC, so those specs give bit-identical results.
    """
    if spec.kind == "vanilla" or spec.lam == 0:
        return ctc_loss(y, labels, grad=grad)
    if spec.kind == "downsample":
        return brctc_downsample_loss(y, labels, spec, grad=grad)
    return brctc_earlyemit_loss(y, labels, spec, grad=grad)


def brctc_grad(y: GridLike, labels: LabelsLike, spec: RiskSpec) -> np.ndarray:
    return brctc_loss(y, labels, spec, grad=True).grad_logits
