"""Core sequence types and the vanilla CTC forward-backward lattice.

Conventions: frames ``t`` and extended positions ``v`` are 1-based in every
public signature that takes them as arguments; the arrays returned
(``alpha``, ``beta``, gradients) are ordinary 0-based numpy arrays, so
``alpha[t - 1, v - 1]`` is the forward variable at frame ``t``, state ``v``.
Blank is symbol id 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

from . import _kernels
from .errors import DegenerateObjective, InfeasibleAlignment

NEG_INF = -np.inf
BLANK = 0


@dataclass(frozen=True)
class LabelSeq:
    """A non-empty target sequence of token ids, each >= 1."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        tokens = tuple(int(k) for k in self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if not tokens:
            raise ValueError("label sequence must contain at least one token")
        if min(tokens) < 1:
            raise ValueError(f"token ids must be >= 1 (0 is blank), got {tokens}")

    @property
    def U(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass(frozen=True)
class ExtendedLabels:
    """Labels interleaved with blanks: ``[0, l1, 0, l2, ..., lU, 0]``."""

    symbols: np.ndarray
    source: LabelSeq

    def __len__(self):
        return len(self.symbols)


@dataclass(frozen=True)
class PosteriorGrid:
    """Per-frame log-probabilities, shape ``(T, V + 1)``."""

    logp: np.ndarray

    def __post_init__(self):
        logp = np.ascontiguousarray(self.logp, dtype=np.float64)
        if logp.ndim != 2 or logp.shape[0] < 1 or logp.shape[1] < 2:
            raise ValueError(f"posterior grid must be (T, V+1) with T>=1, V>=1; got {logp.shape}")
        if np.isnan(logp).any() or (logp > 1e-12).any():
            raise ValueError("log-probabilities must be <= 0 and not NaN")
        norm = _row_logsumexp(logp)
        if np.max(np.abs(norm)) > 1e-9:
            raise ValueError(f"rows are not normalized (max |logsumexp| = {np.max(np.abs(norm)):.3g})")
        object.__setattr__(self, "logp", np.minimum(logp, 0.0))

    @classmethod
    def from_logits(cls, logits) -> "PosteriorGrid":
        return cls(log_softmax(np.asarray(logits, dtype=np.float64)))

    @classmethod
    def from_probs(cls, probs) -> "PosteriorGrid":
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(probs, dtype=np.float64)))

    @property
    def T(self) -> int:
        return self.logp.shape[0]

    @property
    def V(self) -> int:
        return self.logp.shape[1] - 1

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp)


@dataclass(frozen=True)
class LatticeVars:
    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class LossResult:
    """A per-utterance objective in nats, optionally with its logit gradient."""

    neg_log_objective: float
    grad_logits: np.ndarray | None = None
    clamped: tuple[int, ...] = field(default_factory=tuple)

    @property
    def warning(self) -> bool:
        """True when some per-token term was floored (early emission only)."""
        return bool(self.clamped)


GridLike = Union[PosteriorGrid, np.ndarray]
LabelsLike = Union[LabelSeq, Sequence[int]]


def as_grid(y: GridLike) -> PosteriorGrid:
    return y if isinstance(y, PosteriorGrid) else PosteriorGrid(np.asarray(y))


def as_labels(labels: LabelsLike) -> LabelSeq:
    return labels if isinstance(labels, LabelSeq) else LabelSeq(tuple(labels))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _row_logsumexp(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def logsumexp(values: Iterable[float]) -> float:
    """Max-shifted ``log(sum(exp(values)))``; all ``-inf`` input gives ``-inf``."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return NEG_INF
    m = np.max(arr)
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.sum(np.exp(arr - m))))


def extend_labels(labels: LabelsLike) -> ExtendedLabels:
    labels = as_labels(labels)
    symbols = np.zeros(2 * labels.U + 1, dtype=np.int64)
    symbols[1::2] = labels.tokens
    return ExtendedLabels(symbols=symbols, source=labels)


def _prepare(y: GridLike, labels) -> tuple[PosteriorGrid, ExtendedLabels]:
    y = as_grid(y)
    lp = labels if isinstance(labels, ExtendedLabels) else extend_labels(labels)
    if max(lp.source.tokens) > y.V:
        raise ValueError(f"token id {max(lp.source.tokens)} exceeds vocabulary size {y.V}")
    return y, lp


def is_feasible(T: int, labels: LabelsLike) -> bool:
    """Exact reachability of the final lattice states after ``T`` frames."""
    return _reachable(int(T), tuple(int(k) for k in as_labels(labels).tokens))


@lru_cache(maxsize=4096)
def _reachable(T: int, tokens: tuple[int, ...]) -> bool:
    lp = extend_labels(tokens)
    # unit-weight grid: a cell is finite iff it is reachable
    ones = np.zeros((T, int(lp.symbols.max()) + 1))
    alpha = _kernels.forward(ones, lp.symbols)
    return bool(np.isfinite(alpha[T - 1, -2:]).any())


def _check_feasible(y: PosteriorGrid, lp: ExtendedLabels) -> None:
    if not is_feasible(y.T, lp.source):
        raise InfeasibleAlignment(
            f"no path of length T={y.T} collapses to labels {list(lp.source.tokens)}"
        )


def forward(y: GridLike, lp: ExtendedLabels | LabelsLike) -> np.ndarray:
    """Log forward variables, shape ``(T, 2U+1)``."""
    y, lp = _prepare(y, lp)
    _check_feasible(y, lp)
    return _kernels.forward(y.logp, lp.symbols)


def backward(y: GridLike, lp: ExtendedLabels | LabelsLike) -> np.ndarray:
    """Log backward variables, shape ``(T, 2U+1)``; includes ``y`` at frame t."""
    y, lp = _prepare(y, lp)
    _check_feasible(y, lp)
    return _kernels.backward(y.logp, lp.symbols)


def lattice(y: GridLike, labels) -> LatticeVars:
    y, lp = _prepare(y, labels)
    _check_feasible(y, lp)
    return LatticeVars(
        alpha=_kernels.forward(y.logp, lp.symbols),
        beta=_kernels.backward(y.logp, lp.symbols),
    )


def log_likelihood(y: GridLike, labels: LabelsLike) -> float:
    """``log P(l|x)`` from the two terminal forward cells."""
    alpha = forward(y, labels)
    return _kernels.lae(alpha[-1, -1], alpha[-1, -2])


def ctc_loss(y: GridLike, labels: LabelsLike, grad: bool = False) -> LossResult:
    y, lp = _prepare(y, labels)
    _check_feasible(y, lp)
    alpha = _kernels.forward(y.logp, lp.symbols)
    log_p = _kernels.lae(alpha[-1, -1], alpha[-1, -2])
    if log_p == NEG_INF:
        raise DegenerateObjective("every path has zero probability under this grid")
    result = LossResult(neg_log_objective=-log_p)
    if grad:
        beta = _kernels.backward(y.logp, lp.symbols)
        result.grad_logits = _grad_from_occupancy(y, lp, alpha, beta, log_p)
    return result


def ctc_loss_at_frame(y: GridLike, labels: LabelsLike, t: int) -> float:
    """``-log sum_v alpha(t,v) beta(t,v) / y``, for 1-based frame ``t``."""
    y, lp = _prepare(y, labels)
    if not 1 <= t <= y.T:
        raise IndexError(f"frame {t} outside 1..{y.T}")
    lv = lattice(y, lp)
    occ = _kernels.occupancy(lv.alpha, lv.beta, y.logp, lp.symbols)
    return -logsumexp(occ[t - 1])


def occupation(y: GridLike, labels: LabelsLike, t: int, v: int) -> float:
    """Log mass of all paths sitting on extended position ``v`` at frame ``t`` (1-based)."""
    y, lp = _prepare(y, labels)
    if not (1 <= t <= y.T and 1 <= v <= len(lp)):
        raise IndexError(f"cell ({t}, {v}) outside the {y.T}x{len(lp)} lattice")
    lv = lattice(y, lp)
    a, b = lv.alpha[t - 1, v - 1], lv.beta[t - 1, v - 1]
    if a == NEG_INF or b == NEG_INF:
        return NEG_INF
    return float(a + b - y.logp[t - 1, lp.symbols[v - 1]])


def prob_grad(y: GridLike, labels: LabelsLike) -> np.ndarray:
    """dP/dy in the probability domain: ``(1/y^2) * sum_{v in lab(k)} alpha*beta``.

    Only meant for inspection on small grids; it is not overflow-safe.
    """
    y, lp = _prepare(y, labels)
    lv = lattice(y, lp)
    out = np.zeros((y.T, y.V + 1))
    for s, k in enumerate(lp.symbols):
        out[:, k] += np.exp(lv.alpha[:, s] + lv.beta[:, s] - 2.0 * y.logp[:, k])
    return out


def ctc_grad(y: GridLike, labels: LabelsLike) -> np.ndarray:
    """Gradient of ``-log P(l|x)`` with respect to the pre-softmax logits."""
    return ctc_loss(y, labels, grad=True).grad_logits


def _grad_from_occupancy(y, lp, alpha, beta, log_objective) -> np.ndarray:
    occ = _kernels.occupancy(alpha, beta, y.logp, lp.symbols)
    return softmax_chain(y, _kernels.fold_states(occ, lp.symbols, y.V + 1), log_objective)


def softmax_chain(y: PosteriorGrid, log_weighted_occ: np.ndarray, log_objective: float) -> np.ndarray:
    """Compose ``d(-log J)/dy`` with the softmax Jacobian.

    ``log_weighted_occ[t, k]`` is ``log(y_k^t * dJ/dy_k^t)``. Because each
    path visits exactly one symbol per frame, its row sums equal J, so the
    logit gradient reduces to ``y - occ / J`` and rows sum to zero.
    """
    return y.probs - np.exp(log_weighted_occ - log_objective)
