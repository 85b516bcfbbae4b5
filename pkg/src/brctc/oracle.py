"""Brute-force path enumeration used as ground truth for the lattice code.

Everything here works in the plain probability domain and walks explicit
symbol sequences; nothing is shared with the log-domain kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import TooLarge

BLANK = 0
MAX_SEQUENCES = 10**7


@dataclass(frozen=True)
class Path:
    symbols: tuple[int, ...]
    log_posterior: float
    posterior: float


def collapse(symbols: Iterable[int]) -> tuple[int, ...]:
    """Merge repeats, then drop blanks. ``(0,1,1,0,1,2,2) -> (1,1,2)``."""
    out = []
    prev = None
    for sym in symbols:
        if sym != prev and sym != BLANK:
            out.append(int(sym))
        prev = sym
    return tuple(out)


def enumerate_paths(T: int, labels: Sequence[int], V: int) -> list[tuple[int, ...]]:
    """Every length-``T`` sequence over ``0..V`` that collapses to ``labels``."""
    if (V + 1) ** T > MAX_SEQUENCES:
        raise TooLarge(f"(V+1)^T = {(V + 1) ** T} exceeds {MAX_SEQUENCES}")
    labels = tuple(labels)
    found = []

    def extend(prefix):
        if collapse(prefix) != labels[: len(collapse(prefix))]:
            return
        if len(prefix) == T:
            if collapse(prefix) == labels:
                found.append(tuple(prefix))
            return
        for sym in range(V + 1):
            prefix.append(sym)
            extend(prefix)
            prefix.pop()

    extend([])
    return found


def count_paths(T: int, labels: Sequence[int]) -> int:
    """Number of length-``T`` paths for ``labels``, by counting over
    (tokens emitted, whether the current frame still repeats the last token)."""
    labels = tuple(labels)
    U = len(labels)
    # state: (k tokens emitted, on_token) where on_token means the last frame
    # was token k (so repeating it does not emit again)
    counts = {(0, False): 1}
    for _ in range(T):
        nxt = {}
        for (k, on_token), n in counts.items():
            moves = [(k, False)]  # blank
            if on_token:
                moves.append((k, True))  # repeat
            if k < U and not (on_token and labels[k] == labels[k - 1]):
                moves.append((k + 1, True))
            for state in moves:
                nxt[state] = nxt.get(state, 0) + n
        counts = nxt
    return counts.get((U, False), 0) + counts.get((U, True), 0)


def score_paths(probs: np.ndarray, paths: Iterable[Sequence[int]]) -> list[Path]:
    """Attach posteriors (product of per-frame probabilities) to each path."""
    probs = np.asarray(probs, dtype=np.float64)
    out = []
    for symbols in paths:
        factors = [float(probs[t, s]) for t, s in enumerate(symbols)]
        with np.errstate(divide="ignore"):
            log_post = float(np.sum(np.log(factors)))
        out.append(Path(tuple(symbols), log_post, math.prod(factors)))
    return out


def oracle_objective(posteriors: Sequence[float], risks: Sequence[float]) -> float:
    """``sum p * r`` in exact rational arithmetic, rounded once at the end."""
    if len(posteriors) != len(risks):
        raise ValueError("posteriors and risks must have equal length")
    return float(sum(Fraction(p) * Fraction(r) for p, r in zip(posteriors, risks)))


def end_frame(symbols: Sequence[int], u: int) -> int | None:
    """Last 1-based frame on which the ``u``-th emitted token is held."""
    k = 0
    prev = None
    last = None
    for t, sym in enumerate(symbols, start=1):
        if sym != BLANK and sym != prev:
            k += 1
        if sym != BLANK and k == u:
            last = t
        prev = sym
    return last


def oracle_group_sums(paths: Iterable[Path], u: int) -> dict[int, float]:
    """Path mass keyed by the end frame of token ``u``."""
    sums: dict[int, float] = {}
    for path in paths:
        tau = end_frame(path.symbols, u)
        sums[tau] = sums.get(tau, 0.0) + path.posterior
    return dict(sorted(sums.items()))


def oracle_downsample(paths: Sequence[Path], U: int, T: int, lam: float) -> float:
    """Risk-weighted mass with ``r = exp(-lam * tau / T)``, tau = end of the last token."""
    posts = [p.posterior for p in paths]
    risks = [math.exp(-lam * end_frame(p.symbols, U) / T) for p in paths]
    return oracle_objective(posts, risks)


def oracle_early_emission(paths: Sequence[Path], U: int, T: int, lam: float) -> list[float]:
    """Per-token ``J'(u)`` with the bias at the heaviest end-frame group."""
    out = []
    for u in range(1, U + 1):
        groups = oracle_group_sums(paths, u)
        best = max(groups.values())
        bias = min(tau for tau, mass in groups.items() if mass == best)
        posts = [p.posterior for p in paths]
        risks = [math.exp(-lam * (end_frame(p.symbols, u) - bias) / T) for p in paths]
        out.append(oracle_objective(posts, risks))
    return out


def total_over_all_labels(probs: np.ndarray, max_len: int | None = None) -> float:
    """Sum of every path's posterior, grouped by collapsed label sequence.

    With normalized rows this is 1: the groups partition all sequences.
    """
    probs = np.asarray(probs, dtype=np.float64)
    T, V1 = probs.shape
    if V1**T > MAX_SEQUENCES:
        raise TooLarge(f"(V+1)^T = {V1 ** T} exceeds {MAX_SEQUENCES}")
    by_label: dict[tuple[int, ...], float] = {}
    for idx in np.ndindex(*([V1] * T)):
        key = collapse(idx)
        if max_len is not None and len(key) > max_len:
            continue
        by_label[key] = by_label.get(key, 0.0) + math.prod(probs[t, s] for t, s in enumerate(idx))
    return math.fsum(by_label.values())
