"""Best-path alignments and posterior-guided trimming of hidden sequences."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import InfeasibleAlignment, LengthMismatch
from .lattice import NEG_INF, GridLike, LabelsLike, _check_feasible, _prepare, as_grid
from .oracle import collapse

DEFAULT_THRESHOLD = 0.99
DEFAULT_MARGIN = 5


@dataclass(frozen=True)
class Alignment:
    """A frame-level path with its log posterior.

    ``token_spans[i]`` is the inclusive 1-based frame interval on which the
    ``i``-th emitted token is held.
    """

    path: tuple[int, ...]
    log_posterior: float
    token_spans: tuple[tuple[int, int], ...]

    @property
    def labels(self) -> tuple[int, ...]:
        return collapse(self.path)

    @property
    def end_frames(self) -> tuple[int, ...]:
        return tuple(end for _, end in self.token_spans)

    @property
    def start_frames(self) -> tuple[int, ...]:
        return tuple(start for start, _ in self.token_spans)


def token_spans(path: Sequence[int]) -> tuple[tuple[int, int], ...]:
    spans = []
    prev = 0
    for t, sym in enumerate(path, start=1):
        if sym != 0:
            if sym == prev:
                spans[-1][1] = t
            else:
                spans.append([t, t])
        prev = sym
    return tuple((a, b) for a, b in spans)


def alignment_from_path(y: GridLike, path: Sequence[int]) -> Alignment:
    y = as_grid(y)
    path = tuple(int(s) for s in path)
    if len(path) != y.T:
        raise LengthMismatch(f"path has {len(path)} frames, grid has {y.T}")
    score = float(sum(y.logp[t, s] for t, s in enumerate(path)))
    return Alignment(path=path, log_posterior=score, token_spans=token_spans(path))


def best_path(y: GridLike, labels: LabelsLike) -> Alignment:
    """Most probable path that collapses to ``labels`` (constrained Viterbi)."""
    y, lp = _prepare(y, labels)
    _check_feasible(y, lp)
    score, back = _kernels.viterbi(y.logp, lp.symbols)
    S = len(lp)
    # ending on the final blank means the last token finished earlier
    s = S - 1 if score[-1, S - 1] >= score[-1, S - 2] else S - 2
    if score[-1, s] == NEG_INF:
        raise InfeasibleAlignment("no path with nonzero probability")
    states = [s]
    for t in range(y.T - 1, 0, -1):
        s = int(back[t, s])
        states.append(s)
    path = [int(lp.symbols[s]) for s in reversed(states)]
    return alignment_from_path(y, path)


def greedy_path(y: GridLike) -> Alignment:
    """Frame-wise argmax path (unconstrained decoding)."""
    y = as_grid(y)
    return alignment_from_path(y, np.argmax(y.logp, axis=1))


@dataclass(frozen=True)
class TrimReport:
    T: int
    m: int
    margin: int
    kept: int
    dsf: float
    oracle_dsf: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def trim_point(
    y: GridLike,
    threshold: float = DEFAULT_THRESHOLD,
    margin: int = DEFAULT_MARGIN,
    num_tokens: int | None = None,
) -> TrimReport:
    """Locate the trailing run of confident blanks.

    ``m`` is the last frame (1-based) whose blank probability is not above
    ``threshold``, or 0 if every frame is a confident blank. ``kept`` is
    ``min(m + margin, T)``. ``num_tokens`` only feeds the reported oracle DSF.
    """
    y = as_grid(y)
    if margin < 0:
        raise ValueError("margin must be >= 0")
    unsure = np.nonzero(y.probs[:, 0] <= threshold)[0]
    m = int(unsure[-1]) + 1 if unsure.size else 0
    kept = min(m + margin, y.T)
    oracle = num_tokens / y.T if num_tokens is not None else None
    return TrimReport(T=y.T, m=m, margin=margin, kept=kept, dsf=kept / y.T, oracle_dsf=oracle)


def trim(hidden, report: TrimReport) -> np.ndarray:
    """Keep the first ``report.kept`` rows of ``hidden``."""
    hidden = np.asarray(hidden)
    if hidden.shape[0] != report.T:
        raise LengthMismatch(f"hidden has {hidden.shape[0]} frames, report covers {report.T}")
    return hidden[: report.kept]
