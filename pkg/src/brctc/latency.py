"""Streaming latency split into data-collecting, computational and drift parts.

* data-collecting latency: ``chunk_ms / 2 + right_context_ms``
* computational latency: ``chunk_ms * rtf``
* drift latency: mean over matched tokens of ``(tau - tau_ref) * frame_ms``,
  where ``tau`` is the frame on which the predicted token's emission ends and
  ``tau_ref`` the reference start frame. Only tokens on a longest common
  subsequence of hypothesis and reference are matched.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

from .align import Alignment
from .errors import NoMatchedTokens


@dataclass(frozen=True)
class LatencyReport:
    dcl: float
    cl: float
    dl: float | None
    matched_tokens: int

    @property
    def total_hw_independent(self) -> float | None:
        return None if self.dl is None else self.dcl + self.dl

    @property
    def total(self) -> float | None:
        return None if self.dl is None else self.dcl + self.dl + self.cl

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_hw_independent"] = self.total_hw_independent
        d["total"] = self.total
        return d


def _lcs_table(a: Sequence, b: Sequence) -> list[list[int]]:
    # table[i][j] = LCS length of a[i:] and b[j:]
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                table[i][j] = table[i + 1][j + 1] + 1
            else:
                table[i][j] = max(table[i + 1][j], table[i][j + 1])
    return table


def lcs_match(hyp: Sequence, ref: Sequence) -> list[tuple[int, int]]:
    """A longest common subsequence as 0-based ``(hyp_index, ref_index)`` pairs.

    Among all maximum-length matchings the lexicographically smallest
    sequence of pairs is returned.
    """
    table = _lcs_table(hyp, ref)
    pairs = []
    i0 = j0 = 0
    need = table[0][0]
    while need:
        found = None
        for i in range(i0, len(hyp)):
            for j in range(j0, len(ref)):
                if hyp[i] == ref[j] and table[i + 1][j + 1] == need - 1:
                    found = (i, j)
                    break
            if found:
                break
        pairs.append(found)
        i0, j0 = found[0] + 1, found[1] + 1
        need -= 1
    return pairs


def drift_latency(
    alignment: Alignment,
    ref_starts: Sequence[int],
    frame_ms: float,
    matching: Sequence[tuple[int, int]],
) -> float:
    """Mean ``(end - ref_start) * frame_ms`` over matched tokens, in ms."""
    if not matching:
        raise NoMatchedTokens("drift latency needs at least one matched token")
    ends = alignment.end_frames
    diffs = [ends[i] - ref_starts[j] for i, j in matching]
    return sum(diffs) / len(diffs) * frame_ms


def latency_report(
    chunk_ms: float,
    right_context_ms: float,
    rtf: float,
    dl_ms: float | None,
    matched_tokens: int = 0,
) -> LatencyReport:
    if chunk_ms < 0 or right_context_ms < 0 or rtf < 0:
        raise ValueError("chunk, right context and rtf must be non-negative")
    return LatencyReport(
        dcl=chunk_ms / 2 + right_context_ms,
        cl=chunk_ms * rtf,
        dl=dl_ms,
        matched_tokens=matched_tokens,
    )


def utterance_latency(
    alignment: Alignment,
    ref_tokens: Sequence[int],
    ref_starts: Sequence[int],
    frame_ms: float,
    chunk_ms: float = 0.0,
    right_context_ms: float = 0.0,
    rtf: float = 0.0,
) -> LatencyReport:
    """Full report for one utterance; ``dl`` is None when nothing matches."""
    matching = lcs_match(alignment.labels, ref_tokens)
    dl = drift_latency(alignment, ref_starts, frame_ms, matching) if matching else None
    return latency_report(chunk_ms, right_context_ms, rtf, dl, len(matching))
