"""Acceptance harness: eleven numbered checks with a byte-stable report.

Each ``criterion_N`` returns a :class:`Outcome`. :func:`build_report` renders
criteria 1-10 as text that contains no timings, so two runs with the same
seeds must produce identical bytes (criterion 11 compares two such runs).

Run ``python -m brctc.acceptance --report out.txt`` to produce the report
outside the test suite.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .align import trim_point
from .gradcheck import check_instance, random_grid, random_instance
from .latency import latency_report, lcs_match
from .lattice import PosteriorGrid, ctc_loss, ctc_loss_at_frame
from .oracle import (
    enumerate_paths,
    oracle_downsample,
    oracle_early_emission,
    oracle_group_sums,
    oracle_objective,
    score_paths,
)
from .risk import RiskSpec, brctc_downsample_loss, brctc_earlyemit_loss, group_masses, per_token_objectives
from .toy import ToyTaskConfig, run_experiment

# settings of the toy direction checks; see the project notes for how they were chosen
TOY_SEEDS = (0, 1, 2)
TOY_TASK = {"frames_per_token": 10, "noise_scale": 0.15, "num_train": 200, "num_eval": 100}
TOY_TRAINING = {"epochs": 1500, "lr": 0.15, "window": 6, "hidden": 32}
TOY_LAMBDA = {"downsample": 10.0, "early_emission": 10.0}


@dataclass
class Outcome:
    number: int
    title: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"criterion {self.number:>2} [{'PASS' if self.passed else 'FAIL'}] {self.title}: {self.detail}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.process_time()
        out = fn(*args, **kwargs)
        out.seconds = time.process_time() - start
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _lattices(seed: int, count: int):
    rng = np.random.default_rng(seed)
    return [random_grid(rng, T_max=8, U_max=4, V_max=3) for _ in range(count)]


@_timed
def criterion_1(count: int = 60) -> Outcome:
    """Lattice, downsample and early-emission values against path enumeration."""
    start = time.process_time()
    worst = {"ctc": 0.0, "downsample": 0.0, "early_emission": 0.0}
    for y, labels in _lattices(101, count):
        paths = score_paths(y.probs, enumerate_paths(y.T, labels, y.V))
        U = len(labels)
        total = math.fsum(p.posterior for p in paths)
        worst["ctc"] = max(worst["ctc"], abs(math.exp(-ctc_loss(y, labels).neg_log_objective) - total))
        for lam in (0.0, 1.0, 10.0):
            got = math.exp(-brctc_downsample_loss(y, labels, RiskSpec("downsample", lam)).neg_log_objective)
            worst["downsample"] = max(worst["downsample"], abs(got - oracle_downsample(paths, U, y.T, lam)))
        for lam in (1.0, 20.0):
            got = np.exp(per_token_objectives(y, labels, RiskSpec("early_emission", lam)))
            want = np.array(oracle_early_emission(paths, U, y.T, lam))
            worst["early_emission"] = max(worst["early_emission"], float(np.max(np.abs(got - want))))
    elapsed = time.process_time() - start
    err = max(worst.values())
    ok = err <= 1e-9 and elapsed < 30
    return Outcome(1, "oracle equivalence", ok, f"{count} lattices, max |lattice - oracle| = {err:.2e} (<= 1e-9), under 30 s: {elapsed < 30}", worst)


FIXTURE_PATHS = ((1, 2, 0), (1, 2, 2), (1, 1, 2), (1, 0, 2), (0, 1, 2))
FIXTURE_POSTERIORS = (0.3, 0.1, 0.2, 0.0, 0.1)
FIXTURE_RISKS = (1.0, 0.8, 0.8, 0.8, 0.8)


@dataclass(frozen=True)
class _FixturePath:
    symbols: tuple
    posterior: float


@_timed
def criterion_2() -> Outcome:
    value = oracle_objective(FIXTURE_POSTERIORS, FIXTURE_RISKS)
    groups = oracle_group_sums([_FixturePath(s, p) for s, p in zip(FIXTURE_PATHS, FIXTURE_POSTERIORS)], 2)
    partition_ok = groups.keys() == {2, 3} and abs(groups[2] - 0.3) < 1e-15 and abs(groups[3] - 0.4) < 1e-15
    ok = value == 0.62 and partition_ok
    shown = {k: round(v, 15) for k, v in groups.items()}
    return Outcome(2, "grouping fixture", ok, f"objective = {value!r} (exactly 0.62), tau partition = {shown}", {"objective": value})


@_timed
def criterion_3(count: int = 20) -> Outcome:
    worst = 0.0
    for y, labels in _lattices(103, count):
        base = ctc_loss(y, labels).neg_log_objective
        ds = brctc_downsample_loss(y, labels, RiskSpec("downsample", 0.0)).neg_log_objective
        ee = brctc_earlyemit_loss(y, labels, RiskSpec("early_emission", 0.0)).neg_log_objective
        worst = max(worst, abs(ds - base), abs(ee - base))
    return Outcome(3, "vanilla reduction", worst <= 1e-12, f"{count} instances, max |risk loss(lambda=0) - ctc| = {worst:.2e} (<= 1e-12)")


@_timed
def criterion_4(count: int = 20) -> Outcome:
    worst = 0.0
    for y, labels in _lattices(104, count):
        values = [ctc_loss_at_frame(y, labels, t) for t in range(1, y.T + 1)]
        worst = max(worst, max(values) - min(values))
    return Outcome(4, "frame invariance", worst <= 1e-9, f"{count} instances, max spread over frames = {worst:.2e} (<= 1e-9)")


@_timed
def criterion_5(count: int = 50) -> Outcome:
    worst = 0.0
    for y, labels in _lattices(105, count):
        p = math.exp(-ctc_loss(y, labels).neg_log_objective)
        for u in range(1, len(labels) + 1):
            worst = max(worst, abs(float(np.exp(group_masses(y, labels, u)).sum()) - p))
    return Outcome(5, "partition conservation", worst <= 1e-9, f"{count} instances, max |sum_tau mass - P| = {worst:.2e} (<= 1e-9)")


@_timed
def criterion_6(count: int = 20, step: float = 1e-5) -> Outcome:
    start = time.process_time()
    rng = np.random.default_rng(106)
    worst = {}
    skipped = 0
    for kind, lam in (("vanilla", 0.0), ("downsample", 10.0), ("early_emission", 20.0)):
        spec = RiskSpec(kind, lam)
        checked = 0
        worst[kind] = 0.0
        while checked < count:
            logits, labels = random_instance(rng, T_max=8, U_max=4, V=3)
            res = check_instance(logits, labels, spec, step)
            if res.skipped:
                skipped += 1
                continue
            checked += 1
            worst[kind] = max(worst[kind], res.rel_error)
    elapsed = time.process_time() - start
    err = max(worst.values())
    ok = err < 1e-4 and elapsed < 120
    detail = (
        f"{count} instances per kind, max relative error = {err:.2e} (< 1e-4), "
        f"{skipped} argmax-unstable instances skipped, under 2 min: {elapsed < 120}"
    )
    return Outcome(6, "gradient check", ok, detail, worst)


@_timed
def criterion_7(count: int = 20) -> Outcome:
    grid = (0.0, 1.0, 5.0, 10.0, 30.0, 100.0)
    violations = 0
    for y, labels in _lattices(107, count):
        values = [brctc_downsample_loss(y, labels, RiskSpec("downsample", lam)).neg_log_objective for lam in grid]
        violations += sum(not a < b for a, b in zip(values, values[1:]))
    return Outcome(7, "monotonicity", violations == 0, f"{count} instances, lambda grid {list(grid)}, {violations} steps where the loss failed to rise")


@_timed
def criterion_8() -> Outcome:
    blank = np.where(np.arange(1, 21) >= 11, 0.995, 0.5)
    y = PosteriorGrid.from_probs(np.stack([blank, 1 - blank], axis=1))
    report = trim_point(y)
    ok = (report.m, report.kept, report.dsf, report.margin) == (10, 15, 0.75, 5)
    return Outcome(8, "trim rule", ok, f"m = {report.m}, kept = {report.kept}, dsf = {report.dsf} with default threshold 0.99 and margin {report.margin}")


@lru_cache(maxsize=None)
def _lcs_len(a: tuple, b: tuple) -> int:
    if not a or not b:
        return 0
    if a[0] == b[0]:
        return 1 + _lcs_len(a[1:], b[1:])
    return max(_lcs_len(a[1:], b), _lcs_len(a, b[1:]))


@_timed
def criterion_9(count: int = 300) -> Outcome:
    cl = latency_report(160, 0, 0.176, None).cl
    dcl = latency_report(480, 0, 0.0, None).dcl
    rng = np.random.default_rng(109)
    mismatches = 0
    for _ in range(count):
        a = tuple(int(k) for k in rng.integers(1, 4, size=int(rng.integers(0, 13))))
        b = tuple(int(k) for k in rng.integers(1, 4, size=int(rng.integers(0, 13))))
        mismatches += len(lcs_match(a, b)) != _lcs_len(a, b)
    ok = round(cl) == 28 and abs(cl - 28.16) < 1e-12 and dcl == 240 and mismatches == 0
    return Outcome(9, "latency arithmetic", ok, f"CL(160 ms, rtf 0.176) = {cl:.2f} ms, DCL(480 ms chunk) = {dcl:g} ms, LCS mismatches {mismatches}/{count}")


def toy_runs(seeds=TOY_SEEDS) -> dict:
    """Per-seed eval summaries for the three training criteria."""
    runs = {}
    for kind in ("vanilla", "downsample", "early_emission"):
        spec = RiskSpec(kind, TOY_LAMBDA.get(kind, 0.0))
        rows = []
        for seed in seeds:
            cfg = ToyTaskConfig(seed=seed, **TOY_TASK)
            _, stats = run_experiment(cfg, spec, **TOY_TRAINING)
            rows.append(stats["summary"])
        runs[kind] = rows
    return runs


def _pooled(rows, key):
    return float(np.mean([r[key] for r in rows]))


@_timed
def criterion_10() -> Outcome:
    start = time.process_time()
    runs = toy_runs()
    elapsed = time.process_time() - start
    v, d, e = runs["vanilla"], runs["downsample"], runs["early_emission"]
    dsf_gap = _pooled(v, "mean_dsf") - _pooled(d, "mean_dsf")
    ds_ter = _pooled(d, "ter") - _pooled(v, "ter")
    dl_gap = _pooled(v, "mean_dl") - _pooled(e, "mean_dl")
    ee_ter = _pooled(e, "ter") - _pooled(v, "ter")
    ok_a = dsf_gap >= 0.05 and ds_ter <= 0.02
    ok_b = dl_gap >= 1.0 and ee_ter <= 0.02
    per_seed = "; ".join(
        f"seed {s}: dsf {vr['mean_dsf']:.3f}/{dr['mean_dsf']:.3f} ter {vr['ter']:.3f}/{dr['ter']:.3f}/{er['ter']:.3f} "
        f"dl {vr['mean_dl']:.2f}/{er['mean_dl']:.2f}"
        for s, vr, dr, er in zip(TOY_SEEDS, v, d, e)
    )
    detail = (
        f"(a) DSF gap {dsf_gap:.3f} (>= 0.05), TER change {ds_ter:+.4f} (<= +0.02): {'pass' if ok_a else 'fail'}; "
        f"(b) DL gap {dl_gap:.2f} frames (>= 1), TER change {ee_ter:+.4f} (<= +0.02): {'pass' if ok_b else 'fail'}; "
        f"under 10 min: {elapsed < 600} [{per_seed}]"
    )
    metrics = {"dsf_gap": dsf_gap, "ds_ter_delta": ds_ter, "dl_gap": dl_gap, "ee_ter_delta": ee_ter, "runs": runs}
    return Outcome(10, "toy direction checks", ok_a and ok_b and elapsed < 600, detail, metrics)


CRITERIA = (
    criterion_1,
    criterion_2,
    criterion_3,
    criterion_4,
    criterion_5,
    criterion_6,
    criterion_7,
    criterion_8,
    criterion_9,
    criterion_10,
)


def build_report(outcomes) -> str:
    """Timing-free text report; identical inputs give identical bytes."""
    lines = [o.line() for o in outcomes]
    lines.append(json.dumps({str(o.number): o.metrics for o in outcomes}, sort_keys=True))
    return "\n".join(lines) + "\n"


def run_all(skip_toy: bool = False) -> list[Outcome]:
    return [c() for c in CRITERIA if not (skip_toy and c is criterion_10)]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m brctc.acceptance", description="run acceptance criteria 1-10")
    parser.add_argument("--report", default="-", help="where to write the report ('-' for stdout)")
    parser.add_argument("--skip-toy", action="store_true", help="leave out the toy training criterion")
    args = parser.parse_args(argv)
    outcomes = run_all(args.skip_toy)
    text = build_report(outcomes)
    if args.report == "-":
        sys.stdout.write(text)
    else:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)
    for o in outcomes:
        print(f"{o.line()} ({o.seconds:.1f} s)", file=sys.stderr)
    return 0 if all(o.passed for o in outcomes) else 2


if __name__ == "__main__":
    sys.exit(main())
