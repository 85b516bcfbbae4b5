import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brctc import TooLarge, ctc_loss, is_feasible
from brctc.oracle import (
    collapse,
    count_paths,
    end_frame,
    enumerate_paths,
    oracle_group_sums,
    oracle_objective,
    score_paths,
    total_over_all_labels,
)

from conftest import A, B, random_lattices

GROUPING_POSTERIORS = (0.3, 0.1, 0.2, 0.0, 0.1)
GROUPING_RISKS = (1.0, 0.8, 0.8, 0.8, 0.8)


class TestCollapse:
    def test_merges_and_drops_blanks(self):
        a, b = 1, 2
        assert collapse([0, a, a, 0, a, b, b]) == (a, a, b)

    def test_all_blank(self):
        assert collapse([0, 0, 0]) == ()

    def test_identity(self):
        assert collapse([1, 2, 3]) == (1, 2, 3)


class TestEnumerate:
    def test_five_paths(self):
        got = set(enumerate_paths(3, [A, B], 2))
        assert got == {(A, B, 0), (A, B, B), (A, A, B), (A, 0, B), (0, A, B)}

    def test_infeasible_is_empty(self):
        assert enumerate_paths(2, [A, A], 1) == []

    def test_tight(self):
        assert enumerate_paths(3, [1, 2, 3], 3) == [(1, 2, 3)]

    def test_guard(self):
        with pytest.raises(TooLarge):
            enumerate_paths(20, [1], 3)

    @settings(max_examples=60, deadline=None)
    @given(
        T=st.integers(1, 7),
        labels=st.lists(st.integers(1, 3), min_size=1, max_size=4),
    )
    def test_members_collapse_and_count(self, T, labels):
        paths = enumerate_paths(T, labels, 3)
        assert len(set(paths)) == len(paths)
        assert all(collapse(p) == tuple(labels) for p in paths)
        assert len(paths) == count_paths(T, labels)
        assert bool(paths) == is_feasible(T, labels)


class TestObjective:
    def test_grouping_fixture(self):
        assert oracle_objective(GROUPING_POSTERIORS, GROUPING_RISKS) == 0.62

    def test_unit_risks(self):
        assert oracle_objective([0.25, 0.5], [1, 1]) == 0.75

    def test_zero_risks(self):
        assert oracle_objective([0.25, 0.5], [0, 0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            oracle_objective([0.1], [1, 1])


class TestGroups:
    def test_grouping_fixture_partition(self):
        order = [(A, B, 0), (A, B, B), (A, A, B), (A, 0, B), (0, A, B)]
        probs_by_path = dict(zip(order, GROUPING_POSTERIORS))
        paths = [type("P", (), {"symbols": s, "posterior": p})() for s, p in probs_by_path.items()]
        sums = oracle_group_sums(paths, 2)
        assert sums.keys() == {2, 3}
        assert sums[2] == pytest.approx(0.3)
        assert sums[3] == pytest.approx(0.4)

    def test_single_end_frame(self):
        # T=U: every token ends on its own frame
        probs = np.full((2, 3), 1 / 3)
        paths = score_paths(probs, enumerate_paths(2, [A, B], 2))
        assert oracle_group_sums(paths, 1) == {1: pytest.approx(1 / 9)}

    def test_sums_to_total(self):
        for y, labels, V in random_lattices(40, 10):
            paths = score_paths(y.probs, enumerate_paths(y.T, labels, V))
            total = sum(p.posterior for p in paths)
            for u in range(1, len(labels) + 1):
                assert sum(oracle_group_sums(paths, u).values()) == pytest.approx(total, abs=1e-15)

    def test_end_frame(self):
        assert end_frame((0, A, A, 0, A, B), 1) == 3
        assert end_frame((0, A, A, 0, A, B), 2) == 5
        assert end_frame((0, A, A, 0, A, B), 3) == 6


def test_log_posterior_is_sum_of_logs():
    rng = np.random.default_rng(41)
    probs = rng.dirichlet(np.ones(3), size=4)
    for p in score_paths(probs, enumerate_paths(4, [1, 2], 2)):
        assert p.log_posterior == pytest.approx(sum(math.log(probs[t, s]) for t, s in enumerate(p.symbols)))


def test_labels_partition_all_sequences():
    rng = np.random.default_rng(42)
    probs = rng.dirichlet(np.ones(3), size=5)
    assert total_over_all_labels(probs) == pytest.approx(1.0, abs=1e-12)


def test_oracle_matches_lattice():
    for y, labels, V in random_lattices(43, 50):
        paths = score_paths(y.probs, enumerate_paths(y.T, labels, V))
        want = sum(p.posterior for p in paths)
        assert math.exp(-ctc_loss(y, labels).neg_log_objective) == pytest.approx(want, abs=1e-9)
