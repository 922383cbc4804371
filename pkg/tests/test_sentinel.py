from __future__ import annotations

import itertools

import numpy as np
import pytest

from fedmanip.fedsim import UpdateVector
from fedmanip.mathcore import SeededRng, cosine
from fedmanip.sentinel import (
    distance_filter,
    pairwise_similarities,
    similarity_filter,
    similarity_scores,
)


def _upd(values, agent_id):
    return UpdateVector(np.asarray(values, dtype=float), agent_id, 1, 2)


# -- distance filter -----------------------------------------------------------

def test_distance_filter_infinite_threshold_keeps_all():
    ups = [_upd([1.0, 0.0], 0), _upd([100.0, 0.0], 1)]
    result = distance_filter(ups, np.zeros(2), np.inf)
    assert len(result.kept) == 2
    assert not any(v.flagged for v in result.verdicts)


def test_distance_filter_boundary_is_strict():
    ups = [_upd([0.0, 0.0], 0)]
    result = distance_filter(ups, np.zeros(2), 0.0)
    assert result.kept == ups
    assert not result.verdicts[0].flagged


def test_distance_filter_known_distances():
    # Hand-built distances to the origin: 0.5, 1.5, 2.5.
    ups = [_upd([0.5, 0.0], 0), _upd([1.5, 0.0], 1), _upd([2.5, 0.0], 2)]
    result = distance_filter(ups, np.zeros(2), 2.0)
    assert [u.agent_id for u in result.kept] == [0, 1]
    assert [v.metric for v in result.verdicts] == pytest.approx([0.5, 1.5, 2.5])
    assert [v.flagged for v in result.verdicts] == [False, False, True]


def test_distance_filter_empty_kept_falls_back():
    ups = [_upd([5.0, 0.0], 0), _upd([6.0, 0.0], 1)]
    result = distance_filter(ups, np.zeros(2), 1.0)
    assert result.fallback
    assert len(result.kept) == 2
    assert all(v.flagged for v in result.verdicts)


# -- similarity filter ------------------------------------------------------------

def test_similarity_filter_identical_updates_degenerate():
    ups = [_upd([1.0, 1.0], i) for i in range(3)]
    result = similarity_filter(ups, 0.99)
    assert result.fallback
    assert len(result.kept) == 3
    assert all(v.metric == pytest.approx(1.0) for v in result.verdicts)


def test_similarity_filter_orthogonal_all_kept():
    ups = [_upd([1.0, 0.0, 0.0], 0), _upd([0.0, 1.0, 0.0], 1), _upd([0.0, 0.0, 1.0], 2)]
    result = similarity_filter(ups, 0.0)
    assert len(result.kept) == 3
    assert all(v.metric == pytest.approx(0.0, abs=1e-12) for v in result.verdicts)


def test_similarity_scores_match_pairwise_oracle():
    gen = SeededRng(1).split("s").generator
    ups = [_upd(gen.standard_normal(5), i) for i in range(4)]
    scores = similarity_scores(ups, "mean")
    for u in ups:
        others = [cosine(u.values, v.values) for v in ups if v.agent_id != u.agent_id]
        assert scores[u.agent_id] == pytest.approx(np.mean(others), abs=1e-12)
    scores_max = similarity_scores(ups, "max")
    for u in ups:
        others = [cosine(u.values, v.values) for v in ups if v.agent_id != u.agent_id]
        assert scores_max[u.agent_id] == pytest.approx(np.max(others), abs=1e-12)


def test_similarity_filter_single_update_kept():
    result = similarity_filter([_upd([1.0], 0)], 0.5)
    assert len(result.kept) == 1
    assert not result.verdicts[0].flagged


# -- invariants ---------------------------------------------------------------------

def test_filters_order_invariant():
    gen = SeededRng(2).split("s").generator
    ups = [_upd(gen.standard_normal(4), i) for i in range(4)]
    ref = gen.standard_normal(4)
    base_d = {v.agent_id: v.flagged for v in distance_filter(ups, ref, 1.5).verdicts}
    base_s = {v.agent_id: v.flagged for v in similarity_filter(ups, 0.3).verdicts}
    for perm in itertools.permutations(ups):
        got_d = {v.agent_id: v.flagged for v in distance_filter(list(perm), ref, 1.5).verdicts}
        got_s = {v.agent_id: v.flagged for v in similarity_filter(list(perm), 0.3).verdicts}
        assert got_d == base_d
        assert got_s == base_s


def test_filter_composition_commutes():
    gen = SeededRng(3).split("s").generator
    ups = [_upd(gen.standard_normal(4), i) for i in range(5)]
    ref = gen.standard_normal(4)
    d_then_s_ids = None
    s_then_d_ids = None
    # Both orders, thresholds computed on the full submission either way.
    d_first = distance_filter(ups, ref, 2.0)
    s_on_full = similarity_filter(ups, 0.4)
    flagged = {v.agent_id for v in d_first.verdicts if v.flagged}
    flagged |= {v.agent_id for v in s_on_full.verdicts if v.flagged}
    d_then_s_ids = [u.agent_id for u in ups if u.agent_id not in flagged]

    s_first = similarity_filter(ups, 0.4)
    d_on_full = distance_filter(ups, ref, 2.0)
    flagged = {v.agent_id for v in s_first.verdicts if v.flagged}
    flagged |= {v.agent_id for v in d_on_full.verdicts if v.flagged}
    s_then_d_ids = [u.agent_id for u in ups if u.agent_id not in flagged]

    assert d_then_s_ids == s_then_d_ids


def test_verdicts_cover_every_update_once():
    gen = SeededRng(4).split("s").generator
    ups = [_upd(gen.standard_normal(3), i) for i in range(5)]
    result = distance_filter(ups, np.zeros(3), 1.0)
    assert sorted(v.agent_id for v in result.verdicts) == [0, 1, 2, 3, 4]
    result = similarity_filter(ups, 0.9)
    assert sorted(v.agent_id for v in result.verdicts) == [0, 1, 2, 3, 4]


def test_pairwise_similarities_complete():
    gen = SeededRng(5).split("s").generator
    ups = [_upd(gen.standard_normal(3), i) for i in range(4)]
    pairs = pairwise_similarities(ups)
    assert len(pairs) == 6
    assert (0, 1) in pairs and (2, 3) in pairs
