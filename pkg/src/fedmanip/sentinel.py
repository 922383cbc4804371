"""Server-side defenses: distance outlier filter and similarity score filter.

Both filters score every submitted update against the full submission (so
their composition is order independent), flag strictly-above-threshold
scores, and never stall aggregation: a filter that would discard everything
falls back to keeping everything and raises an alarm flag instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fedsim import UpdateVector
from .mathcore import cosine, euclid

__all__ = [
    "DefenseVerdict",
    "FilterResult",
    "distance_filter",
    "distances_to_reference",
    "pairwise_similarities",
    "similarity_filter",
    "similarity_scores",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DefenseVerdict:
    """One agent's score under one filter; flagged means strictly above threshold."""

    agent_id: int
    metric: float
    threshold: float
    flagged: bool
    round: int
    kind: str


@dataclass(frozen=True)
class FilterResult:
    kept: list[UpdateVector]
    verdicts: list[DefenseVerdict]
    fallback: bool = False


def distances_to_reference(
    updates: list[UpdateVector], reference: np.ndarray
) -> dict[int, float]:
    """Euclidean distance of each update to a reference vector, by agent id."""
    return {u.agent_id: euclid(u.values, reference) for u in updates}


def pairwise_similarities(updates: list[UpdateVector]) -> dict[tuple[int, int], float]:
    """Cosine similarity for every unordered agent pair."""
    ordered = sorted(updates, key=lambda u: u.agent_id)
    sims = {}
    for i, a in enumerate(ordered):
        for b in ordered[i + 1 :]:
            sims[(a.agent_id, b.agent_id)] = cosine(a.values, b.values)
    return sims


def similarity_scores(
    updates: list[UpdateVector], policy: str = "mean"
) -> dict[int, float]:
    """Aggregate similarity score of each update against all the others."""
    if policy not in ("mean", "max"):
        raise ValueError(f"unknown score policy {policy!r}")
    pair = pairwise_similarities(updates)
    scores = {}
    for u in updates:
        others = [
            s for (i, j), s in pair.items() if u.agent_id in (i, j)
        ]
        if not others:
            scores[u.agent_id] = 0.0
        elif policy == "mean":
            scores[u.agent_id] = float(np.mean(others))
        else:
            scores[u.agent_id] = float(np.max(others))
    return scores


def distance_filter(
    updates: list[UpdateVector],
    reference_global_delta: np.ndarray,
    d_threshold: float,
    round_index: int = 0,
) -> FilterResult:
    """Drop updates whose distance to the reference exceeds the threshold.

    The reference is the previous round's realised global update (the
    current one does not exist before aggregation).  An empty survivor set
    falls back to keeping everything, with an alarm.
    """
    verdicts = [
        DefenseVerdict(
            agent_id=u.agent_id,
            metric=(d := euclid(u.values, reference_global_delta)),
            threshold=d_threshold,
            flagged=d > d_threshold,
            round=round_index,
            kind="distance",
        )
        for u in updates
    ]
    flagged_ids = {v.agent_id for v in verdicts if v.flagged}
    kept = [u for u in updates if u.agent_id not in flagged_ids]
    if updates and not kept:
        log.warning(
            "distance filter would discard every update at round %d; keeping all",
            round_index,
        )
        return FilterResult(list(updates), verdicts, fallback=True)
    return FilterResult(kept, verdicts)


def similarity_filter(
    updates: list[UpdateVector],
    sim_threshold: float,
    score_policy: str = "mean",
    round_index: int = 0,
) -> FilterResult:
    """Drop updates whose aggregate similarity score exceeds the threshold."""
    if len(updates) == 1:
        log.info("single update at round %d; similarity score undefined, keeping it", round_index)
        verdict = DefenseVerdict(
            agent_id=updates[0].agent_id,
            metric=0.0,
            threshold=sim_threshold,
            flagged=False,
            round=round_index,
            kind="similarity",
        )
        return FilterResult(list(updates), [verdict])
    scores = similarity_scores(updates, score_policy)
    verdicts = [
        DefenseVerdict(
            agent_id=u.agent_id,
            metric=scores[u.agent_id],
            threshold=sim_threshold,
            flagged=scores[u.agent_id] > sim_threshold,
            round=round_index,
            kind="similarity",
        )
        for u in updates
    ]
    flagged_ids = {v.agent_id for v in verdicts if v.flagged}
    kept = [u for u in updates if u.agent_id not in flagged_ids]
    if updates and not kept:
        log.warning(
            "similarity filter would discard every update at round %d; keeping all",
            round_index,
        )
        return FilterResult(list(updates), verdicts, fallback=True)
    return FilterResult(kept, verdicts)
