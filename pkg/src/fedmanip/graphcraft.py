"""Adversary-side correlation graph over selected update coordinates.

The adversary stacks the benign updates it can see into a feature matrix
(one row per observed update, one column per selected parameter coordinate)
and connects coordinates by the cosine similarity of their columns.  The
diagonal is kept at zero; self-loops re-enter later through the A + I term
of the graph network's propagation matrix, so no information is lost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mathcore import SeededRng
from .fedsim import UpdateVector

__all__ = ["CorrelationGraph", "build_graph", "observe_benign", "select_params"]


@dataclass(frozen=True)
class CorrelationGraph:
    """Feature matrix, signed cosine adjacency and coordinate selection.

    ``features`` is (B, M) with rows ordered by agent id; ``adjacency`` is
    symmetric with zero diagonal and entries in [-1, 1].  Columns whose
    feature vector has zero norm get similarity 0 everywhere and are flagged
    in ``zero_norm_cols``.
    """

    features: np.ndarray
    adjacency: np.ndarray
    selected_idx: np.ndarray
    round: int
    zero_norm_cols: np.ndarray

    @property
    def num_observed(self) -> int:
        return self.features.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.features.shape[1]


def observe_benign(
    updates: list[UpdateVector], fraction: float, rng: SeededRng
) -> list[UpdateVector]:
    """Pick the benign subset the adversary gets to see this round.

    The subset size is ceil(fraction * number of benign updates); selection
    is a seeded draw without replacement, returned in agent-id order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("visibility fraction must lie in (0, 1]")
    benign = sorted((u for u in updates if not u.is_malicious), key=lambda u: u.agent_id)
    if not benign:
        raise ValueError("no benign updates to observe")
    count = math.ceil(fraction * len(benign))
    picks = rng.generator.choice(len(benign), size=count, replace=False)
    return [benign[i] for i in sorted(picks)]


def select_params(
    observed: list[UpdateVector], num_selected: int, policy: str = "variance-top"
) -> np.ndarray:
    """Choose which update coordinates become graph nodes.

    ``"variance-top"`` ranks coordinates by their variance across the
    observed updates (ties broken toward the lower index); ``"all"`` is the
    identity selection and requires ``num_selected`` to equal the full
    dimension.  Indices are returned ascending.
    """
    if num_selected < 2:
        raise ValueError("need at least two selected coordinates")
    stacked = np.stack([u.values for u in observed])
    full_dim = stacked.shape[1]
    if num_selected > full_dim:
        raise ValueError(f"cannot select {num_selected} of {full_dim} coordinates")
    if policy == "all":
        if num_selected != full_dim:
            raise ValueError("policy 'all' requires selecting every coordinate")
        return np.arange(full_dim)
    if policy != "variance-top":
        raise ValueError(f"unknown selection policy {policy!r}")
    variances = stacked.var(axis=0)
    ranked = np.argsort(-variances, kind="stable")
    return np.sort(ranked[:num_selected])


def build_graph(
    observed: list[UpdateVector], selected_idx: np.ndarray, round_index: int = 0
) -> CorrelationGraph:
    """Assemble the feature matrix and the pairwise column-cosine adjacency."""
    if len(observed) < 2:
        raise ValueError("need at least two observed updates to build a graph")
    selected_idx = np.asarray(selected_idx, dtype=np.int64)
    if selected_idx.shape[0] < 2:
        raise ValueError("need at least two selected coordinates")
    ordered = sorted(observed, key=lambda u: u.agent_id)
    feats = np.stack([u.values[selected_idx] for u in ordered])

    norms = np.linalg.norm(feats, axis=0)
    zero_cols = norms == 0.0
    safe = np.where(zero_cols, 1.0, norms)
    unit = feats / safe
    unit[:, zero_cols] = 0.0
    raw = unit.T @ unit
    # Mirror the strict upper triangle so symmetry is exact, zero diagonal.
    upper = np.triu(raw, k=1)
    adjacency = np.clip(upper + upper.T, -1.0, 1.0)
    return CorrelationGraph(
        features=feats,
        adjacency=adjacency,
        selected_idx=selected_idx,
        round=round_index,
        zero_norm_cols=zero_cols,
    )
