"""Reference attacks: mean-shift (ALIE style) and Gaussian random poisoning.

Both consume exactly the same observation interface as the main attack
(the list of benign updates the adversary gets to see), so head-to-head
comparisons are fair by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .fedsim import UpdateVector
from .mathcore import SeededRng

__all__ = ["BenignStats", "alie_update", "alie_z_from_counts", "rmp_update"]


@dataclass(frozen=True)
class BenignStats:
    """Coordinate-wise mean and population standard deviation of observed updates."""

    mean: np.ndarray
    std: np.ndarray
    count: int

    @classmethod
    def from_updates(cls, observed: list[UpdateVector]) -> "BenignStats":
        if len(observed) < 2:
            raise ValueError("need at least two observed updates for a std estimate")
        stacked = np.stack([u.values for u in observed])
        return cls(stacked.mean(axis=0), stacked.std(axis=0, ddof=0), len(observed))


def alie_z_from_counts(n: int, m: int) -> float:
    """Shift multiplier from the classic quantile rule for n agents, m malicious."""
    s = n // 2 + 1 - m
    p = (n - m - s) / (n - m)
    if not 0.0 < p < 1.0:
        raise ValueError(f"counts n={n}, m={m} give a degenerate quantile {p}")
    return NormalDist().inv_cdf(p)


def alie_update(
    stats: BenignStats,
    z: float,
    sign_policy: str = "against",
    *,
    agent_id: int,
    round_index: int,
    claimed_size: int,
) -> UpdateVector:
    """Mean shifted by z standard deviations, coordinate-wise.

    ``"against"`` pushes each coordinate against the sign of the mean (the
    damage-maximising reading); ``"with"`` pushes along it.  Every
    coordinate stays inside [mean - z*std, mean + z*std] by construction.
    """
    if z < 0:
        raise ValueError("shift multiplier must be nonnegative")
    if sign_policy == "against":
        direction = -np.sign(stats.mean)
    elif sign_policy == "with":
        direction = np.sign(stats.mean)
    else:
        raise ValueError(f"unknown sign policy {sign_policy!r}")
    values = stats.mean + direction * (z * stats.std)
    return UpdateVector(
        values, agent_id=agent_id, round=round_index,
        claimed_size=claimed_size, is_malicious=True,
    )


def rmp_update(
    stats: BenignStats,
    scale: float,
    rng: SeededRng,
    *,
    agent_id: int,
    round_index: int,
    claimed_size: int,
) -> UpdateVector:
    """Sample coordinate-wise from N(mean, (scale * std)^2)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    noise = rng.generator.standard_normal(stats.mean.shape[0])
    values = stats.mean + scale * stats.std * noise
    return UpdateVector(
        values, agent_id=agent_id, round=round_index,
        claimed_size=claimed_size, is_malicious=True,
    )
