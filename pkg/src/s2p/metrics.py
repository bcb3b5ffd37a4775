"""Episode outcome records and the evaluation metrics computed on them.

Trajectory score rewards predicted waypoint sequences that match the
expert answer position by position, gated to zero for any episode step
that selected an unsafe point. Danger counts episodes, not events: one
bad selection or crossing marks the whole episode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import EmptyResultSetError, MissingLengthsError


@dataclass(frozen=True)
class PlanRecord:
    """One planning query: what was predicted vs the expert answer."""

    predicted: tuple[int, ...]
    expert: tuple[int, ...]
    safe: bool  # False when any predicted point was dangerous


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    steps: int
    records: tuple[PlanRecord, ...] = ()
    dangerous_hit: bool = False
    agent_length: Optional[float] = None     # m or cells travelled
    shortest_length: Optional[float] = None  # m or cells, start -> goal
    failure_reason: str = ""
    scenario: str = ""


def _match_count(predicted: Sequence[int], expert: Sequence[int],
                 match: str) -> int:
    if match == "positional":
        return sum(1 for p, g in zip(predicted, expert) if p == g)
    if match == "set":
        return len(set(predicted) & set(expert))
    raise ValueError(f"unknown match mode {match!r}")


def episode_term(result: EpisodeResult, match: str = "positional") -> float:
    """This episode's contribution to TS, in [0, 1].

    Single plan: S * Pc / max(|P|, |G|). Episodes that replanned
    average the per-iteration fraction; one unsafe selection anywhere
    zeroes the whole episode (S is an episode-level gate).
    """
    if not result.records:
        return 0.0
    if any(not rec.safe for rec in result.records):
        return 0.0
    total = 0.0
    for rec in result.records:
        denom = max(len(rec.predicted), len(rec.expert))
        if denom == 0:
            continue
        total += _match_count(rec.predicted, rec.expert, match) / denom
    return total / len(result.records)


def trajectory_score(results: Sequence[EpisodeResult],
                     match: str = "positional") -> float:
    """Sum of per-episode safety-gated match fractions (max = len(results))."""
    if not results:
        raise EmptyResultSetError("trajectory score over zero episodes")
    return sum(episode_term(r, match) for r in results)


def danger_count(results: Sequence[EpisodeResult]) -> int:
    """Number of episodes that selected or crossed a dangerous point."""
    if not results:
        raise EmptyResultSetError("danger count over zero episodes")
    return sum(1 for r in results if r.dangerous_hit)


def sr_spl(results: Sequence[EpisodeResult]) -> tuple[float, float]:
    """Success rate and success-weighted path length ratio.

    SPL weighs each success by shortest / max(agent, shortest), so a
    success can never score above 1 even if the agent stopped inside
    the goal radius short of the measured optimum.
    """
    if not results:
        raise EmptyResultSetError("SR/SPL over zero episodes")
    spl_total = 0.0
    for r in results:
        if not r.success:
            continue
        if r.agent_length is None or r.shortest_length is None:
            raise MissingLengthsError(
                "successful episode lacks path lengths for SPL")
        denom = max(r.agent_length, r.shortest_length)
        # already at the goal: zero travel earns full credit
        spl_total += 1.0 if denom == 0 else r.shortest_length / denom
    sr = sum(1 for r in results if r.success) / len(results)
    return sr, spl_total / len(results)
