"""Greedy decentralized pairing scheduler.

Agents are visited slowest first; each unpaired agent estimates, for every
unpaired connected helper that is strictly faster, its best split point and
resulting round time, then pairs with the helper giving the lowest estimate
if that beats training alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from comdml.core import AgentProfile, PairingPlan, SplitProfile, individual_time
from comdml.errors import NoSplits


@dataclass(frozen=True)
class EstimateResult:
    est_time_s: float
    best_split: int
    per_split: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class ScheduleResult:
    """A plan plus the estimates that produced it.

    ``estimates`` maps slow agent id -> EstimateResult for formed pairs;
    ``order`` is the visiting order (slowest first).
    """
    plan: PairingPlan
    estimates: Mapping[int, EstimateResult]
    order: tuple[int, ...]


def fast_agent_time_estimate(j: AgentProfile) -> float:
    """The individual time a helper broadcasts before pairing starts."""
    return individual_time(j)


def agent_training_time(
    i: AgentProfile,
    j: AgentProfile,
    tau_hat_j: float,
    c_ij: float,
    splits: Sequence[SplitProfile],
) -> EstimateResult:
    """Estimated round time of ``i`` when offloading to ``j``, minimized over splits.

    Ties go to the smaller split index.
    """
    if not splits:
        raise NoSplits(f"agent {i.id} has no split profiles")
    n = i.num_batches
    per_split = []
    best_m, best_t = None, math.inf
    for sp in sorted(splits, key=lambda s: s.split_id):
        p_i_m = i.proc_speed / sp.slow_frac
        p_j_m = j.proc_speed / sp.fast_frac
        t = max(n / p_i_m, tau_hat_j + n * sp.interm_bytes / c_ij + n / p_j_m)
        per_split.append((sp.split_id, t))
        if t < best_t:
            best_m, best_t = sp.split_id, t
    return EstimateResult(est_time_s=best_t, best_split=best_m, per_split=tuple(per_split))


def pairing_order(agents: Sequence[AgentProfile]) -> list[AgentProfile]:
    """Descending individual time; ties by lower id."""
    return sorted(agents, key=lambda a: (-individual_time(a), a.id))


def schedule(
    agents: Sequence[AgentProfile],
    splits: Mapping[int, Sequence[SplitProfile]] | Sequence[SplitProfile],
    topology: Mapping[int, Mapping[int, float]] | None = None,
    improvement_threshold: float = 0.0,
) -> ScheduleResult:
    """Run the greedy pairing over one round's agents.

    ``topology`` overrides the agents' own link maps when given. A pair is
    formed only if the estimate is below ``(1 - improvement_threshold)``
    times the offloader's individual time.
    """
    if improvement_threshold < 0:
        raise ValueError("improvement_threshold must be >= 0")
    order = pairing_order(agents)
    tau_hat = {a.id: fast_agent_time_estimate(a) for a in agents}
    paired: set[int] = set()
    pairs = []
    independents = []
    estimates = {}
    for i in order:
        if i.id in paired:
            continue
        links = topology[i.id] if topology is not None else i.links
        i_splits = splits[i.id] if isinstance(splits, Mapping) else splits
        best = None
        for j in sorted(agents, key=lambda a: a.id):
            if j.id == i.id or j.id in paired or j.id not in links:
                continue
            if not tau_hat[j.id] < tau_hat[i.id]:
                continue
            est = agent_training_time(i, j, tau_hat[j.id], links[j.id], i_splits)
            if best is None or est.est_time_s < best[1].est_time_s:
                best = (j.id, est)
        paired.add(i.id)
        if best is not None and best[1].est_time_s < (1.0 - improvement_threshold) * tau_hat[i.id]:
            j_id, est = best
            paired.add(j_id)
            pairs.append((i.id, j_id, est.best_split))
            estimates[i.id] = est
        else:
            independents.append(i.id)
    plan = PairingPlan(pairs=tuple(pairs), independents=tuple(sorted(independents)))
    return ScheduleResult(plan=plan, estimates=estimates, order=tuple(a.id for a in order))


def greedy_pair(
    agents: Sequence[AgentProfile],
    splits: Mapping[int, Sequence[SplitProfile]] | Sequence[SplitProfile],
    topology: Mapping[int, Mapping[int, float]] | None = None,
    improvement_threshold: float = 0.0,
) -> PairingPlan:
    return schedule(agents, splits, topology, improvement_threshold).plan
