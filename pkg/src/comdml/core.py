"""Domain types and the per-round analytical time model.

Times are seconds (float64), bandwidths bytes/second, processing speeds
batches/second of the full unsplit model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from comdml.errors import InvalidPlan, MissingLink

# Upper bound on slow_frac; the auxiliary head may push the slow side
# above its pure layer share.
SLOW_FRAC_CAP = 1.5


@dataclass(frozen=True)
class AgentProfile:
    id: int
    proc_speed: float
    num_batches: int
    dataset_size: int = 0
    # peer id -> bytes/s; a missing entry means disconnected
    links: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.proc_speed > 0:
            raise ValueError(f"agent {self.id}: proc_speed must be > 0, got {self.proc_speed}")
        if self.num_batches < 0 or self.dataset_size < 0:
            raise ValueError(f"agent {self.id}: negative batch or sample count")
        if self.id in self.links:
            raise ValueError(f"agent {self.id}: self-edge in links")
        for peer, bw in self.links.items():
            if not bw > 0:
                raise ValueError(f"agent {self.id}: link to {peer} must be > 0, got {bw}")


@dataclass(frozen=True)
class SplitProfile:
    split_id: int
    slow_frac: float
    fast_frac: float
    interm_bytes: float
    # fast-side parameter bytes, shipped once per round if partial-model
    # transfer is modeled
    offload_bytes: float = 0.0

    def __post_init__(self):
        if not 0 < self.slow_frac <= SLOW_FRAC_CAP:
            raise ValueError(f"split {self.split_id}: slow_frac {self.slow_frac} outside (0, {SLOW_FRAC_CAP}]")
        if not 0 < self.fast_frac <= 1:
            raise ValueError(f"split {self.split_id}: fast_frac {self.fast_frac} outside (0, 1]")
        if self.interm_bytes < 0 or self.offload_bytes < 0:
            raise ValueError(f"split {self.split_id}: negative byte count")


@dataclass(frozen=True)
class PairingPlan:
    pairs: tuple[tuple[int, int, int], ...] = ()
    independents: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        object.__setattr__(self, "independents", tuple(self.independents))

    def agent_ids(self) -> list[int]:
        ids = [a for s, f, _ in self.pairs for a in (s, f)]
        return ids + list(self.independents)

    def validate(self, agent_ids: Sequence[int]) -> None:
        """Raise InvalidPlan unless the plan partitions ``agent_ids``."""
        seen = self.agent_ids()
        if len(seen) != len(set(seen)):
            raise InvalidPlan(f"agent listed more than once in plan: {sorted(seen)}")
        if set(seen) != set(agent_ids):
            raise InvalidPlan(
                f"plan covers {sorted(set(seen))} but agents are {sorted(set(agent_ids))}"
            )


@dataclass(frozen=True)
class AgentTimes:
    compute_s: float
    comm_s: float
    idle_s: float
    total_s: float


@dataclass(frozen=True)
class RoundReport:
    per_agent: Mapping[int, AgentTimes]
    makespan_s: float


def individual_time(a: AgentProfile) -> float:
    """Time for ``a`` to train the full model on all its batches alone."""
    return a.num_batches / a.proc_speed


def _link(slow: AgentProfile, fast: AgentProfile) -> float:
    try:
        return slow.links[fast.id]
    except KeyError:
        raise MissingLink(f"no link {slow.id} -> {fast.id}") from None


def slow_side_time(slow: AgentProfile, sp: SplitProfile) -> float:
    return slow.num_batches / (slow.proc_speed / sp.slow_frac)


def offload_comm_time(slow: AgentProfile, sp: SplitProfile, bandwidth: float) -> float:
    return slow.num_batches * sp.interm_bytes / bandwidth


def offloaded_compute_time(slow: AgentProfile, fast: AgentProfile, sp: SplitProfile) -> float:
    return slow.num_batches / (fast.proc_speed / sp.fast_frac)


def pair_time(
    slow: AgentProfile,
    fast: AgentProfile,
    sp: SplitProfile,
    fast_own_time: float,
) -> tuple[float, float]:
    """Round times of an offloading pair.

    Returns ``(slow_total, fast_total)``. Transfer of intermediate data is
    charged to the helper's timeline and overlaps the offloader's compute.
    """
    c = _link(slow, fast)
    slow_total = slow_side_time(slow, sp)
    fast_total = fast_own_time + offload_comm_time(slow, sp, c) + offloaded_compute_time(slow, fast, sp)
    return slow_total, fast_total


def _split_lookup(profiles, agent_id: int, split_id: int) -> SplitProfile:
    splits = profiles[agent_id] if isinstance(profiles, Mapping) else profiles
    for sp in splits:
        if sp.split_id == split_id:
            return sp
    raise InvalidPlan(f"split {split_id} not profiled for agent {agent_id}")


def plan_makespan(
    agents: Sequence[AgentProfile],
    plan: PairingPlan,
    profiles: Mapping[int, Sequence[SplitProfile]] | Sequence[SplitProfile],
    *,
    partial_model_transfer: bool = False,
) -> RoundReport:
    """Evaluate a pairing plan: per-agent times and the round makespan.

    ``profiles`` is either a per-agent mapping or one list shared by all
    agents. With ``partial_model_transfer`` the fast-side parameters are
    sent once over the pair's link and added to the helper's comm time.
    """
    by_id = {a.id: a for a in agents}
    if len(by_id) != len(agents):
        raise InvalidPlan("duplicate agent ids")
    plan.validate(list(by_id))

    # agent id -> (compute, comm, total)
    times: dict[int, tuple[float, float, float]] = {}
    for i in plan.independents:
        t = individual_time(by_id[i])
        times[i] = (t, 0.0, t)
    for s, f, m in plan.pairs:
        slow, fast = by_id[s], by_id[f]
        sp = _split_lookup(profiles, s, m)
        c = _link(slow, fast)
        own = individual_time(fast)
        comm = offload_comm_time(slow, sp, c)
        if partial_model_transfer:
            comm += sp.offload_bytes / c
        extra = offloaded_compute_time(slow, fast, sp)
        t_slow = slow_side_time(slow, sp)
        times[s] = (t_slow, 0.0, t_slow)
        # summed in the same order as the scheduler's estimate
        times[f] = (own + extra, comm, own + comm + extra)

    makespan = max((t for _, _, t in times.values()), default=0.0)
    per_agent = {
        k: AgentTimes(compute_s=comp, comm_s=comm, idle_s=makespan - total, total_s=total)
        for k, (comp, comm, total) in sorted(times.items())
    }
    return RoundReport(per_agent=per_agent, makespan_s=makespan)


def no_offload_makespan(agents: Sequence[AgentProfile]) -> float:
    return max((individual_time(a) for a in agents), default=0.0)
