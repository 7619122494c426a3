"""Round-based simulation of ComDML and the baseline timing models.

Every round is evaluated in closed form: sample participants, pair them
(ComDML only), evaluate per-agent times, add the aggregation cost, then
apply profile churn on schedule. The same seed gives every method the same
participant draws and the same churn, so methods are directly comparable.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from comdml.core import (
    AgentProfile,
    AgentTimes,
    RoundReport,
    individual_time,
    plan_makespan,
)
from comdml.errors import BadK, UnknownBaseline
from comdml.profiler import ModelSpec, profile_splits
from comdml.scheduler import ScheduleResult, schedule

log = logging.getLogger(__name__)

MBPS = 125_000.0  # bytes/s per decimal megabit/s
LINK_TIERS_MBPS = (10.0, 20.0, 50.0, 100.0)
SPEED_TIERS_CPU = (4.0, 2.0, 1.0, 0.5, 0.2)
BASE_RATE = 10.0  # batches/s of the full model per relative CPU

BASELINES = ("fedavg", "gossip", "braintorrent", "allreduce_no_offload")
METHODS = ("comdml",) + BASELINES


@dataclass(frozen=True)
class Topology:
    kind: str = "full"
    p: float = 0.2
    seed: int = 0
    bandwidths: tuple[float, ...] = tuple(m * MBPS for m in LINK_TIERS_MBPS)

    def __post_init__(self):
        if self.kind not in ("full", "random", "ring"):
            raise ValueError(f"unknown topology kind {self.kind!r}")
        if not 0 <= self.p <= 1:
            raise ValueError("topology p must be in [0, 1]")
        if not self.bandwidths or any(not b > 0 for b in self.bandwidths):
            raise ValueError("bandwidths must be a non-empty list of positive rates")
        object.__setattr__(self, "bandwidths", tuple(float(b) for b in self.bandwidths))

    def edges(self, ids: Sequence[int]) -> list[tuple[int, int]]:
        ids = sorted(ids)
        if self.kind == "full":
            return [(a, b) for x, a in enumerate(ids) for b in ids[x + 1:]]
        if self.kind == "ring":
            if len(ids) < 2:
                return []
            if len(ids) == 2:
                return [(ids[0], ids[1])]
            return sorted(
                (min(a, b), max(a, b)) for a, b in zip(ids, ids[1:] + ids[:1])
            )
        rng = np.random.default_rng([self.seed, 11])
        return [
            (a, b)
            for x, a in enumerate(ids)
            for b in ids[x + 1:]
            if rng.random() < self.p
        ]

    def assign(self, ids: Sequence[int]) -> dict[tuple[int, int], float]:
        """Undirected edge -> bandwidth, drawn uniformly from ``bandwidths``."""
        rng = np.random.default_rng([self.seed, 12])
        return {e: self.draw_bandwidth(rng) for e in self.edges(ids)}

    def draw_bandwidth(self, rng: np.random.Generator) -> float:
        if len(self.bandwidths) == 1:
            return self.bandwidths[0]
        return self.bandwidths[int(rng.integers(len(self.bandwidths)))]


@dataclass(frozen=True)
class ChurnPolicy:
    fraction: float = 0.0
    period_rounds: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.fraction <= 1:
            raise ValueError("churn fraction must be in [0, 1]")
        if self.period_rounds < 1:
            raise ValueError("churn period_rounds must be >= 1")

    def due(self, round_idx: int) -> bool:
        return self.fraction > 0 and round_idx > 0 and round_idx % self.period_rounds == 0


@dataclass(frozen=True)
class AllReduceModel:
    algorithm: str = "halving_doubling"
    latency_s: float = 0.0
    model_bytes: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ("halving_doubling", "ring"):
            raise ValueError(f"unknown allreduce algorithm {self.algorithm!r}")
        if not self.model_bytes > 0:
            raise ValueError("model_bytes must be > 0")
        if self.latency_s < 0:
            raise ValueError("latency_s must be >= 0")


@dataclass(frozen=True)
class PairRecord:
    round: int
    slow_id: int
    fast_id: int
    split_m: int
    est_s: float
    sim_s: float


@dataclass
class SimResult:
    baseline_name: str
    rounds: list[RoundReport] = field(default_factory=list)
    per_round_aggregation_s: list[float] = field(default_factory=list)
    cumulative_time_s: float = 0.0
    # running cumulative time after each round
    cumulative_by_round: list[float] = field(default_factory=list)
    participants: list[tuple[int, ...]] = field(default_factory=list)
    # all agents' profiles in effect during each round (shared between
    # rounds until churn replaces them)
    profiles: list[tuple[AgentProfile, ...]] = field(default_factory=list)
    schedules: list[ScheduleResult] = field(default_factory=list)
    pair_records: list[PairRecord] = field(default_factory=list)


def allreduce_steps(algorithm: str, k: int) -> int:
    if k < 2:
        raise BadK(f"AllReduce needs at least 2 agents, got {k}")
    if algorithm == "halving_doubling":
        return 2 * (k - 1).bit_length()  # 2 * ceil(log2 k)
    if algorithm == "ring":
        return 2 * (k - 1)
    raise ValueError(f"unknown allreduce algorithm {algorithm!r}")


def allreduce_volume(model_bytes: float, k: int) -> float:
    """Bytes each agent sends (and receives) during one AllReduce."""
    if k < 2:
        raise BadK(f"AllReduce needs at least 2 agents, got {k}")
    return 2 * model_bytes * (k - 1) / k


def allreduce_cost(model: AllReduceModel, k: int, min_bandwidth: float) -> float:
    steps = allreduce_steps(model.algorithm, k)
    return steps * model.latency_s + allreduce_volume(model.model_bytes, k) / min_bandwidth


def make_agents(
    speeds: Sequence[float],
    num_batches: int | Sequence[int],
    batch_size: int = 100,
) -> list[AgentProfile]:
    """Link-less agent profiles; links come from a Topology."""
    if isinstance(num_batches, int):
        num_batches = [num_batches] * len(speeds)
    return [
        AgentProfile(id=i, proc_speed=float(p), num_batches=int(n), dataset_size=int(n) * batch_size)
        for i, (p, n) in enumerate(zip(speeds, num_batches))
    ]


def connect(agents: Sequence[AgentProfile], topology: Topology) -> list[AgentProfile]:
    """Replace each agent's links with the edges and bandwidths of ``topology``."""
    bw = topology.assign([a.id for a in agents])
    links = {a.id: {} for a in agents}
    for (a, b), c in bw.items():
        links[a][b] = c
        links[b][a] = c
    return [replace(a, links=links[a.id]) for a in agents]


def tiered_agents(k: int = 10, num_batches: int = 50, base_rate: float = BASE_RATE) -> list[AgentProfile]:
    """Heterogeneous mix: CPU tiers 4/2/1/0.5/0.2 assigned round robin."""
    speeds = [SPEED_TIERS_CPU[i % len(SPEED_TIERS_CPU)] * base_rate for i in range(k)]
    return make_agents(speeds, num_batches)


class _World:
    """Mutable simulation state: profiles, edge bandwidths, generators."""

    def __init__(self, agents, topology: Topology, churn: ChurnPolicy, seed: int, speed_tiers=None):
        self.base = {a.id: a for a in agents}
        self.ids = sorted(self.base)
        self.topology = topology
        self.churn = churn
        self.bw = topology.assign(self.ids)
        self.speed_tiers = tuple(sorted(set(speed_tiers or (a.proc_speed for a in agents))))
        self.rng_sample = np.random.default_rng([seed, 1])
        self.rng_churn = np.random.default_rng([churn.seed, 2])
        degree = {i: 0 for i in self.ids}
        for a, b in self.bw:
            degree[a] += 1
            degree[b] += 1
        if len(self.ids) > 1:
            self.isolated = {i for i, d in degree.items() if d == 0}
            if self.isolated:
                log.warning("excluding isolated agents %s from every round", sorted(self.isolated))
        else:
            self.isolated = set()
        self.eligible = [i for i in self.ids if i not in self.isolated]
        self._rebuild()

    def _rebuild(self):
        links = {i: {} for i in self.ids}
        for (a, b), c in self.bw.items():
            links[a][b] = c
            links[b][a] = c
        self.profiles = tuple(replace(self.base[i], links=links[i]) for i in self.ids)
        self.by_id = {a.id: a for a in self.profiles}

    def apply_churn(self) -> list[int]:
        n = math.ceil(self.churn.fraction * len(self.ids))
        chosen = sorted(int(x) for x in self.rng_churn.choice(self.ids, size=n, replace=False))
        for i in chosen:
            cur = self.base[i].proc_speed
            options = [s for s in self.speed_tiers if s != cur] or [cur]
            new_speed = options[int(self.rng_churn.integers(len(options)))]
            self.base[i] = replace(self.base[i], proc_speed=new_speed)
            for e in self.bw:
                if i in e:
                    self.bw[e] = self.topology.draw_bandwidth(self.rng_churn)
        self._rebuild()
        return chosen

    def sample(self, sample_rate: float) -> list[int]:
        n = math.ceil(sample_rate * len(self.eligible))
        if n >= len(self.eligible):
            return list(self.eligible)
        return sorted(int(x) for x in self.rng_sample.choice(self.eligible, size=n, replace=False))

    def rounds(self, num_rounds: int, sample_rate: float):
        """Yield (round index, participant profiles), applying churn first when due."""
        for r in range(num_rounds):
            if self.churn.due(r):
                changed = self.apply_churn()
                log.debug("round %d: churned agents %s", r, changed)
            part = self.sample(sample_rate)
            yield r, [self.by_id[i] for i in part]

    def min_bandwidth(self, part_ids: Sequence[int]) -> float:
        """Slowest link among participants, else slowest link touching them."""
        s = set(part_ids)
        inner = [c for (a, b), c in self.bw.items() if a in s and b in s]
        if inner:
            return min(inner)
        touching = [c for (a, b), c in self.bw.items() if a in s or b in s]
        return min(touching) if touching else math.inf


def _check_run_args(rounds: int, sample_rate: float):
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not 0 < sample_rate <= 1:
        raise ValueError("sample_rate must be in (0, 1]")


def _aggregation_cost(world: _World, aggregation: AllReduceModel, part: Sequence[AgentProfile]) -> float:
    if len(part) < 2:
        return 0.0
    ids = [a.id for a in part]
    return allreduce_cost(aggregation, len(part), world.min_bandwidth(ids))


def _record(result: SimResult, world: _World, part, report: RoundReport, agg: float):
    result.rounds.append(report)
    result.per_round_aggregation_s.append(agg)
    result.cumulative_time_s += report.makespan_s + agg
    result.cumulative_by_round.append(result.cumulative_time_s)
    result.participants.append(tuple(a.id for a in part))
    result.profiles.append(world.profiles)


def run_comdml(
    agents: Sequence[AgentProfile],
    model: ModelSpec,
    topology: Topology,
    churn: ChurnPolicy,
    aggregation: AllReduceModel,
    rounds: int,
    sample_rate: float = 1.0,
    seed: int = 0,
    *,
    partial_model_transfer: bool = False,
    improvement_threshold: float = 0.0,
    label_bytes: float = 0.0,
    speed_tiers: Sequence[float] | None = None,
) -> SimResult:
    """Simulate ``rounds`` rounds of pairing, split training and AllReduce.

    Any links on ``agents`` are replaced by those generated from ``topology``.
    """
    _check_run_args(rounds, sample_rate)
    splits = profile_splits(model, label_bytes=label_bytes)
    world = _World(agents, topology, churn, seed, speed_tiers)
    result = SimResult(baseline_name="comdml")
    for r, part in world.rounds(rounds, sample_rate):
        sched = schedule(part, splits, improvement_threshold=improvement_threshold)
        report = plan_makespan(part, sched.plan, splits, partial_model_transfer=partial_model_transfer)
        for s, f, m in sched.plan.pairs:
            sim = max(report.per_agent[s].total_s, report.per_agent[f].total_s)
            result.pair_records.append(PairRecord(r, s, f, m, sched.estimates[s].est_time_s, sim))
        result.schedules.append(sched)
        _record(result, world, part, report, _aggregation_cost(world, aggregation, part))
    return result


def _report(parts: dict[int, tuple[float, float]]) -> RoundReport:
    """Build a RoundReport from agent id -> (compute, comm)."""
    totals = {i: comp + comm for i, (comp, comm) in parts.items()}
    makespan = max(totals.values(), default=0.0)
    return RoundReport(
        per_agent={
            i: AgentTimes(compute_s=comp, comm_s=comm, idle_s=makespan - totals[i], total_s=totals[i])
            for i, (comp, comm) in sorted(parts.items())
        },
        makespan_s=makespan,
    )


def _server_link(world: _World, agent: int, server: int, part_ids: Sequence[int]) -> float:
    if agent == server:
        own = list(world.by_id[server].links.values())
        return min(own) if own else world.min_bandwidth(part_ids)
    c = world.by_id[agent].links.get(server)
    if c is not None:
        return c
    # no direct edge: relay, bounded by the slowest link among participants
    return world.min_bandwidth(part_ids)


def run_baseline(
    name: str,
    agents: Sequence[AgentProfile],
    topology: Topology,
    aggregation: AllReduceModel,
    rounds: int,
    seed: int = 0,
    *,
    churn: ChurnPolicy | None = None,
    sample_rate: float = 1.0,
    speed_tiers: Sequence[float] | None = None,
) -> SimResult:
    """Timing model of a non-offloading baseline.

    fedavg and braintorrent wait for every participant to train and swap
    ``2b`` bytes with the (virtual or rotating) server. gossip has no
    barrier: each agent sends its model to one random neighbour per round,
    and the reported cumulative time is the largest per-agent running sum,
    so for gossip it is not the sum of round makespans.
    """
    if name not in BASELINES:
        raise UnknownBaseline(f"unknown baseline {name!r}; expected one of {BASELINES}")
    _check_run_args(rounds, sample_rate)
    churn = churn or ChurnPolicy()
    world = _World(agents, topology, churn, seed, speed_tiers)
    rng = np.random.default_rng([seed, 3])
    b = aggregation.model_bytes
    result = SimResult(baseline_name=name)
    server_links = {i: topology.draw_bandwidth(rng) for i in world.ids} if name == "fedavg" else {}
    gossip_sums = {i: 0.0 for i in world.ids}

    for _, part in world.rounds(rounds, sample_rate):
        ids = [a.id for a in part]
        agg = 0.0
        if name == "allreduce_no_offload":
            report = _report({a.id: (individual_time(a), 0.0) for a in part})
            agg = _aggregation_cost(world, aggregation, part)
        elif name == "fedavg":
            # a lone participant has nothing to aggregate
            solo = len(part) < 2
            report = _report(
                {a.id: (individual_time(a), 0.0 if solo else 2 * b / server_links[a.id]) for a in part}
            )
        elif name == "braintorrent":
            server = int(rng.choice(ids))
            if len(part) < 2:
                report = _report({a.id: (individual_time(a), 0.0) for a in part})
            else:
                report = _report(
                    {a.id: (individual_time(a), 2 * b / _server_link(world, a.id, server, ids)) for a in part}
                )
        else:
            times = {}
            for a in part:
                peers = sorted(p for p in a.links if p in set(ids)) or sorted(a.links)
                if peers:
                    peer = peers[int(rng.integers(len(peers)))]
                    times[a.id] = (individual_time(a), b / a.links[peer])
                else:
                    times[a.id] = (individual_time(a), 0.0)
            report = _report(times)
            for i, t in report.per_agent.items():
                gossip_sums[i] += t.total_s
        _record(result, world, part, report, agg)
        if name == "gossip":
            result.cumulative_by_round[-1] = max(gossip_sums.values(), default=0.0)
            result.cumulative_time_s = result.cumulative_by_round[-1]
    return result


def run_method(
    name: str,
    agents: Sequence[AgentProfile],
    model: ModelSpec,
    topology: Topology,
    churn: ChurnPolicy,
    aggregation: AllReduceModel,
    rounds: int,
    sample_rate: float = 1.0,
    seed: int = 0,
    **flags,
) -> SimResult:
    """Dispatch to run_comdml or run_baseline with a shared environment."""
    if name == "comdml":
        return run_comdml(agents, model, topology, churn, aggregation, rounds, sample_rate, seed, **flags)
    return run_baseline(
        name, agents, topology, aggregation, rounds, seed,
        churn=churn, sample_rate=sample_rate, speed_tiers=flags.get("speed_tiers"),
    )
