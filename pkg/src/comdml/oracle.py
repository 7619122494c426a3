"""Exact min-max solver for small pairing instances.

Enumerates every one-to-one directed matching (helper strictly faster and
reachable over a link) together with every split choice per pair, and
returns the plan with the smallest makespan. Ties are broken by fewer
pairs, then by the lexicographically smallest sorted pair list.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from comdml.core import (
    AgentProfile,
    PairingPlan,
    SplitProfile,
    individual_time,
    pair_time,
    plan_makespan,
)
from comdml.errors import TooLarge

MAX_AGENTS = 10
# above this many split combinations per matching, use the per-pair reduction
_BROADCAST_LIMIT = 200_000


@dataclass(frozen=True)
class OracleResult:
    best_plan: PairingPlan
    best_makespan_s: float
    plans_examined: int


def _splits_for(splits, agent_id: int) -> list[SplitProfile]:
    s = splits[agent_id] if isinstance(splits, Mapping) else splits
    return sorted(s, key=lambda sp: sp.split_id)


def candidate_pairs(
    agents: Sequence[AgentProfile],
    topology: Mapping[int, Mapping[int, float]] | None = None,
) -> dict[frozenset, tuple[int, int]]:
    """Unordered agent pair -> (slow, fast) for every pair that may offload."""
    out = {}
    by_id = sorted(agents, key=lambda a: a.id)
    for x, a in enumerate(by_id):
        for b in by_id[x + 1:]:
            ta, tb = individual_time(a), individual_time(b)
            if ta == tb:
                continue
            slow, fast = (a, b) if ta > tb else (b, a)
            links = topology[slow.id] if topology is not None else slow.links
            if fast.id in links:
                out[frozenset((a.id, b.id))] = (slow.id, fast.id)
    return out


def iter_matchings(
    ids: Sequence[int], allowed: Mapping[frozenset, tuple[int, int]]
) -> Iterator[list[tuple[int, int]]]:
    """Yield every matching over ``ids`` using only ``allowed`` edges, in id order."""
    ids = sorted(ids)

    def rec(remaining: list[int]):
        if not remaining:
            yield []
            return
        a, rest = remaining[0], remaining[1:]
        for tail in rec(rest):
            yield tail
        for idx, b in enumerate(rest):
            edge = allowed.get(frozenset((a, b)))
            if edge is None:
                continue
            for tail in rec(rest[:idx] + rest[idx + 1:]):
                yield [edge] + tail

    yield from rec(ids)


def solve_exact(
    agents: Sequence[AgentProfile],
    splits: Mapping[int, Sequence[SplitProfile]] | Sequence[SplitProfile],
    topology: Mapping[int, Mapping[int, float]] | None = None,
    *,
    exhaustive: bool | None = None,
) -> OracleResult:
    """Brute-force minimum of the round makespan over 1-to-1 pairing plans.

    ``exhaustive=True`` materialises every split combination of each
    matching; ``False`` uses the equivalent per-pair reduction (makespan is
    a max of independent per-pair terms). ``None`` picks by size.
    """
    if len(agents) > MAX_AGENTS:
        raise TooLarge(f"{len(agents)} agents; exact search is limited to {MAX_AGENTS}")
    by_id = {a.id: a for a in agents}
    indiv = {a.id: individual_time(a) for a in agents}
    allowed = candidate_pairs(agents, topology)

    # directed pair -> (split ids, per-split pair makespan)
    tables: dict[tuple[int, int], tuple[list[int], np.ndarray]] = {}
    for slow_id, fast_id in allowed.values():
        slow, fast = by_id[slow_id], by_id[fast_id]
        if topology is not None:
            slow = AgentProfile(
                id=slow.id, proc_speed=slow.proc_speed, num_batches=slow.num_batches,
                dataset_size=slow.dataset_size, links=dict(topology[slow.id]),
            )
        sps = _splits_for(splits, slow_id)
        costs = np.array([max(pair_time(slow, fast, sp, indiv[fast_id])) for sp in sps])
        tables[(slow_id, fast_id)] = ([sp.split_id for sp in sps], costs)

    best_key = None
    best_pairs: list[tuple[int, int, int]] = []
    examined = 0
    for matching in iter_matchings(list(by_id), allowed):
        matching = sorted(matching)
        in_pair = {a for edge in matching for a in edge}
        base = max((indiv[a] for a in by_id if a not in in_pair), default=0.0)
        ids_list = [tables[e][0] for e in matching]
        cost_list = [tables[e][1] for e in matching]
        combos = math.prod(len(c) for c in cost_list)
        examined += combos

        use_broadcast = exhaustive if exhaustive is not None else combos <= _BROADCAST_LIMIT
        if not matching:
            value, choice = base, []
        elif use_broadcast:
            grid = np.full([len(c) for c in cost_list], base)
            for axis, c in enumerate(cost_list):
                shape = [1] * len(cost_list)
                shape[axis] = len(c)
                grid = np.maximum(grid, c.reshape(shape))
            # first flat argmin in C order is the lexicographically smallest split vector
            flat = int(np.argmin(grid))
            value = float(grid.flat[flat])
            choice = list(np.unravel_index(flat, grid.shape))
        else:
            value = max(base, max(float(c.min()) for c in cost_list))
            choice = [int(np.flatnonzero(c <= value)[0]) for c in cost_list]

        pairs = [(s, f, ids_list[k][int(choice[k])]) for k, (s, f) in enumerate(matching)]
        key = (value, len(pairs), pairs)
        if best_key is None or key < best_key:
            best_key = key
            best_pairs = pairs

    paired = {a for s, f, _ in best_pairs for a in (s, f)}
    plan = PairingPlan(
        pairs=tuple(best_pairs),
        independents=tuple(sorted(a for a in by_id if a not in paired)),
    )
    eval_agents = list(agents)
    if topology is not None:
        eval_agents = [
            AgentProfile(id=a.id, proc_speed=a.proc_speed, num_batches=a.num_batches,
                         dataset_size=a.dataset_size, links=dict(topology[a.id]))
            for a in agents
        ]
    report = plan_makespan(eval_agents, plan, splits) if agents else None
    return OracleResult(
        best_plan=plan,
        best_makespan_s=report.makespan_s if report else 0.0,
        plans_examined=examined,
    )


def count_full_topology_plans(k: int, m: int) -> int:
    """Size of the search space on a full topology with distinct speeds.

    Sum over j of C(k, 2j) * (2j-1)!! * m**j.
    """
    total = 0
    for j in range(k // 2 + 1):
        double_fact = math.prod(range(2 * j - 1, 0, -2)) if j else 1
        total += math.comb(k, 2 * j) * double_fact * m**j
    return total


def random_instance(
    rng: np.random.Generator,
    k: int,
    num_splits: int,
    speeds: Sequence[float] = (40.0, 20.0, 10.0, 5.0, 2.0),
    bandwidths: Sequence[float] = (1.25e6, 2.5e6, 6.25e6, 12.5e6),
    batches: tuple[int, int] = (20, 100),
    interm_bytes: tuple[float, float] = (1e4, 2e5),
    aux_cost_frac: float = 0.02,
) -> tuple[list[AgentProfile], list[SplitProfile]]:
    """A random fully connected instance with a random layered model.

    Speeds and bandwidths are drawn from the given tiers; the split table
    comes from a random model with ``num_splits + 1`` layers.
    """
    from comdml.profiler import LayerSpec, ModelSpec, profile_splits

    layers = [
        LayerSpec(
            name=f"l{n}",
            cost=float(rng.uniform(0.5, 2.0)),
            out_bytes=float(rng.uniform(*interm_bytes)),
            param_bytes=float(rng.uniform(1e4, 1e6)),
        )
        for n in range(num_splits + 1)
    ]
    model = ModelSpec(layers=tuple(layers), aux_cost_frac=aux_cost_frac)
    sps = profile_splits(model)

    proc = [float(rng.choice(speeds)) for _ in range(k)]
    nb = [int(rng.integers(batches[0], batches[1] + 1)) for _ in range(k)]
    bw = {}
    for a in range(k):
        for b in range(a + 1, k):
            bw[(a, b)] = float(rng.choice(bandwidths))
    agents = []
    for a in range(k):
        links = {b: bw[(min(a, b), max(a, b))] for b in range(k) if b != a}
        agents.append(AgentProfile(id=a, proc_speed=proc[a], num_batches=nb[a], dataset_size=nb[a] * 100, links=links))
    return agents, sps
