import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comdml.core import (
    AgentProfile,
    PairingPlan,
    SplitProfile,
    individual_time,
    pair_time,
    plan_makespan,
)
from comdml.errors import InvalidPlan, MissingLink


def agent(i, n, p, links=None):
    return AgentProfile(id=i, proc_speed=p, num_batches=n, dataset_size=n * 100, links=links or {})


@pytest.mark.parametrize(
    "n, p, expected",
    [(0, 2.0, 0.0), (10, 2.0, 5.0), (500, 0.2, 2500.0)],
)
def test_individual_time(n, p, expected):
    assert individual_time(agent(0, n, p)) == pytest.approx(expected, rel=1e-15)


def test_agent_profile_invariants():
    with pytest.raises(ValueError):
        agent(0, 10, 0.0)
    with pytest.raises(ValueError):
        agent(0, -1, 1.0)
    with pytest.raises(ValueError):
        agent(0, 10, 1.0, {0: 1e6})
    with pytest.raises(ValueError):
        agent(0, 10, 1.0, {1: 0.0})


def test_split_profile_invariants():
    with pytest.raises(ValueError):
        SplitProfile(1, 0.0, 0.5, 0)
    with pytest.raises(ValueError):
        SplitProfile(1, 1.6, 0.5, 0)
    with pytest.raises(ValueError):
        SplitProfile(1, 0.5, 0.0, 0)
    with pytest.raises(ValueError):
        SplitProfile(1, 0.5, 0.5, -1)
    SplitProfile(1, 1.5, 1.0, 0)


def test_pair_time_symmetric_no_data():
    sp = SplitProfile(1, 1.0, 1.0, 0.0)
    slow = agent(0, 10, 2.0, {1: 123.0})
    fast = agent(1, 10, 2.0, {0: 123.0})
    assert pair_time(slow, fast, sp, 5.0) == (5.0, 10.0)


@pytest.mark.parametrize("c, fast_expected", [(1e6, 12.25), (1e9, 2.26)])
def test_pair_time_hand_values(c, fast_expected):
    sp = SplitProfile(1, 0.5, 0.5, 1e6)
    slow = agent(0, 10, 2.0, {1: c})
    fast = agent(1, 10, 4.0, {0: c})
    s, f = pair_time(slow, fast, sp, 1.0)
    assert s == pytest.approx(2.5)
    assert f == pytest.approx(fast_expected, rel=1e-12)


def test_pair_time_missing_link():
    with pytest.raises(MissingLink):
        pair_time(agent(0, 10, 2.0), agent(1, 10, 4.0), SplitProfile(1, 0.5, 0.5, 0), 1.0)


def test_plan_makespan_all_independent():
    agents = [agent(0, 5, 1.0), agent(1, 3, 1.0), agent(2, 1, 1.0)]
    rep = plan_makespan(agents, PairingPlan(independents=(0, 1, 2)), [])
    assert rep.makespan_s == 5.0
    assert rep.per_agent[2].idle_s == 4.0


def test_plan_makespan_one_pair():
    sp = [SplitProfile(1, 0.5, 0.5, 1e6)]
    agents = [
        agent(0, 10, 2.0, {1: 1e6}),
        agent(1, 4, 4.0, {0: 1e6}),
        agent(2, 3, 1.0),
        agent(3, 1, 1.0),
    ]
    rep = plan_makespan(agents, PairingPlan(pairs=((0, 1, 1),), independents=(2, 3)), sp)
    totals = {k: v.total_s for k, v in rep.per_agent.items()}
    assert totals == pytest.approx({0: 2.5, 1: 12.25, 2: 3.0, 3: 1.0})
    assert rep.makespan_s == pytest.approx(12.25)
    assert rep.per_agent[1].comm_s == pytest.approx(10.0)
    assert rep.per_agent[1].compute_s == pytest.approx(2.25)


def test_plan_makespan_empty():
    assert plan_makespan([], PairingPlan(), []).makespan_s == 0.0


def test_partial_model_transfer_adds_helper_comm():
    sp = [SplitProfile(1, 0.5, 0.5, 0.0, offload_bytes=2e6)]
    agents = [agent(0, 10, 2.0, {1: 1e6}), agent(1, 4, 4.0, {0: 1e6})]
    plan = PairingPlan(pairs=((0, 1, 1),))
    off = plan_makespan(agents, plan, sp)
    on = plan_makespan(agents, plan, sp, partial_model_transfer=True)
    assert on.per_agent[1].total_s - off.per_agent[1].total_s == pytest.approx(2.0)


@pytest.mark.parametrize(
    "plan",
    [
        PairingPlan(independents=(0,)),
        PairingPlan(independents=(0, 1, 1)),
        PairingPlan(pairs=((0, 1, 1),), independents=(1,)),
        PairingPlan(pairs=((0, 1, 1), (1, 0, 1))),
    ],
)
def test_plan_makespan_rejects_invalid_plans(plan):
    sp = [SplitProfile(1, 0.5, 0.5, 0.0)]
    agents = [agent(0, 10, 2.0, {1: 1e6}), agent(1, 4, 4.0, {0: 1e6})]
    with pytest.raises(InvalidPlan):
        plan_makespan(agents, plan, sp)


def test_plan_makespan_unknown_split():
    agents = [agent(0, 10, 2.0, {1: 1e6}), agent(1, 4, 4.0, {0: 1e6})]
    with pytest.raises(InvalidPlan):
        plan_makespan(agents, PairingPlan(pairs=((0, 1, 7),)), [SplitProfile(1, 0.5, 0.5, 0.0)])


fracs = st.floats(0.05, 1.0)
speeds = st.floats(0.1, 50.0)


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(0, 500), ps=speeds, pf=speeds, sf=fracs, ff=fracs,
    nu=st.floats(0, 1e6), c=st.floats(1e3, 1e8), own=st.floats(0, 100),
    factor=st.floats(1.0, 10.0),
)
def test_pair_time_monotone(n, ps, pf, sf, ff, nu, c, own, factor):
    sp = SplitProfile(1, sf, ff, nu)
    base_s, base_f = pair_time(agent(0, n, ps, {1: c}), agent(1, 1, pf), sp, own)
    _, f_bw = pair_time(agent(0, n, ps, {1: c * factor}), agent(1, 1, pf), sp, own)
    _, f_pf = pair_time(agent(0, n, ps, {1: c}), agent(1, 1, pf * factor), sp, own)
    s_ps, _ = pair_time(agent(0, n, ps * factor, {1: c}), agent(1, 1, pf), sp, own)
    assert f_bw <= base_f
    assert f_pf <= base_f
    assert s_ps <= base_s


@settings(max_examples=100, deadline=None)
@given(n1=st.integers(0, 300), n2=st.integers(0, 300), p1=speeds, p2=speeds, c=st.floats(1e3, 1e8))
def test_pair_time_degenerates_to_individual(n1, n2, p1, p2, c):
    slow, fast = agent(0, n1, p1, {1: c}), agent(1, n2, p2)
    s, f = pair_time(slow, fast, SplitProfile(1, 1.0, 1.0, 0.0), individual_time(fast))
    assert s == pytest.approx(individual_time(slow), rel=1e-12)
    assert f == pytest.approx(individual_time(fast) + n1 / p2, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 200), speeds), min_size=1, max_size=8))
def test_no_offload_consistency(specs):
    agents = [agent(i, n, p) for i, (n, p) in enumerate(specs)]
    rep = plan_makespan(agents, PairingPlan(independents=tuple(range(len(agents)))), [])
    assert rep.makespan_s == max(individual_time(a) for a in agents)
    for t in rep.per_agent.values():
        assert t.idle_s >= 0
        assert t.total_s + t.idle_s == pytest.approx(rep.makespan_s)


def test_plan_makespan_permutation_invariant():
    rnd = random.Random(3)
    sp = [SplitProfile(1, 0.4, 0.7, 5e4), SplitProfile(2, 0.7, 0.3, 1e4)]
    ids = range(6)
    agents = [
        agent(i, rnd.randint(10, 90), rnd.choice([2.0, 5.0, 10.0, 40.0]), {j: 1e6 * (1 + i + j) for j in ids if j != i})
        for i in ids
    ]
    plan = PairingPlan(pairs=((0, 3, 2), (4, 1, 1)), independents=(2, 5))
    ref = plan_makespan(agents, plan, sp)
    for perm in itertools.islice(itertools.permutations(agents), 0, 720, 37):
        rep = plan_makespan(list(perm), plan, sp)
        assert rep.makespan_s == ref.makespan_s
        assert rep.per_agent == ref.per_agent
