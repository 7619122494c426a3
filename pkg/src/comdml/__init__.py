"""Decentralized workload balancing via pairing and local-loss split training."""
from comdml.core import (
    AgentProfile,
    PairingPlan,
    RoundReport,
    SplitProfile,
    individual_time,
    pair_time,
    plan_makespan,
)
from comdml.oracle import solve_exact
from comdml.profiler import LayerSpec, ModelSpec, offloaded_model_bytes, profile_splits, resnet56_like
from comdml.scheduler import agent_training_time, greedy_pair
from comdml.simulator import AllReduceModel, ChurnPolicy, Topology, allreduce_cost, run_baseline, run_comdml

__version__ = "0.1.0"
