"""Command line entry point: ``comdml run | oracle | profile``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from comdml.config import (
    ExperimentConfig,
    build_agents,
    build_aggregation,
    build_churn,
    build_model,
    build_topology,
    load_config,
    load_preset,
    speed_tiers,
    validate_config,
    with_overrides,
)
from comdml.core import AgentProfile, plan_makespan
from comdml.errors import ComDMLError, ConfigError, TooLarge
from comdml.learning import (
    LRSchedule,
    SplitNet,
    SyntheticDataset,
    TrainingResult,
    partition,
    run_training,
    toy_model_spec,
)
from comdml.oracle import MAX_AGENTS, solve_exact
from comdml.profiler import profile_splits
from comdml.scheduler import greedy_pair
from comdml.simulator import SimResult, Topology, connect, run_method

log = logging.getLogger("comdml")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

TIMING_COLUMNS = ["method", "round", "makespan_s", "aggregation_s", "cumulative_s"]
PAIRS_COLUMNS = ["round", "slow_id", "fast_id", "split_m", "est_s", "sim_s"]
LEARNING_COLUMNS = ["round", "loss", "accuracy", "drift"]
ORACLE_COLUMNS = ["instance", "greedy_makespan", "opt_makespan", "ratio"]
PROFILE_COLUMNS = ["split_m", "slow_frac", "fast_frac", "interm_bytes", "offload_bytes"]


def fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def sim_threads() -> int:
    raw = os.environ.get("COMDML_SIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"COMDML_SIM_THREADS must be an integer, got {raw!r}") from None


# timing


def run_timing(cfg: ExperimentConfig, threads: int = 1) -> dict[str, SimResult]:
    model = build_model(cfg)
    agents = build_agents(cfg)
    topology = build_topology(cfg)
    churn = build_churn(cfg)
    aggregation = build_aggregation(cfg, model)
    flags = dict(
        partial_model_transfer=cfg.flags.partial_model_transfer,
        improvement_threshold=cfg.flags.improvement_threshold,
        label_bytes=cfg.flags.label_bytes,
        speed_tiers=speed_tiers(cfg),
    )

    def one(method: str) -> SimResult:
        extra = flags if method == "comdml" else {"speed_tiers": flags["speed_tiers"]}
        return run_method(
            method, agents, model, topology, churn, aggregation,
            cfg.rounds, cfg.sample_rate, cfg.seed, **extra,
        )

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(one, cfg.compare))
    return dict(zip(cfg.compare, results))


def timing_rows(results: dict[str, SimResult]):
    for method, res in results.items():
        for r, (rep, agg, cum) in enumerate(zip(res.rounds, res.per_round_aggregation_s, res.cumulative_by_round)):
            yield [method, r, rep.makespan_s, agg, cum]


def pair_rows(results: dict[str, SimResult]):
    res = results.get("comdml")
    if res is None:
        return
    for p in res.pair_records:
        yield [p.round, p.slow_id, p.fast_id, p.split_m, p.est_s, p.sim_s]


# learning


def run_learning_from_config(cfg: ExperimentConfig) -> TrainingResult:
    L = cfg.learning
    data = SyntheticDataset.gaussian_mixture(L.samples, L.dim, L.num_classes, L.separation, seed=cfg.seed)
    parts = partition(data, cfg.agents.count, L.label_skew, seed=cfg.seed)
    bs = cfg.agents.batch_size
    agents = connect(build_agents(cfg, [math.ceil(len(p) / bs) for p in parts]), build_topology(cfg))
    sizes = [L.dim, *L.hidden, L.num_classes]
    net = SplitNet.init(sizes, rng=np.random.default_rng([cfg.seed, 41]))
    splits = profile_splits(toy_model_spec(sizes, bs), label_bytes=cfg.flags.label_bytes)
    return run_training(
        agents, net, data, L.plan_source,
        rounds=cfg.rounds if L.rounds is None else L.rounds,
        lr=LRSchedule(lr0=L.lr0, decay_factor=L.decay_factor, patience=L.plateau_rounds),
        seed=cfg.seed,
        parts=parts,
        splits=splits,
        batch_size=bs,
        uniform_average=cfg.flags.uniform_average,
        drift_bins=L.drift_bins,
    )


def learning_rows(res: TrainingResult):
    for h in res.history:
        yield [h.round, h.loss, h.accuracy, h.drift]


def run_experiment(cfg: ExperimentConfig, out_dir: Path, threads: int = 1) -> int:
    """Run the configured timing and/or learning experiment and write CSVs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.mode in ("timing", "both"):
        results = run_timing(cfg, threads)
        write_csv(out_dir / "timing.csv", TIMING_COLUMNS, timing_rows(results))
        write_csv(out_dir / "pairs.csv", PAIRS_COLUMNS, pair_rows(results))
        for method, res in results.items():
            print(f"{method}: cumulative {res.cumulative_time_s:.6g} s over {len(res.rounds)} rounds")
    if cfg.mode in ("learning", "both"):
        res = run_learning_from_config(cfg)
        write_csv(out_dir / "learning.csv", LEARNING_COLUMNS, learning_rows(res))
        last = res.history[-1]
        print(f"learning: round {last.round} loss {last.loss:.6g} accuracy {last.accuracy:.4f}")
    return EXIT_OK


# oracle check


@dataclass(frozen=True)
class OracleReport:
    rows: list[tuple[int, float, float, float]]

    @property
    def ratios(self) -> list[float]:
        return [r[3] for r in self.rows]

    @property
    def max_ratio(self) -> float:
        return max(self.ratios, default=1.0)

    @property
    def mean_ratio(self) -> float:
        return float(np.mean(self.ratios)) if self.rows else 1.0


def sample_instance(cfg: ExperimentConfig, rng: np.random.Generator) -> list[AgentProfile]:
    """Random agents drawn from the config's speed tiers, batch counts and links."""
    a = cfg.agents
    speeds = [a.speeds_cpu[int(k)] * a.base_rate for k in rng.integers(len(a.speeds_cpu), size=a.count)]
    lo, hi = max(1, a.num_batches // 2), max(1, 2 * a.num_batches)
    batches = [int(n) for n in rng.integers(lo, hi + 1, size=a.count)]
    base = [
        AgentProfile(id=i, proc_speed=s, num_batches=n, dataset_size=n * a.batch_size)
        for i, (s, n) in enumerate(zip(speeds, batches))
    ]
    t = build_topology(cfg)
    topo = Topology(kind=t.kind, p=t.p, seed=int(rng.integers(2**63)), bandwidths=t.bandwidths)
    return connect(base, topo)


def run_oracle_check(cfg: ExperimentConfig, instances: int, out_dir: Path | None = None) -> OracleReport:
    if cfg.agents.count > MAX_AGENTS:
        raise TooLarge(f"{cfg.agents.count} agents; exact search is limited to {MAX_AGENTS}")
    splits = profile_splits(build_model(cfg), label_bytes=cfg.flags.label_bytes)
    rng = np.random.default_rng([cfg.seed, 51])
    rows = []
    for n in range(instances):
        agents = sample_instance(cfg, rng)
        plan = greedy_pair(agents, splits, improvement_threshold=cfg.flags.improvement_threshold)
        greedy = plan_makespan(agents, plan, splits).makespan_s
        opt = solve_exact(agents, splits).best_makespan_s
        ratio = greedy / opt if opt > 0 else 1.0
        rows.append((n, greedy, opt, ratio))
    report = OracleReport(rows)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / "oracle.csv", ORACLE_COLUMNS, rows)
    print(f"instances {instances}: max ratio {report.max_ratio:.9g}, mean ratio {report.mean_ratio:.9g}")
    return report


# argument handling


def _parse_list(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_seeds(text: str | None) -> list[int] | None:
    items = _parse_list(text)
    if items is None:
        return None
    try:
        return [int(t) for t in items]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="comdml", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", type=Path, help="experiment YAML file")
        src.add_argument("--preset", help="name of a bundled preset config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--agents", type=int, help="override agents.count")

    run = sub.add_parser("run", help="simulate timing and/or run toy training")
    common(run)
    run.add_argument("--mode", choices=["timing", "learning", "both"])
    run.add_argument("--compare", help="comma-separated methods, e.g. comdml,allreduce_no_offload")
    run.add_argument("--rounds", type=int)
    run.add_argument("--seeds", help="comma-separated seeds; one output subdirectory per seed")

    orc = sub.add_parser("oracle", help="compare greedy pairing with the exact solver")
    common(orc)
    orc.add_argument("--instances", type=int, default=100)

    prof = sub.add_parser("profile", help="dump split profiles of the configured model")
    common(prof)
    return parser


def _load(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.preset is not None:
        cfg = load_preset(args.preset)
    else:
        cfg = validate_config({"seed": 0})
    overrides = {"seed": args.seed, "agents__count": args.agents}
    if args.command == "run":
        overrides.update(mode=args.mode, rounds=args.rounds, compare=_parse_list(args.compare))
    return with_overrides(cfg, **overrides)


def _dispatch(args) -> int:
    cfg = _load(args)
    out = args.out if args.out is not None else Path("out")
    if args.command == "run":
        seeds = _parse_seeds(args.seeds)
        threads = sim_threads()
        if not seeds:
            return run_experiment(cfg, out, threads)
        sweep = [(s, with_overrides(cfg, seed=s)) for s in seeds]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            codes = list(pool.map(lambda e: run_experiment(e[1], out / f"seed_{e[0]}"), sweep))
        return max(codes)
    if args.command == "oracle":
        if args.instances < 0:
            raise ConfigError("--instances must be >= 0")
        run_oracle_check(cfg, args.instances, out)
        return EXIT_OK
    rows = [
        [sp.split_id, sp.slow_frac, sp.fast_frac, sp.interm_bytes, sp.offload_bytes]
        for sp in profile_splits(build_model(cfg), label_bytes=cfg.flags.label_bytes)
    ]
    if args.out is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        write_csv(args.out / "profile.csv", PROFILE_COLUMNS, rows)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ComDMLError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
