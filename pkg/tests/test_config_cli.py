import os
import subprocess
import sys
from pathlib import Path

import pytest

from comdml.cli import main
from comdml.config import (
    agent_speeds,
    build_aggregation,
    build_model,
    load_config,
    load_preset,
    parse_config,
    preset_names,
    validate_config,
    with_overrides,
)
from comdml.errors import ParseError, ValidationError
from comdml.profiler import ModelSpec, LayerSpec

HERE = Path(__file__).parent
SMALL = HERE / "data" / "small.yaml"
GOLDEN = HERE / "golden"
REGEN = os.environ.get("COMDML_REGEN_GOLDEN") == "1"


def test_defaults():
    cfg = validate_config({"seed": 0})
    assert cfg.rounds == 200
    assert cfg.agents.count == 10
    assert cfg.model == "resnet56-like"
    assert cfg.compare == ["comdml"]
    assert cfg.aggregation.algorithm == "halving_doubling"
    assert cfg.learning.lr0 == 0.001


def test_seed_required():
    with pytest.raises(ValidationError) as e:
        validate_config({})
    assert e.value.field == "seed"


@pytest.mark.parametrize(
    "raw, field",
    [
        ({"seed": 0, "churn": {"fraction": 1.5}}, "churn.fraction"),
        ({"seed": 0, "agents": {"count": 0}}, "agents.count"),
        ({"seed": 0, "agents": {"speeds_cpu": [1.0, -2.0]}}, "agents.speeds_cpu"),
        ({"seed": 0, "topology": {"links_mbps": [0]}}, "topology.links_mbps"),
        ({"seed": 0, "compare": ["comdml", "sgd"]}, "compare"),
        ({"seed": 0, "model": {"layers": [{"name": "x", "cost": 1}]}}, "model.layers"),
        ({"seed": 0, "model": "vgg"}, "model"),
        ({"seed": 0, "bogus": 1}, "bogus"),
        ({"seed": 0, "flags": {"improvement_threshold": 1.0}}, "flags.improvement_threshold"),
    ],
)
def test_validation_errors_name_the_field(raw, field):
    with pytest.raises(ValidationError) as e:
        validate_config(raw)
    assert e.value.field == field


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as e:
        parse_config("seed: 0\nagents:\n  count: [1, 2\n")
    assert "line" in str(e.value)


def test_missing_file():
    with pytest.raises(ParseError):
        load_config(HERE / "nope.yaml")


def test_presets_load():
    assert {"hetero_10_agents", "sparse_50_agents", "toy_learning", "oracle_small"} <= set(preset_names())
    for name in preset_names():
        load_preset(name)
    cfg = load_preset("hetero_10_agents")
    speeds = agent_speeds(cfg)
    assert len(speeds) == 10
    assert all(speeds.count(s) == 2 for s in set(speeds))


def test_overrides_revalidate():
    cfg = validate_config({"seed": 0})
    assert with_overrides(cfg, agents__count=3, seed=None).agents.count == 3
    with pytest.raises(ValidationError):
        with_overrides(cfg, churn__fraction=-0.1)


def test_aggregation_needs_model_bytes():
    cfg = validate_config({"seed": 0, "model": {"layers": [{"name": "a", "cost": 1}, {"name": "b", "cost": 1}]}})
    with pytest.raises(ValidationError):
        build_aggregation(cfg, build_model(cfg))
    cfg = with_overrides(cfg, aggregation__model_bytes=100.0)
    assert build_aggregation(cfg, build_model(cfg)).model_bytes == 100.0


def test_custom_model_builds():
    m = build_model(load_config(SMALL))
    assert isinstance(m, ModelSpec)
    assert m.layers[1] == LayerSpec("b", 2.0, 32768, 80000)


# CLI


def read(p):
    return Path(p).read_text(encoding="utf-8")


def check_golden(produced: Path, name: str):
    golden = GOLDEN / name
    if REGEN:
        golden.write_text(read(produced), encoding="utf-8")
    assert read(produced) == read(golden), f"{name} differs from golden copy"


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 0\nchurn: {fraction: 2}\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "churn.fraction" in capsys.readouterr().err
    assert main(["oracle", "--preset", "oracle_small", "--agents", "11", "--instances", "1", "--out", str(tmp_path)]) == 3
    assert main(["run", "--preset", "no_such_preset"]) == 2


def test_cli_single_agent(tmp_path):
    assert main(["run", "--config", str(SMALL), "--agents", "1", "--out", str(tmp_path)]) == 0
    lines = read(tmp_path / "timing.csv").splitlines()
    assert lines[0] == "method,round,makespan_s,aggregation_s,cumulative_s"
    assert len(lines) == 1 + 3 * 6
    assert read(tmp_path / "pairs.csv").splitlines() == ["round,slow_id,fast_id,split_m,est_s,sim_s"]


def test_cli_compare_override(tmp_path):
    assert main(["run", "--config", str(SMALL), "--compare", "gossip,braintorrent", "--rounds", "2", "--out", str(tmp_path)]) == 0
    methods = {line.split(",")[0] for line in read(tmp_path / "timing.csv").splitlines()[1:]}
    assert methods == {"gossip", "braintorrent"}
    assert main(["run", "--config", str(SMALL), "--compare", "nope", "--out", str(tmp_path)]) == 2


def test_cli_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(SMALL), "--out", str(a)]) == 0
    assert main(["run", "--config", str(SMALL), "--out", str(b)]) == 0
    for name in ("timing.csv", "pairs.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_cli_threads_do_not_change_output(tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    monkeypatch.setenv("COMDML_SIM_THREADS", "1")
    assert main(["run", "--config", str(SMALL), "--seeds", "1,2", "--out", str(a)]) == 0
    monkeypatch.setenv("COMDML_SIM_THREADS", "4")
    assert main(["run", "--config", str(SMALL), "--seeds", "1,2", "--out", str(b)]) == 0
    for seed in (1, 2):
        assert (a / f"seed_{seed}" / "timing.csv").read_bytes() == (b / f"seed_{seed}" / "timing.csv").read_bytes()
    monkeypatch.setenv("COMDML_SIM_THREADS", "x")
    assert main(["run", "--config", str(SMALL), "--out", str(a)]) == 2


def test_cli_timing_golden(tmp_path):
    assert main(["run", "--config", str(SMALL), "--out", str(tmp_path)]) == 0
    check_golden(tmp_path / "timing.csv", "timing.csv")
    check_golden(tmp_path / "pairs.csv", "pairs.csv")


def test_cli_oracle_golden(tmp_path):
    assert main(["oracle", "--preset", "oracle_small", "--instances", "5", "--out", str(tmp_path)]) == 0
    check_golden(tmp_path / "oracle.csv", "oracle.csv")


def test_cli_oracle_two_agents_ratio_one(tmp_path, capsys):
    assert main(["oracle", "--preset", "oracle_small", "--agents", "2", "--instances", "10", "--out", str(tmp_path)]) == 0
    ratios = [float(line.split(",")[3]) for line in read(tmp_path / "oracle.csv").splitlines()[1:]]
    assert ratios == [1.0] * 10


def test_cli_profile_golden(tmp_path, capsys):
    assert main(["profile", "--config", str(SMALL), "--out", str(tmp_path)]) == 0
    check_golden(tmp_path / "profile.csv", "profile.csv")
    assert main(["profile", "--config", str(SMALL)]) == 0
    assert capsys.readouterr().out == read(tmp_path / "profile.csv")


def test_cli_learning(tmp_path):
    cfg = tmp_path / "learn.yaml"
    cfg.write_text("seed: 1\nmode: learning\nrounds: 3\nagents: {count: 4}\nlearning: {samples: 800, lr0: 0.05}\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    lines = read(tmp_path / "learning.csv").splitlines()
    assert lines[0] == "round,loss,accuracy,drift"
    assert len(lines) == 1 + 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "comdml", "profile", "--preset", "oracle_small"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "split_m,slow_frac,fast_frac,interm_bytes,offload_bytes"
