import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochobs.cli import main
from stochobs.config import PIPELINES, ConfigError, ExperimentConfig, RunRecord
from stochobs.core import FiniteUnionSet, NoiseModel, OperatorSpec
from stochobs.pipelines import emit_report, run_pipeline

SMALL = dict(m=4, n_paths=200, n_steps=50, n_eta=4, m_values=[2, 4], mesh_n=600, n_quad=256)


def small(pipeline, **kw):
    return ExperimentConfig.from_dict(dict(SMALL, pipeline=pipeline, **kw))


def numeric_outputs(run_dir):
    # record.json carries a wall-clock timestamp; everything else is numeric output
    return {p.name: p.read_bytes() for p in sorted(Path(run_dir).iterdir()) if p.name != "record.json"}


def test_config_round_trip_and_hash():
    cfg = small("control", noise=NoiseModel.constant(0.5).to_dict(), operator=OperatorSpec.degenerate(1.5).to_dict())
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.hash() == cfg.hash() and len(cfg.hash()) == 64
    assert cfg.replace(seed=1).hash() != cfg.hash()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**64 - 1), st.floats(0.05, 0.95), st.sampled_from(PIPELINES))
def test_hash_is_canonical(seed, b, pipeline):
    d = dict(SMALL, pipeline=pipeline, seed=seed, E=[[0.0, b]])
    reordered = dict(reversed(list(d.items())))
    assert ExperimentConfig.from_dict(d).hash() == ExperimentConfig.from_dict(reordered).hash()


@pytest.mark.parametrize(
    "doc,path",
    [
        ({"pipeline": "nope"}, "pipeline"),
        ({"bogus": 1}, "bogus"),
        ({"gamma": 1.5}, "gamma"),
        ({"m": 2.5}, "m"),
        ({"E": [[0.0, 2.0]]}, "E"),
        ({"G": [[0.5, 0.2]]}, "G"),
        ({"sign": 0}, "sign"),
        ({"pipeline": "control", "m_values": [50], "m_sim": 20}, "m_values"),
    ],
)
def test_config_errors_name_the_field(doc, path):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(doc)
    assert info.value.path == path and str(info.value).startswith(path + ":")


def test_degenerate_defaults_to_refined_set():
    cfg = small("specineq", operator=OperatorSpec.degenerate(0.5).to_dict())
    assert cfg.use_G0 and cfg.exponent == 0.75


@pytest.mark.parametrize("pipeline", PIPELINES)
def test_each_pipeline_runs(tmp_path, pipeline):
    rec = run_pipeline(small(pipeline), tmp_path)
    run_dir = Path(rec.run_dir)
    assert run_dir.name == f"{pipeline}-{rec.config_hash[:12]}"
    assert all((run_dir / p).exists() for p in rec.outputs)
    assert RunRecord.from_dict(json.loads((run_dir / "record.json").read_text())) == rec
    for p in run_dir.glob("*.csv"):
        text = p.read_text()
        assert text.endswith("\n") and "," in text.splitlines()[0]
    doc = emit_report(run_dir)
    assert (run_dir / doc["markdown"]).read_text().startswith(f"# {pipeline} run")


def test_telescope_pipeline_full_horizon_value(tmp_path):
    """Unit envelope, gamma = 1/2, E = (0, 1), no noise: C_obs = exp(6)."""
    rec = run_pipeline(small("telescope", E=[[0.0, 1.0]]), tmp_path)
    s = rec.summary
    assert s["N_hat"] == 1.0 and s["C_used"] == 1.0
    assert s["C_obs"] == pytest.approx(math.exp(6.0), rel=1e-12)


def test_observability_pipeline_bound(tmp_path):
    rec = run_pipeline(small("observability", noise=NoiseModel.constant(0.5).to_dict()), tmp_path)
    assert rec.summary["bound_ok"]


def test_runs_with_different_configs_are_isolated(tmp_path):
    a = run_pipeline(small("specineq"), tmp_path)
    b = run_pipeline(small("specineq", G=[[0.0, 0.4]]), tmp_path)
    assert a.run_dir != b.run_dir
    assert json.loads((Path(a.run_dir) / "config.json").read_text())["G"]["intervals"] == [[0.0, 0.5]]


@pytest.mark.parametrize("pipeline", ["bsde-check", "observability", "control"])
def test_thread_count_does_not_change_outputs(tmp_path, pipeline):
    cfg = small(pipeline, noise=NoiseModel.constant(0.5).to_dict())
    one = run_pipeline(cfg, tmp_path / "one", threads=1)
    three = run_pipeline(cfg, tmp_path / "three", threads=3)
    assert numeric_outputs(one.run_dir) == numeric_outputs(three.run_dir)


def test_report_requires_a_finished_run(tmp_path):
    with pytest.raises(FileNotFoundError):
        emit_report(tmp_path)
    (tmp_path / "stray.txt").write_text("x")
    with pytest.raises(FileNotFoundError, match="record"):
        emit_report(tmp_path)


def test_main_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(dict(SMALL, G=[[0.0, 0.5]])))
    assert main(["specineq", "--config", str(cfg_path), "--out", str(tmp_path / "runs"), "--seed", "3", "--report"]) == 0
    out = capsys.readouterr().out
    run_dir = Path(out.splitlines()[0])
    assert json.loads((run_dir / "config.json").read_text())["seed"] == 3
    assert (run_dir / "report.md").exists()
    assert main(["report", str(run_dir)]) == 0

    cfg_path.write_text(json.dumps({"gamma": 2.0}))
    assert main(["specineq", "--config", str(cfg_path), "--out", str(tmp_path / "runs")]) == 2
    assert "gamma:" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "missing")]) == 2
    assert main(["specineq", "--threads", "0", "--out", str(tmp_path / "runs")]) == 2


def test_union_sets_in_config():
    cfg = small("telescope", E=[[0.0, 0.2], [0.5, 0.9]])
    assert cfg.E == FiniteUnionSet.of((0.0, 0.2), (0.5, 0.9))
