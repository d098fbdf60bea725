import json
from pathlib import Path

import pytest

from vecor.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main

CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps({
        "name": "small", "steps": 40, "batch_size": 32, "model": {"hidden": [16, 16]},
        "eval": {"n_gen": 300, "n_ref": 300, "n_projections": 16},
        "vecor": {"enabled": True},
    }))
    return path


def _train(cfg, out):
    assert main(["train", str(cfg), "--out", str(out)]) == EXIT_OK
    return next((out / "small").glob("*.ckpt"))


def test_shipped_config_trains(tmp_path):
    assert main(["train", str(CONFIGS / "gauss2-vecor.json"), "--out", str(tmp_path)]) == EXIT_OK
    rdir = tmp_path / "gauss2-vecor"
    steps = json.loads((CONFIGS / "gauss2-vecor.json").read_text())["steps"]
    assert len((rdir / "train_log.csv").read_text().splitlines()) == steps + 1
    assert (rdir / "manifest.json").exists() and list(rdir.glob("*.ckpt"))


def test_ill_conditioned_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"vecor": {"enabled": True, "lam": 0.6, "K": 2}}))
    assert main(["train", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "λK < 1" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_unknown_field_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"optimizer": {"learning_rate": 0.1}}))
    assert main(["train", str(bad)]) == EXIT_CONFIG
    assert "optimizer.learning_rate" in capsys.readouterr().err


def test_rerun_gives_identical_log(tmp_path, small_cfg):
    _train(small_cfg, tmp_path / "a")
    _train(small_cfg, tmp_path / "b")
    assert (tmp_path / "a/small/train_log.csv").read_bytes() == (tmp_path / "b/small/train_log.csv").read_bytes()


def test_env_var_sets_output_root(tmp_path, small_cfg, monkeypatch):
    monkeypatch.setenv("VECOR_OUT", str(tmp_path / "env"))
    assert main(["train", str(small_cfg), "--steps", "3"]) == EXIT_OK
    assert (tmp_path / "env/small/train_log.csv").exists()


def test_sample_flags_and_determinism(tmp_path, small_cfg):
    ckpt = _train(small_cfg, tmp_path)
    a, b = tmp_path / "a.grid", tmp_path / "b.grid"
    assert main(["sample", str(ckpt), "--n", "50", "--seed", "3", "--output", str(a)]) == EXIT_OK
    assert main(["sample", str(ckpt), "--n", "50", "--seed", "3", "--output", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads(a.with_suffix(".manifest.json").read_text())
    assert manifest["sampler"] == {"kind": "euler_maruyama", "nfe": 50, "seed": 3, "n": 50}
    assert main(["sample", str(ckpt), "--sampler", "heun2", "--nfe", "51"]) == EXIT_CONFIG
    assert main(["sample", str(ckpt), "--sampler", "heun2", "--nfe", "8", "--n", "5", "--output", str(b)]) == EXIT_OK


def test_sample_errors(tmp_path, small_cfg):
    assert main(["sample", str(tmp_path / "none.ckpt")]) == EXIT_IO
    ckpt = _train(small_cfg, tmp_path)
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"name": "small", "steps": 41, "model": {"hidden": [16, 16]}}))
    assert main(["sample", str(ckpt), "--config", str(other)]) == EXIT_CONFIG


def test_eval_writes_csv(tmp_path, small_cfg, capsys):
    ckpt = _train(small_cfg, tmp_path)
    dump = tmp_path / "s.grid"
    assert main(["sample", str(ckpt), "--n", "100", "--output", str(dump)]) == EXIT_OK
    out = tmp_path / "eval.csv"
    assert main(["eval", str(dump), "--config", str(small_cfg), "--output", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0].startswith("axis,axis_value,seed,sliced_w2") and len(lines) == 2


def test_sweep_rows_and_chart(tmp_path, small_cfg):
    args = ["sweep", str(small_cfg), "--axis", "nfe", "--values", "2,5,10", "--seeds", "0,1", "--out", str(tmp_path), "--svg"]
    assert main(args) == EXIT_OK
    root = tmp_path / "small-sweep-nfe"
    assert len((root / "sweep.csv").read_text().splitlines()) == 1 + 3 * 2
    assert (root / "sweep.svg").read_text().startswith("<svg")
    assert json.loads((root / "manifest.json").read_text())["artifacts"]["sweep"] == "sweep.csv"


def test_step_sweep_pairs_arms(tmp_path, small_cfg):
    args = ["sweep", str(small_cfg), "--axis", "step", "--values", "20,40", "--seeds", "0", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    rows = (tmp_path / "small-sweep-step/sweep.csv").read_text().splitlines()[1:]
    assert len(rows) == 2 * 2
    assert {r.split(",")[8] for r in rows} == {"euler_maruyama:baseline", "euler_maruyama:vecor"}


@pytest.mark.parametrize("values", ["", ","])
def test_sweep_empty_values_is_usage_error(tmp_path, small_cfg, values):
    assert main(["sweep", str(small_cfg), "--axis", "nfe", "--values", values, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_verify_fault_injection_names_check(capsys):
    assert main(["verify", "--inject-fault", "grad", "--gradient-instances", "5"]) == EXIT_NUMERIC
    out = capsys.readouterr().out
    fail_lines = [l for l in out.splitlines() if l.startswith("FAIL")]
    assert len(fail_lines) == 1 and "gradient" in fail_lines[0]


def test_usage_errors():
    assert main([]) == EXIT_CONFIG
    assert main(["sweep", "x.json", "--axis", "epochs", "--values", "1"]) == EXIT_CONFIG
