import json

import pytest

from vecor.artifacts import csv_text, fmt
from vecor.config import ConfigError, RunConfig, from_dict, load_config, save_config


def test_defaults():
    cfg = RunConfig()
    assert (cfg.vecor.lam, cfg.vecor.K, cfg.vecor.enabled) == (0.05, 1, False)
    assert (cfg.vecor.perturb.operator, cfg.vecor.perturb.space) == ("channel_shuffle", "velocity")
    assert (cfg.sampler.kind, cfg.sampler.nfe, cfg.sampler.w, cfg.sampler.delta_clip) == ("euler_maruyama", 50, "sigma", 1e-3)
    assert (cfg.optimizer.kind, cfg.optimizer.lr, cfg.optimizer.beta1, cfg.optimizer.beta2) == ("adam", 3e-4, 0.9, 0.999)
    assert cfg.model.hidden == [256, 256, 256] and cfg.model.n_freqs == 8
    assert cfg.effective_batch_size() == 128
    assert cfg.replace(dataset={"name": "grid8"}).effective_batch_size() == 32


def test_json_round_trip(tmp_path):
    cfg = RunConfig(name="x", seed=4).replace(vecor={"enabled": True, "K": 3, "perturb": {"params": {"k": 3}}})
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg and back.hash() == cfg.hash()
    assert cfg.replace(seed=5).hash() != cfg.hash()


def test_partial_file_fills_defaults(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"steps": 10, "vecor": {"enabled": True}}))
    cfg = load_config(tmp_path / "c.json")
    assert cfg.steps == 10 and cfg.vecor.lam == 0.05


@pytest.mark.parametrize("data,where", [
    ({"vecor": {"lamda": 0.1}}, "vecor.lamda"),
    ({"steps": "many"}, "steps"),
    ({"optimizer": {"lr": "fast"}}, "optimizer.lr"),
    ({"vecor": {"enabled": "yes"}}, "vecor.enabled"),
    ({"model": []}, "model"),
])
def test_field_level_diagnostics(data, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        from_dict(data)


@pytest.mark.parametrize("changes,where", [
    ({"dataset": {"name": "mnist"}}, "dataset.name"),
    ({"vecor": {"enabled": True, "lam": 0.6, "K": 2}}, "vecor"),
    ({"vecor": {"enabled": True, "perturb": {"operator": "rotate"}}}, "vecor.perturb"),
    ({"sampler": {"kind": "heun2", "nfe": 51}}, "sampler"),
    ({"optimizer": {"kind": "rmsprop"}}, "optimizer.kind"),
    ({"steps": -1}, "steps"),
])
def test_validate_names_the_field(changes, where):
    with pytest.raises(ConfigError, match=f"^{where}"):
        RunConfig().replace(**changes).validate()


def test_disabled_block_is_not_checked():
    RunConfig().replace(vecor={"lam": 0.6, "K": 2}).validate()


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")


def test_csv_format():
    assert fmt(0.1 + 0.2) == "0.3" and fmt(1e-20) == "1e-20" and fmt(3) == "3"
    text = csv_text(("a", "b"), [(1, 2.5), ("x", 1 / 3)])
    assert text == "a,b\n1,2.5\nx,0.333333333333\n"
    assert "\r" not in text
