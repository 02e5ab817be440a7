import pytest

from bayesic.config import ConfigError, RunConfig, apply_overrides, config_from_dict, dump_config, load_config


def test_seed_is_required():
    with pytest.raises(ConfigError, match="seed"):
        config_from_dict({})


def test_defaults():
    cfg = config_from_dict({"seed": 3})
    assert cfg.training.seed == 3 and cfg.training.epochs == 20 and cfg.training.batch_size == 32
    assert cfg.training.ae_weight == cfg.training.cascade_weight == 1.0
    assert cfg.model.window == 64 and cfg.model.n_components == 8


@pytest.mark.parametrize("raw, key", [
    ({"seed": 1, "training": {"bogus": 1}}, "training.bogus"),
    ({"seed": 1, "nonsense": {}}, "nonsense"),
    ({"seed": 1, "training": {"seed": 4}}, "training.seed"),
])
def test_unknown_key_named(raw, key):
    with pytest.raises(ConfigError, match=key):
        config_from_dict(raw)


def test_overrides_coerce_types():
    raw = apply_overrides({"seed": 1}, ["training.epochs=3", "training.use_poi=false", "seed=9",
                                       "model.sigma_floor=1e-2"])
    cfg = config_from_dict(raw)
    assert cfg.seed == cfg.training.seed == 9
    assert cfg.training.epochs == 3 and cfg.training.use_poi is False and cfg.model.sigma_floor == 0.01
    with pytest.raises(ConfigError, match="model.nope"):
        apply_overrides({}, ["model.nope=1"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["training.epochs"])


def test_invariants_enforced():
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "training": {"epochs": 0}})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "training": {"learning_rate": 0}})
    with pytest.raises(ConfigError, match="training.epochs"):
        config_from_dict({"seed": 1, "training": {"epochs": 2.5}})


def test_yaml_round_trip_and_hash(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 4\ntraining:\n  epochs: 2\nmodel:\n  window: 16\n")
    cfg = load_config(path)
    assert cfg.training.epochs == 2 and cfg.model.window == 16
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict() and again.digest() == cfg.digest()
    assert load_config(path, ["training.epochs=3"]).digest() != cfg.digest()
    assert isinstance(again, RunConfig)
