import json

import pytest

from heavytail_kinetics.config import (HarnessConfig, ModelConfig, NuSpec, SigmaSpec, SimConfig, config_from_dict,
                                       load_config)
from heavytail_kinetics.errors import ConfigError


def test_defaults_validate():
    cfg = HarnessConfig().validate()
    assert cfg.sim.nx == 64 and cfg.sim.nv == 256 and cfg.sim.vmax == 1.0e3
    assert cfg.sim.eps_list == (1.0, 0.5, 0.25, 0.125, 0.0625)


def test_diffusive_walls_need_s_above_half():
    with pytest.raises(ConfigError, match="accommodation"):
        ModelConfig(s=0.4, alpha_left=0.5, alpha_right=0.5).validate()


def test_specular_walls_allow_small_s():
    ModelConfig(s=0.4, alpha_left=0.0, alpha_right=0.0).validate()


@pytest.mark.parametrize("kwargs", [
    {"s": 1.0}, {"s": 0.0}, {"eps": 0.0}, {"eps": 1.5}, {"alpha_left": 1.2},
    {"geometry": "sphere"}, {"operator_kind": "fokker"}, {"delta": 0.0}, {"delta": -0.1},
])
def test_invalid_model_rejected(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs).validate()


def test_odd_velocity_count_rejected():
    with pytest.raises(ConfigError):
        SimConfig(nv=65).validate()


def test_kernel_bounds():
    assert SigmaSpec("sin_x").bounds() == (0.5, 1.5)
    assert NuSpec("constant", 2.0).bounds() == (2.0, 2.0)
    assert SigmaSpec("sin_x_gauss_v").x_dependent
    assert float(NuSpec("sin_x").evaluate(0.25)) == pytest.approx(1.5)


def test_unknown_profile_rejected():
    with pytest.raises(ConfigError, match="unknown sigma profile"):
        ModelConfig(operator_kind="boltzmann", sigma=SigmaSpec("wavy")).validate()


def test_nested_and_flat_dicts_agree():
    nested = config_from_dict({"model": {"s": 0.6, "geometry": "torus"}, "sim": {"nx": 32, "eps_list": [1, 0.5]}})
    flat = config_from_dict({"s": 0.6, "geometry": "torus", "nx": 32, "eps_list": [1, 0.5]})
    assert nested == flat
    assert flat.sim.eps_list == (1, 0.5)


def test_kernel_specs_from_dict():
    cfg = config_from_dict({"operator_kind": "levy_fp", "nu": {"name": "sin_x", "value": 2.0}, "sigma": "sin_x"})
    assert cfg.model.nu == NuSpec("sin_x", 2.0)
    assert cfg.model.sigma == SigmaSpec("sin_x")


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"resolution": 10})


def test_load_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"model": {"alpha_left": 1.0, "alpha_right": 1.0}, "sim": {"T": 2.0}}))
    cfg = load_config(path)
    assert cfg.model.alpha_left == 1.0 and cfg.sim.T == 2.0


def test_load_config_bad_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="could not parse"):
        load_config(path)


def test_override_routes_keys_and_skips_none():
    cfg = HarnessConfig().override(eps=0.25, nx=32, dt=None, seeds=[1, 2])
    assert cfg.model.eps == 0.25
    assert cfg.sim.nx == 32 and cfg.sim.dt == 1.0e-2 and cfg.sim.seeds == (1, 2)
    with pytest.raises(ConfigError):
        HarnessConfig().override(colour="red")


def test_with_eps_and_to_dict():
    cfg = HarnessConfig().with_eps(0.5)
    assert cfg.model.eps == 0.5
    assert cfg.to_dict()["model"]["eps"] == 0.5


def test_positive_delta_accepted():
    assert ModelConfig(delta=2.0 ** -8).validate().delta == 2.0 ** -8


def test_dissipation_weight_uses_full_rate():
    sim = SimConfig()
    assert sim.dissipation_rate_fraction == 1.0
    assert not sim.gate_spread
    with pytest.raises(ConfigError, match="dissipation_rate_fraction"):
        SimConfig(dissipation_rate_fraction=1.5).validate()
