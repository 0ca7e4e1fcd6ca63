import numpy as np
import pytest

from heavytail_kinetics.config import HarnessConfig, ModelConfig, SimConfig
from heavytail_kinetics.equilibria import build_velocity_grid, eval_M1
from heavytail_kinetics.evolution import build_problem


TINY_SIM = SimConfig(nx=16, nv=64, vmax=1.0e3, dt=1.0e-2, T=0.5, record_every=5, ensemble_size=6,
                     eps_list=(1.0, 0.5), probe_eps=(0.5, 0.25, 0.125, 0.0625, 0.03125))


@pytest.fixture(scope="session")
def tiny_sim():
    return TINY_SIM


@pytest.fixture
def tiny_cfg():
    return HarnessConfig(model=ModelConfig(s=0.75, operator_kind="bgk", alpha_left=0.5, alpha_right=0.5),
                         sim=TINY_SIM)


@pytest.fixture(scope="session")
def vgrid():
    return build_velocity_grid(0.75, vmax=1.0e3, n=64)


@pytest.fixture(scope="session")
def M1(vgrid):
    return eval_M1(0.75, vgrid)


@pytest.fixture
def make_problem():
    def factory(sim=TINY_SIM, cm_scale=1.0, **model):
        params = dict(s=0.75, operator_kind="bgk", alpha_left=0.5, alpha_right=0.5)
        params.update(model)
        return build_problem(ModelConfig(**params), sim, cm_scale=cm_scale)
    return factory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
