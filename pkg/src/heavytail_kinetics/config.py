"""Model and simulation configuration.

Everything the harness needs is described by two frozen dataclasses:
``ModelConfig`` (the physics: s, eps, operator, sigma/nu, accommodation, geometry, delta)
and ``SimConfig`` (resolution, time stepping, sweep and gating values).
Both can be loaded from a flat or nested JSON file mirroring their fields.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)

OPERATOR_KINDS = ("bgk", "boltzmann", "levy_fp")
GEOMETRIES = ("slab", "torus")
GRADINGS = ("geometric", "power")
TRANSPORT_SCHEMES = ("implicit", "explicit")
INITIAL_KINDS = ("macro", "micro", "mixed", "random")


def _sigma_constant(x, v, vp):
    return np.ones(np.broadcast(x, v, vp).shape)


def _sigma_sin_x(x, v, vp):
    return (1.0 + 0.5 * np.sin(2.0 * np.pi * x)) * np.ones(np.broadcast(x, v, vp).shape)


def _sigma_sin_x_gauss_v(x, v, vp):
    return (1.0 + 0.5 * np.sin(2.0 * np.pi * x)) * (1.0 + 0.5 * np.exp(-((v - vp) ** 2)))


def _nu_constant(x):
    return np.ones(np.shape(x))


def _nu_sin_x(x):
    return 1.0 + 0.5 * np.sin(2.0 * np.pi * np.asarray(x))


# name -> (profile, lower bound, upper bound) for a unit prefactor
SIGMA_REGISTRY: Dict[str, Tuple[Callable, float, float]] = {
    "constant": (_sigma_constant, 1.0, 1.0),
    "sin_x": (_sigma_sin_x, 0.5, 1.5),
    "sin_x_gauss_v": (_sigma_sin_x_gauss_v, 0.5, 2.25),
}

NU_REGISTRY: Dict[str, Tuple[Callable, float, float]] = {
    "constant": (_nu_constant, 1.0, 1.0),
    "sin_x": (_nu_sin_x, 0.5, 1.5),
}


@dataclass(frozen=True)
class KernelSpec:
    """A registry profile scaled by ``value``; bounds follow from the registry."""

    name: str = "constant"
    value: float = 1.0

    @property
    def x_dependent(self) -> bool:
        return self.name != "constant"


@dataclass(frozen=True)
class SigmaSpec(KernelSpec):
    def evaluate(self, x, v, vp) -> np.ndarray:
        profile = _lookup(SIGMA_REGISTRY, self.name, "sigma")[0]
        return self.value * profile(x, v, vp)

    def bounds(self) -> Tuple[float, float]:
        _, lo, hi = _lookup(SIGMA_REGISTRY, self.name, "sigma")
        return self.value * lo, self.value * hi


@dataclass(frozen=True)
class NuSpec(KernelSpec):
    def evaluate(self, x) -> np.ndarray:
        profile = _lookup(NU_REGISTRY, self.name, "nu")[0]
        return self.value * profile(x)

    def bounds(self) -> Tuple[float, float]:
        _, lo, hi = _lookup(NU_REGISTRY, self.name, "nu")
        return self.value * lo, self.value * hi


def _lookup(registry, name, what):
    try:
        return registry[name]
    except KeyError:
        raise ConfigError(f"unknown {what} profile '{name}' (choose from {sorted(registry)})") from None


@dataclass(frozen=True)
class ModelConfig:
    """Physical parameters of the kinetic problem."""

    s: float = 0.75
    eps: float = 1.0
    operator_kind: str = "bgk"
    sigma: SigmaSpec = field(default_factory=SigmaSpec)
    nu: NuSpec = field(default_factory=NuSpec)
    alpha_left: float = 0.0
    alpha_right: float = 0.0
    geometry: str = "slab"
    delta: Optional[float] = None

    @property
    def alpha_is_zero(self) -> bool:
        return self.geometry == "torus" or (self.alpha_left == 0.0 and self.alpha_right == 0.0)

    def validate(self) -> "ModelConfig":
        if not 0.0 < self.s < 1.0:
            raise ConfigError(f"s must lie in (0, 1), got {self.s}")
        if not 0.0 < self.eps <= 1.0:
            raise ConfigError(f"eps must lie in (0, 1], got {self.eps}")
        if self.delta is not None and self.delta <= 0.0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.operator_kind not in OPERATOR_KINDS:
            raise ConfigError(f"operator_kind must be one of {OPERATOR_KINDS}, got '{self.operator_kind}'")
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}, got '{self.geometry}'")
        for name, alpha in (("alpha_left", self.alpha_left), ("alpha_right", self.alpha_right)):
            if not 0.0 <= alpha <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {alpha}")
        if not self.alpha_is_zero and self.s <= 0.5:
            raise ConfigError(
                f"accommodation hypothesis violated: s = {self.s} <= 1/2 requires alpha == 0 "
                "at both walls (the wall flux of M diverges)"
            )
        self._check_kernel_bounds()
        return self

    def _check_kernel_bounds(self) -> None:
        xs = np.linspace(0.0, 1.0, 33)
        vs = np.linspace(-50.0, 50.0, 41)
        if self.operator_kind == "boltzmann":
            lo, hi = self.sigma.bounds()
            if lo <= 0.0:
                raise ConfigError(f"sigma lower bound must be positive, got {lo}")
            sample = self.sigma.evaluate(xs[:, None, None], vs[None, :, None], vs[None, None, :])
            if sample.min() < lo * (1 - 1e-12) or sample.max() > hi * (1 + 1e-12):
                raise ConfigError(f"sigma leaves its bounds [{lo}, {hi}] on sample points")
            if not np.allclose(sample, np.swapaxes(sample, 1, 2), rtol=0, atol=1e-14):
                raise ConfigError("sigma must be symmetric in (v, v')")
        if self.operator_kind == "levy_fp":
            lo, hi = self.nu.bounds()
            if lo <= 0.0:
                raise ConfigError(f"nu lower bound must be positive, got {lo}")
            sample = self.nu.evaluate(xs)
            if sample.min() < lo * (1 - 1e-12) or sample.max() > hi * (1 + 1e-12):
                raise ConfigError(f"nu leaves its bounds [{lo}, {hi}] on sample points")


@dataclass(frozen=True)
class SimConfig:
    """Discretization, time stepping and gating values."""

    nx: int = 64
    nv: int = 256
    vmax: float = 1.0e3
    grading: str = "geometric"
    dt: float = 1.0e-2
    T: float = 10.0
    record_every: int = 10
    transport: str = "implicit"
    seed: int = 0
    seeds: Tuple[int, ...] = (0,)
    eps_list: Tuple[float, ...] = (1.0, 0.5, 0.25, 0.125, 0.0625)
    probe_eps: Tuple[float, ...] = (0.5, 0.25, 0.125, 0.0625, 0.03125)
    initial: str = "mixed"
    ensemble_size: int = 50
    fit_window: float = 0.8
    fit_floor: float = 1.0e-11
    fit_residual_max: float = 0.25
    lambda_floor: float = 1.0e-2
    spread_max: float = 5.0
    gate_spread: bool = False
    dissipation_rate_fraction: float = 1.0
    slope_tol: float = 0.15
    mass_defect_max: float = 0.1
    workers: int = 1

    def validate(self) -> "SimConfig":
        if self.nx < 4:
            raise ConfigError(f"nx must be at least 4, got {self.nx}")
        if self.nv < 4 or self.nv % 2:
            raise ConfigError(f"nv must be even and at least 4, got {self.nv}")
        if self.vmax <= 1.0:
            raise ConfigError(f"vmax must exceed 1, got {self.vmax}")
        if self.grading not in GRADINGS:
            raise ConfigError(f"grading must be one of {GRADINGS}, got '{self.grading}'")
        if self.transport not in TRANSPORT_SCHEMES:
            raise ConfigError(f"transport must be one of {TRANSPORT_SCHEMES}, got '{self.transport}'")
        if self.initial not in INITIAL_KINDS:
            raise ConfigError(f"initial must be one of {INITIAL_KINDS}, got '{self.initial}'")
        if self.dt <= 0.0 or self.T <= 0.0:
            raise ConfigError("dt and T must be positive")
        if self.record_every < 1:
            raise ConfigError("record_every must be at least 1")
        if not 0.0 < self.fit_window <= 1.0:
            raise ConfigError(f"fit_window must lie in (0, 1], got {self.fit_window}")
        if not 0.0 < self.dissipation_rate_fraction <= 1.0:
            raise ConfigError(f"dissipation_rate_fraction must lie in (0, 1], got {self.dissipation_rate_fraction}")
        if any(not 0.0 < e <= 1.0 for e in self.eps_list + self.probe_eps):
            raise ConfigError("every eps in eps_list and probe_eps must lie in (0, 1]")
        return self


@dataclass(frozen=True)
class HarnessConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> "HarnessConfig":
        self.model.validate()
        self.sim.validate()
        return self

    def with_eps(self, eps: float) -> "HarnessConfig":
        return replace(self, model=replace(self.model, eps=eps))

    def to_dict(self) -> Dict[str, Any]:
        return {"model": asdict(self.model), "sim": asdict(self.sim)}

    def override(self, **values) -> "HarnessConfig":
        """Replace fields of either dataclass by name; ``None`` values are ignored."""
        values = {k: v for k, v in values.items() if v is not None}
        model_keys = {f.name for f in fields(ModelConfig)}
        sim_keys = {f.name for f in fields(SimConfig)}
        unknown = set(values) - model_keys - sim_keys
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        model = replace(self.model, **{k: v for k, v in values.items() if k in model_keys})
        sim = replace(self.sim, **{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in values.items() if k in sim_keys})
        return HarnessConfig(model, sim)


def _coerce(cls, raw: Dict[str, Any]):
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    values = {}
    for key, value in raw.items():
        if key == "sigma":
            value = SigmaSpec(value) if isinstance(value, str) else SigmaSpec(**value)
        elif key == "nu":
            value = NuSpec(value) if isinstance(value, str) else NuSpec(**value)
        elif isinstance(value, list):
            value = tuple(value)
        values[key] = value
    return cls(**values)


def config_from_dict(raw: Dict[str, Any]) -> HarnessConfig:
    """Accept ``{"model": {...}, "sim": {...}}`` or one flat key-value mapping."""
    if "model" in raw or "sim" in raw:
        model_raw, sim_raw = dict(raw.get("model", {})), dict(raw.get("sim", {}))
    else:
        model_keys = {f.name for f in fields(ModelConfig)}
        model_raw = {k: v for k, v in raw.items() if k in model_keys}
        sim_raw = {k: v for k, v in raw.items() if k not in model_keys}
    return HarnessConfig(_coerce(ModelConfig, model_raw), _coerce(SimConfig, sim_raw))


def load_config(path) -> HarnessConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"could not parse config file {path}: {e}") from e
    cfg = config_from_dict(raw)
    logger.info("loaded configuration from %s", path)
    return cfg
