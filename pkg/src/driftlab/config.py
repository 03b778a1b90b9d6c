"""Experiment configuration files (JSON), validated before any numerical work.

Every exponent must be given explicitly; unknown keys are rejected.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .fields import admissibility


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration (exit code 2 in the CLI)."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridCfg(_Strict):
    d: Literal[1, 2, 3]
    L: float = Field(gt=0)
    n_x: int = Field(ge=8)
    T: float = Field(gt=0)
    n_t: int = Field(ge=8)


class MCCfg(_Strict):
    paths: int = Field(ge=2)
    dt_mc: float | None = Field(default=None, gt=0)
    seed: int = 0


# drift selectors


class ZeroDrift(_Strict):
    type: Literal["zero"]


class ConstantDrift(_Strict):
    type: Literal["constant"]
    value: list[float]


class SineDrift(_Strict):
    """``b_i = amplitude * sin(x_i) * (1 + t)``."""

    type: Literal["sine"]
    amplitude: float


class SwirlDrift(_Strict):
    """Smooth localized drift ``amplitude * (x_1, 1/2, ...) * exp(-|x|^2)``."""

    type: Literal["swirl"]
    amplitude: float


class RadialDrift(_Strict):
    """``b = -coefficient * x / |x|^(exponent + 1)``, capped in magnitude at ``cap``."""

    type: Literal["radial"]
    coefficient: float
    exponent: float = Field(gt=0)
    cap: float = Field(gt=0)
    time_factor: float = 0.0


class DecomposedDrift(_Strict):
    type: Literal["decomposed"]
    base: RadialDrift
    p0_lps: float
    q0_lps: float
    N_hat: float = Field(gt=0)
    part: Literal["b_prime", "B"]


Drift = Annotated[Union[ZeroDrift, ConstantDrift, SineDrift, SwirlDrift, RadialDrift, DecomposedDrift], Field(discriminator="type")]


# forcing selectors


class GaussianForcing(_Strict):
    type: Literal["gaussian"]
    width: float = Field(gt=0)
    t_center: float | None = None
    t_width: float | None = Field(default=None, gt=0)
    amplitude: float = 1.0


class ConstantForcing(_Strict):
    type: Literal["constant"]
    value: float


class ZeroForcing(_Strict):
    type: Literal["zero"]


Forcing = Annotated[Union[GaussianForcing, ConstantForcing, ZeroForcing], Field(discriminator="type")]


def _check_exponent(name: str, v: float) -> float:
    if not v > 1:
        raise ValueError(f"{name}={v} must exceed 1")
    return v


# experiments


class CompositionCase(_Strict):
    alpha: float = Field(ge=1)
    beta: float = Field(ge=1)
    k: float = Field(gt=0)
    d: Literal[1, 2, 3]


class ConstantsCfg(_Strict):
    kind: Literal["constants"]
    dims: list[Literal[1, 2, 3]] = []
    composition: list[CompositionCase] = []
    tolerance: dict[str, float] = {"1": 0.02, "2": 0.02, "3": 0.05}
    composition_tolerance: float = 0.05


class InversePowerField(_Strict):
    """``|x|^-exponent`` with ``|x|`` floored at ``clip_steps * h``."""

    type: Literal["inverse_power"]
    exponent: float = Field(gt=0)
    clip_steps: float = Field(default=2.0, gt=0)


class MorreyCfg(_Strict):
    kind: Literal["morrey"]
    grid: GridCfg
    field: InversePowerField
    alpha: float = Field(gt=0)
    p0: float
    radii: list[float] | None = None
    expected: float | None = None
    tolerance: float = 0.03
    random_pairs: int = Field(default=0, ge=0)
    random_seed: int = 0

    @model_validator(mode="after")
    def _exponents(self):
        _check_exponent("p0", self.p0)
        if self.p0 > self.grid.d:
            raise ValueError(f"p0={self.p0} must not exceed d={self.grid.d}")
        if self.alpha > self.grid.d / self.p0 + 1e-12:
            raise ValueError(f"alpha={self.alpha} exceeds d/p0")
        return self


class DecomposeCfg(_Strict):
    kind: Literal["decompose"]
    grid: GridCfg
    drift: RadialDrift
    p0_lps: float
    q0_lps: float
    N_hat: list[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _exponents(self):
        if not self.p0_lps > self.grid.d:
            raise ValueError(f"p0_lps={self.p0_lps} must exceed d={self.grid.d}")
        if not admissibility(self.q0_lps, self.p0_lps, self.grid.d, "lps_critical"):
            raise ValueError("(q0_lps, p0_lps) must satisfy d/p0 + 2/q0 = 1")
        return self


class SolveCfg(_Strict):
    kind: Literal["solve"]
    grid: GridCfg
    drift: Drift
    forcing: Forcing
    q: float
    p: float
    substeps: int = Field(default=1, ge=1)
    picard: bool = False
    max_iter: int = Field(default=30, ge=1)
    picard_tolerance: float = 0.02

    @model_validator(mode="after")
    def _exponents(self):
        _check_exponent("q", self.q)
        _check_exponent("p", self.p)
        if not admissibility(self.q, self.p, self.grid.d, "subcritical"):
            raise ValueError(f"(q, p)=({self.q}, {self.p}) violates d/p + 2/q < 2")
        return self


class ScalingCfg(_Strict):
    kind: Literal["scaling"]
    d: Literal[1, 2, 3]
    q: float
    p: float
    T_list: list[float] = Field(min_length=3)
    L: float = Field(gt=0)
    n_x: int = Field(ge=8)
    n_t: int = Field(ge=8)
    width: float = Field(default=1.0, gt=0)
    tolerance: float = 0.1

    @model_validator(mode="after")
    def _exponents(self):
        _check_exponent("q", self.q)
        _check_exponent("p", self.p)
        if not admissibility(self.q, self.p, self.d, "subcritical"):
            raise ValueError(f"(q, p)=({self.q}, {self.p}) violates d/p + 2/q < 2")
        if any(T <= 0 for T in self.T_list):
            raise ValueError("horizons must be positive")
        return self


class MCExpCfg(_Strict):
    kind: Literal["mc"]
    grid: GridCfg
    mc: MCCfg
    drifts: list[Drift] = []
    B_part: Drift | None = None
    lambdas: list[float] = []
    forcing: Forcing | None = None
    start: list[float] | None = None
    fd_budget: float = 0.05

    @field_validator("lambdas")
    @classmethod
    def _lam(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("lambda must be nonnegative")
        return v


class RadialCase(_Strict):
    d: int = Field(ge=2)
    theta: float = Field(gt=0, lt=1)


class BlowupCfg(_Strict):
    theta: float = Field(gt=0, lt=1)
    n_list: list[int] = Field(min_length=2)
    kappa: float = Field(default=30.0, gt=0)
    growth: float = 10.0
    control_d: int = 3
    control_p: float = 2.0
    control_factor: float = 2.0


class CounterexampleCfg(_Strict):
    kind: Literal["counterexample"]
    residual_cases: list[RadialCase] = []
    levels: list[tuple[int, int]] = [(32, 16), (64, 32), (128, 64)]
    min_order: float = 1.0
    blowup: BlowupCfg | None = None


class AnisotropicCfg(_Strict):
    kind: Literal["anisotropic"]
    d: int = Field(ge=3)
    p: float
    q: float
    h_list: list[float] = Field(min_length=3)
    exponent_tolerance: float = 0.2
    cauchy_tolerance: float = 0.02

    @model_validator(mode="after")
    def _exponents(self):
        if not self.p > self.d / 2:
            raise ValueError(f"p={self.p} must exceed d/2")
        if not 1 < self.q < self.d / 2:
            raise ValueError(f"q={self.q} must lie in (1, d/2)")
        return self


ExperimentConfig = Annotated[
    Union[ConstantsCfg, MorreyCfg, DecomposeCfg, SolveCfg, ScalingCfg, MCExpCfg, CounterexampleCfg, AnisotropicCfg],
    Field(discriminator="kind"),
]


class _Wrapper(_Strict):
    experiment: ExperimentConfig


def parse_config(data: dict, kind: str | None = None):
    """Validate a config mapping; ``kind`` (from the subcommand) must match when given."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if kind is not None:
        if "kind" not in data:
            data = {**data, "kind": kind}
        elif data["kind"] != kind:
            raise ConfigError(f"config kind {data['kind']!r} does not match subcommand {kind!r}")
    try:
        return _Wrapper(experiment=data).experiment
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"][1:])
            msgs.append(f"{loc or '<root>'}: {err['msg']}")
        raise ConfigError("; ".join(msgs)) from None


def load_config(path: str | Path, kind: str | None = None):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(data, kind)
