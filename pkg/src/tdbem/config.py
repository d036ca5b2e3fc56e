"""Run configuration: validation, defaults and hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from . import assembly as asm
from .mot import StepSolverConfig
from .quadrature import QuadratureRule
from .studies import HornSetup, Problem

SCREENS = ("square", "disc", "horn")
OPERATORS = ("single_layer", "hypersingular", "dtn", "horn_adjoint_dl")
RHS_IDS = ("PlaneWavePacket", "RingdownG", "RingdownH", "PointSourceDirac", "ZeroLoad")
COMPATIBLE_RHS = {
    "single_layer": {"PlaneWavePacket", "ZeroLoad"},
    "hypersingular": {"RingdownG", "ZeroLoad"},
    "dtn": {"RingdownH", "ZeroLoad"},
    "horn_adjoint_dl": {"PointSourceDirac", "ZeroLoad"},
}


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


@dataclass
class StudyConfig:
    screen: str = "square"
    levels: int = 4
    beta: float = 2.0
    dt: float = 0.005
    T: float = 1.0
    operator: str = "single_layer"
    rhs: str = "PlaneWavePacket"
    rhs_params: dict = field(default_factory=dict)
    quadrature: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    output_dir: str = "out"
    # horn geometry
    horn: dict = field(default_factory=dict)
    # study ladders
    ladder: list = field(default_factory=lambda: [2, 3, 4, 5, 6])
    reference_level: int = 9
    betas: list = field(default_factory=lambda: [2.0, 1.0])
    sections: list = field(default_factory=lambda: ["edge_y0"])
    times: list = field(default_factory=lambda: [0.5, 0.75, 1.0])
    dts: list = field(default_factory=lambda: [0.04, 0.01, 0.005])
    interp_a: float = 0.5
    interp_levels: list = field(default_factory=lambda: [8, 16, 32, 64])

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.screen not in SCREENS:
            raise ConfigError(f"screen must be one of {SCREENS}, got {self.screen!r}")
        if self.operator not in OPERATORS:
            raise ConfigError(f"operator must be one of {OPERATORS}, got {self.operator!r}")
        if self.rhs not in RHS_IDS:
            raise ConfigError(f"rhs must be one of {RHS_IDS}, got {self.rhs!r}")
        if self.rhs not in COMPATIBLE_RHS[self.operator]:
            raise ConfigError(f"rhs {self.rhs} does not match operator {self.operator}")
        if not (isinstance(self.levels, int) and self.levels >= 1):
            raise ConfigError("levels must be a positive integer")
        if not self.beta >= 1.0:
            raise ConfigError(f"beta must be >= 1, got {self.beta}")
        if not (self.dt > 0 and self.T > 0):
            raise ConfigError("dt and T must be positive")
        if self.T < self.dt:
            raise ConfigError("T must cover at least one time step")
        if any(b < 1.0 for b in self.betas):
            raise ConfigError("all betas must be >= 1")
        try:
            self.rule()
            self.solver_config()
            self.rhs_id()
            HornSetup(**self.horn)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.operator == "horn_adjoint_dl" and self.screen != "horn":
            raise ConfigError("horn_adjoint_dl needs the horn screen")
        if self.screen == "horn" and self.operator != "horn_adjoint_dl":
            raise ConfigError("the horn screen supports horn_adjoint_dl only")

    def rule(self) -> QuadratureRule:
        return QuadratureRule(**self.quadrature)

    def solver_config(self) -> StepSolverConfig:
        return StepSolverConfig(**self.solver)

    def rhs_id(self):
        cls = getattr(asm, self.rhs)
        params = dict(self.rhs_params)
        for key in ("k", "y_src"):
            if key in params:
                params[key] = tuple(params[key])
        return cls(**params)

    def problem(self) -> Problem:
        return Problem(self.screen, self.operator, self.dt, self.T, self.rhs_id())

    def horn_setup(self) -> HornSetup:
        return HornSetup(**{**self.horn, "T": self.T})

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "StudyConfig":
        data = {}
        if path is not None:
            try:
                with open(path) as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)
