"""Run configuration: strict schema and construction of the numerical objects."""
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, ExprError
from .expr import parse, phase_variables
from .symplectic import HamiltonianHomotopy, SymplecticStructure

__all__ = ["RunConfig", "load_config", "build_system", "build_mane_problem", "format_validation_error"]

TASKS = ("check-stability", "find-orbit", "continue", "limit-set", "action-report", "mane")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(_Strict):
    name: Optional[str] = None
    n: int = Field(ge=1, le=32)
    hamiltonian: Optional[str] = None
    potential: Optional[str] = None
    metric: Optional[List[List[float]]] = None
    sigma_coupling: str = "H(x) - sigma"
    stabilizer: Optional[List[str]] = None
    magnetic: Optional[Dict[str, Union[str, float]]] = None
    magnetic_constant: float = 0.0
    beta0: Optional[List[str]] = None
    constants: Dict[str, float] = Field(default_factory=dict)
    sigma_range: Tuple[float, float] = (0.0, 1.0)

    @field_validator("sigma_range")
    @classmethod
    def _range(cls, v):
        lo, hi = v
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("sigma_range must satisfy 0 <= start <= end <= 1")
        return v

    @model_validator(mode="after")
    def _shape(self):
        if self.stabilizer is not None and len(self.stabilizer) != 2 * self.n:
            raise ValueError(f"stabilizer needs {2 * self.n} components")
        if self.beta0 is not None and len(self.beta0) != self.n:
            raise ValueError(f"beta0 needs {self.n} components")
        if self.metric is not None:
            m = np.asarray(self.metric, dtype=float)
            if m.shape != (self.n, self.n):
                raise ValueError("metric must be n x n")
        return self


class NumericsConfig(_Strict):
    integration_tol: float = Field(1e-12, gt=0)
    newton_tol: float = Field(1e-10, gt=0)
    floquet_tol: float = Field(1e-6, gt=0)
    samples: int = Field(256, ge=16)
    max_step: float = Field(0.1, gt=0)
    min_step: float = Field(1e-4, gt=0)
    epsilon: Optional[float] = Field(None, gt=0)
    stability_tol: float = Field(1e-6, gt=0)
    kappa_samples: int = Field(12, ge=1)
    kappa_points: int = Field(4, ge=1)
    sample_scale: float = Field(1.0, gt=0)
    envelope_slack: float = Field(1e-5, gt=0)
    action_tol: float = Field(1e-6, gt=0)
    tail_fraction: float = Field(0.2, gt=0, le=1)
    eps_cluster: Optional[float] = Field(None, gt=0)
    fourier_degree: int = Field(4, ge=0)
    grid: int = Field(32, ge=4)
    restarts: int = Field(8, ge=0)
    seed: int = 0


class SyntheticConfig(_Strict):
    kind: Literal["blowup", "exponential", "constant"] = "blowup"
    sigmas: Tuple[float, float] = (0.0, 0.99)
    count: int = Field(60, ge=3)
    tau0: float = Field(2 * np.pi, gt=0)
    rate: float = Field(1.0, gt=0)
    sigma_infinity: float = Field(1.0, gt=0)


class TaskConfig(_Strict):
    kind: Literal[TASKS]
    seed_point: Optional[List[float]] = None
    tau_guess: Optional[float] = Field(None, gt=0)
    sigma: Optional[float] = None
    sigma_target: Optional[float] = None
    sigma_infinity: Optional[float] = None
    stability_points: int = Field(5, ge=1)
    stability_samples: int = Field(20, ge=1)
    cylinder: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None
    kappa: Optional[float] = Field(None, ge=1)


class OutputConfig(_Strict):
    directory: str = "out"
    stem: Optional[str] = None
    formats: List[Literal["json", "csv"]] = Field(default_factory=lambda: ["json", "csv"])


class RunConfig(_Strict):
    system: Optional[SystemConfig] = None
    numerics: NumericsConfig = Field(default_factory=NumericsConfig)
    task: TaskConfig
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _needs(self):
        kind = self.task.kind
        if kind == "limit-set" and self.task.synthetic is not None:
            return self
        if kind == "limit-set" and self.task.cylinder is not None:
            return self
        if self.system is None:
            raise ValueError(f"task {kind!r} needs a system block")
        if kind == "mane":
            if self.system.potential is None and self.system.beta0 is None and not self.system.magnetic_constant:
                raise ValueError("mane needs a potential, beta0 or magnetic_constant")
            return self
        if self.system.hamiltonian is None and self.system.potential is None:
            raise ValueError("system needs a hamiltonian or a potential")
        if kind in ("find-orbit", "continue", "action-report", "limit-set"):
            if self.task.seed_point is None or self.task.tau_guess is None:
                raise ValueError(f"task {kind!r} needs seed_point and tau_guess")
            if len(self.task.seed_point) != 2 * self.system.n:
                raise ValueError(f"seed_point needs {2 * self.system.n} entries")
        if kind in ("continue", "limit-set", "action-report", "check-stability") and self.system.stabilizer is None:
            raise ValueError(f"task {kind!r} needs a stabilizer")
        return self


def format_validation_error(exc: ValidationError):
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def load_config(path):
    """Read and validate a YAML config; raises ConfigError with the key path."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from exc
    return cfg


def _kinetic(n, metric):
    inv = np.linalg.inv(np.asarray(metric, dtype=float)) if metric is not None else np.eye(n)
    terms = []
    for i in range(n):
        for j in range(n):
            if inv[i, j] != 0:
                terms.append(f"{float(0.5 * inv[i, j])!r}*p{i + 1}*p{j + 1}")
    return " + ".join(terms) or "0"


def _magnetic_entries(sc):
    out = {}
    for key, val in (sc.magnetic or {}).items():
        try:
            i, j = (int(s) for s in key.split(","))
        except ValueError:
            raise ConfigError(f"system.magnetic key {key!r} must look like 'i,j'") from None
        if not 1 <= i < j <= sc.n:
            raise ConfigError(f"system.magnetic key {key!r} must satisfy 1 <= i < j <= n")
        out[(i - 1, j - 1)] = val
    return out


def build_system(cfg):
    """``(HamiltonianHomotopy, SymplecticStructure)`` from the system block."""
    sc = cfg.system
    names = phase_variables(sc.n)
    try:
        if sc.hamiltonian is not None:
            base = parse(sc.hamiltonian, names, constants=sc.constants)
        else:
            base = parse(f"{_kinetic(sc.n, sc.metric)} + ({sc.potential})", names, constants=sc.constants)
        H = parse(sc.sigma_coupling, names, bindings={"H": base}, constants=sc.constants)
        system = HamiltonianHomotopy(H, sc.n, X=sc.stabilizer, constants=sc.constants,
                                     sigma_range=sc.sigma_range, name=sc.name)
        structure = SymplecticStructure(sc.n, _magnetic_entries(sc) or None, constants=sc.constants)
    except ExprError as exc:
        raise ConfigError(f"system expression error: {exc}") from exc
    return system, structure


def build_mane_problem(cfg):
    from .mane import ManeProblem

    sc = cfg.system
    alpha = None
    if sc.magnetic:
        alpha = {k: v for k, v in _magnetic_entries(sc).items()}
    try:
        return ManeProblem(sc.n, V=sc.potential or "0", metric=sc.metric, beta0=sc.beta0,
                           B=sc.magnetic_constant, alpha=alpha, constants=sc.constants)
    except ExprError as exc:
        raise ConfigError(f"system expression error: {exc}") from exc
