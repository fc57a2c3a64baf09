"""
Run configuration: JSON file values, overridden by command line flags.
"""
import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Optional

from .errors import ConfigError

MODES = ("simulate", "estimate-mean", "estimate-ate", "fit-ps")
FIT_PS_MODELS = ("offset-logistic", "offset-lasso", "mcar", "stratified", "stratified-lasso")
HIGH_DIMENSION_REPS_THRESHOLD = 50


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"environment variable {name} must be an integer, got '{value}'") from exc


@dataclass(frozen=True)
class RunConfig:
    mode: Optional[str] = None
    setting: Optional[str] = None
    N: int = 10000
    p: int = 10
    pi: float = 0.01
    reps: Optional[int] = None
    s_m: Optional[int] = None
    s_pi: Optional[int] = None
    ps: str = "logistic"
    m: str = "ls"
    m1: str = "ls"
    m0: str = "ls"
    K: int = 5
    B: int = 10
    alpha: float = 0.05
    seed: int = 0
    n_jobs: Optional[int] = None
    adjust: bool = False
    highdim: bool = False
    model: str = "offset-logistic"
    input: Optional[str] = None
    schema: Optional[str] = None
    output: Optional[str] = None
    ps_grid: Optional[List[str]] = None
    m_grid: Optional[List[str]] = None
    progress: bool = False

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RunConfig":
        unknown = sorted(set(payload) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        return cls(**payload)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                payload = json.load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(payload)

    def merge(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Copy with every non-None override applied."""
        unknown = sorted(set(overrides) - set(self.keys()))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @property
    def replications(self) -> int:
        """Explicit reps, else 500 (100 above the high-dimension threshold)."""
        if self.reps is not None:
            return self.reps
        return 100 if self.p > HIGH_DIMENSION_REPS_THRESHOLD else 500

    @property
    def workers(self) -> int:
        return self.n_jobs if self.n_jobs is not None else _env_int("DRSS_N_JOBS", 1)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """sha256 of the canonical JSON form; worker count excluded."""
        payload = {k: v for k, v in self.to_dict().items() if k not in ("n_jobs", "progress")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {list(MODES)}, got {self.mode!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.K < 2:
            raise ConfigError(f"K must be at least 2, got {self.K}")
        if self.workers == 0:
            raise ConfigError("n_jobs must be nonzero")

        if self.mode == "simulate":
            if not self.setting:
                raise ConfigError("simulate needs a setting")
            if self.replications < 1 or self.N < 2 or self.p < 1:
                raise ConfigError(f"need reps >= 1, N >= 2, p >= 1 (got {self.replications}, {self.N}, {self.p})")
            if not 0.0 < self.pi < 1.0:
                raise ConfigError(f"pi must lie in (0, 1), got {self.pi}")
            if (self.ps_grid is None) != (self.m_grid is None):
                raise ConfigError("ps_grid and m_grid must be given together")
            return self

        if not self.input or not self.schema:
            raise ConfigError(f"{self.mode} needs both an input CSV and a schema")
        if self.mode == "estimate-ate" and self.B < 1:
            raise ConfigError(f"B must be at least 1, got {self.B}")
        if self.mode == "fit-ps" and self.model not in FIT_PS_MODELS:
            raise ConfigError(f"fit-ps model must be one of {list(FIT_PS_MODELS)}, got {self.model!r}")
        return self
