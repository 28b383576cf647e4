"""Experiment configuration: a flat ``key = value`` file format.

Blank lines and ``#`` comments are ignored. Unknown keys, unparsable values
and inconsistent settings raise :class:`ConfigError` naming the key.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Optional

ALGORITHMS = (
    "fedtop1",
    "fedtop2",
    "fedadmm",
    "fedadmm_modified",
    "fedadmm_vc",
    "fedprox",
    "fedavg",
)

ALGORITHM_LABELS = {
    "fedtop1": "FedTOP-ADMM I",
    "fedtop2": "FedTOP-ADMM II",
    "fedadmm": "FedADMM",
    "fedadmm_modified": "modified FedADMM",
    "fedadmm_vc": "FedADMM-VC",
    "fedprox": "FedProx",
    "fedavg": "FedAvg",
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ExperimentConfig:
    algorithm: str = "fedtop1"
    M: int = 200
    S: int = 10
    J: int = 10
    I: int = 2000
    seed: int = 0

    dataset: str = "mnist"
    data_dir: Optional[str] = None
    synth_n: int = 100
    synth_d: int = 20000
    synth_density: float = 0.1
    synth_logit_scale: float = 1.0
    holdout: float = 0.2
    scaling: str = "approach2"
    partition: str = "iid"
    positive_digit: int = 1
    server_shard_fraction: Optional[float] = None

    kappa: float = 0.001
    upsilon: float = 0.0
    a: Optional[float] = None
    rho_mean: float = 3.4035e-3
    tau0: float = 1e-8
    zeta0: float = 2.5
    mu_prime: float = 10.0
    gamma: float = 1.999
    eta: float = 1e-5
    mu: float = 0.5
    beta: float = 0.0
    curvature: str = "verbatim"

    schedule_clamp: bool = True
    aggregate_literal: bool = False
    per_iteration_metrics: bool = False

    def validate(self) -> "ExperimentConfig":
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not math.isfinite(value):
                raise ConfigError(f.name, "must be finite")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"unknown algorithm {self.algorithm!r}")
        if self.M < 1:
            raise ConfigError("M", "need at least one client")
        if not 0 <= self.S <= self.M:
            raise ConfigError("S", f"selection size {self.S} must lie in [0, M={self.M}]")
        if self.J < 1:
            raise ConfigError("J", "need at least one local iteration per round")
        if self.I < 0:
            raise ConfigError("I", "iteration count must be non-negative")
        if self.dataset not in ("synthetic", "mnist"):
            raise ConfigError("dataset", f"unknown dataset {self.dataset!r}")
        if self.scaling not in ("none", "approach1", "approach2"):
            raise ConfigError("scaling", f"unknown scaling {self.scaling!r}")
        if self.partition not in ("iid", "noniid"):
            raise ConfigError("partition", f"unknown partition {self.partition!r}")
        if self.curvature not in ("verbatim", "per_example"):
            raise ConfigError("curvature", f"unknown curvature recipe {self.curvature!r}")
        if not 0 <= self.synth_density <= 1:
            raise ConfigError("synth_density", "must lie in [0, 1]")
        if not 0 <= self.holdout < 1:
            raise ConfigError("holdout", "must lie in [0, 1)")
        if self.server_shard_fraction is not None and not 0 <= self.server_shard_fraction < 1:
            raise ConfigError("server_shard_fraction", "must lie in [0, 1)")
        for key in ("kappa", "upsilon", "tau0", "zeta0", "mu_prime", "mu", "beta"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "must be non-negative")
        if self.rho_mean <= 0:
            raise ConfigError("rho_mean", "must be positive")
        if self.a is not None and self.a <= 0:
            raise ConfigError("a", "must be positive")
        if self.algorithm.startswith("fedtop") and not 0 < self.gamma < 2:
            raise ConfigError("gamma", "relaxation factor must lie in (0, 2)")
        if self.algorithm in ("fedprox", "fedavg") and self.eta <= 0:
            raise ConfigError("eta", "step size must be positive")
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _coerce(key: str, raw: str, annotation: str):
    optional = annotation.startswith("Optional[")
    if optional:
        if raw.lower() in ("none", ""):
            return None
        annotation = annotation[len("Optional["):-1]
    try:
        if annotation == "int":
            return int(raw, 0)
        if annotation == "float":
            return float(raw)
        if annotation == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {annotation}") from None


def parse_config(text: str) -> ExperimentConfig:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(key, "unknown key")
        values[key] = _coerce(key, raw, str(types[key]))
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
