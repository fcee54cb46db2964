"""Experiment configuration: flat-sectioned TOML with strict key validation."""

from __future__ import annotations

import dataclasses

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .exceptions import ConfigurationError
from .models import MODEL_IDS

__all__ = ["ExperimentConfig", "load_config", "parse_config", "emit_config"]


@dataclasses.dataclass
class ModelSection:
    id: str = "lorenz"
    K: int = 1
    obs_dim: int | None = None
    dt: float = 0.04
    h_scale: float = 0.1
    theta_init_spread: float = 0.1
    A: list | None = None
    B: list | None = None
    C: list | None = None


@dataclasses.dataclass
class DataSection:
    T: int = 128
    trajectories: int = 1
    sigma_w: float = 0.001
    sigma_v: float = 0.01
    seed: int = 0


@dataclasses.dataclass
class CeemSection:
    rho_x: float = 0.5
    rho_theta: float = 0.0
    max_epochs: int = 50
    tol: float | None = None


@dataclasses.dataclass
class PemSection:
    n_particles: int = 100
    n_samples: int = 10
    max_epochs: int = 50
    saem_burnin: int = 5
    saem_decay: float = 0.7
    ess_threshold: float = 0.5


@dataclasses.dataclass
class LearnerSection:
    strategy: str = "auto"
    rho_theta: float | None = None
    max_iterations: int = 100
    step_size: float = 1e-3
    nm_max_iterations: int = 600


@dataclasses.dataclass
class OutputSection:
    directory: str = "out"
    history_name: str = "history.csv"
    params_name: str = "params.json"


@dataclasses.dataclass
class ExperimentConfig:
    model: ModelSection
    data: DataSection
    ceem: CeemSection
    pem: PemSection
    learner: LearnerSection
    output: OutputSection


_SECTIONS = {
    "model": ModelSection,
    "data": DataSection,
    "ceem": CeemSection,
    "pem": PemSection,
    "learner": LearnerSection,
    "output": OutputSection,
}


def _build_section(name, cls, values):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - fields
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    return cls(**values)


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid config syntax: {exc}") from exc
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown section(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in _SECTIONS.items():
        values = doc.get(name, {})
        if not isinstance(values, dict):
            raise ConfigurationError(f"[{name}] must be a section")
        sections[name] = _build_section(name, cls, values)
    cfg = ExperimentConfig(**sections)
    if cfg.model.id not in MODEL_IDS:
        raise ConfigurationError(
            f"model key 'id' references unknown model {cfg.model.id!r}; known: {MODEL_IDS}")
    if cfg.model.id == "lti" and cfg.model.A is None:
        raise ConfigurationError("model key 'A' is required for the lti model")
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def emit_config(cfg: ExperimentConfig) -> str:
    """Serialize a config back to TOML (round trip preserves all settings)."""
    lines = []
    for name in _SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if value is None:
                continue
            lines.append(f"{f.name} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)
