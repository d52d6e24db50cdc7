"""Run configuration: one YAML document drives every pipeline stage.

Unknown keys are rejected at every level so typos fail loudly instead of
silently running defaults. Any leaf is overridable from the command line as
``--section.key=value``; a handful of common knobs get first-class flags.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import InvalidInputError, InvalidParameterError
from .gmm import GaussianMixture


@dataclass
class PathsConfig:
    video: str | None = None
    events: str | None = None
    events_out: str | None = None
    stacks: str | None = None
    frames: str | None = None
    reference: str | None = None
    diagnostics: str | None = None
    summary: str | None = None
    plot_dir: str | None = None


@dataclass
class SimulatorConfig:
    theta: float = 0.2
    log_floor: float = 1e-4


@dataclass
class AugmentationConfig:
    hot_pixel_rate: float = 0.0
    drop_rate: float = 0.0
    hot_rate_hz: float = 10.0


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 8.5e-4
    beta_end: float = 1.2e-2


@dataclass
class GuidanceSection:
    eta: float = 1.0
    inner_steps: int = 5
    ddim_steps: int = 25
    n_frames: int = 16
    guidance_scale: float = 7.5
    channels: int = 1


@dataclass
class MixtureConfig:
    # means: inline nested list (k rows), or {"file": "..."} naming a TNS1
    # tensor whose first axis indexes components
    means: Any = None
    weights: list | None = None
    sigma2: float = 1.0


@dataclass
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    mixture: MixtureConfig = field(default_factory=MixtureConfig)


_SECTIONS = {
    "paths": PathsConfig,
    "simulator": SimulatorConfig,
    "augmentation": AugmentationConfig,
    "schedule": ScheduleConfig,
    "guidance": GuidanceSection,
    "mixture": MixtureConfig,
}


def _from_mapping(cls, data: dict, context: str):
    if not isinstance(data, dict):
        raise InvalidInputError(f"config section {context!r} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise InvalidInputError(
            f"unknown config key(s) under {context!r}: {', '.join(unknown)}"
        )
    return cls(**data)


def build_run_config(doc: dict | None) -> RunConfig:
    doc = dict(doc or {})
    known = set(_SECTIONS) | {"seed"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise InvalidInputError(f"unknown top-level config key(s): {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    if "seed" in doc:
        seed = doc["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise InvalidInputError("seed must be an integer")
        kwargs["seed"] = seed
    for name, cls in _SECTIONS.items():
        if name in doc:
            kwargs[name] = _from_mapping(cls, doc[name], name)
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise InvalidInputError(f"{path}: invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{path}: config root must be a mapping")
    return build_run_config(doc)


def apply_override(doc: dict, dotted_key: str, raw_value: str) -> None:
    """Set doc[a][b]... = parsed value for an `a.b=value` override. The value
    text is parsed as YAML, so numbers and booleans come out typed."""
    parts = dotted_key.split(".")
    if not all(parts):
        raise InvalidInputError(f"malformed override key {dotted_key!r}")
    node = doc
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise InvalidInputError(
                f"override {dotted_key!r} descends into non-mapping {p!r}"
            )
        node = nxt
    try:
        node[parts[-1]] = yaml.safe_load(raw_value)
    except yaml.YAMLError as exc:
        raise InvalidInputError(f"cannot parse override value {raw_value!r}") from exc


def build_mixture(mix: MixtureConfig, base_dir: Path) -> GaussianMixture:
    """Materialize the mixture: inline means or a TNS1 file reference whose
    first axis indexes components."""
    if mix.means is None:
        raise InvalidInputError("mixture.means is required for sampling")
    if isinstance(mix.means, dict):
        unknown = sorted(set(mix.means) - {"file"})
        if unknown:
            raise InvalidInputError(
                f"unknown mixture.means key(s): {', '.join(unknown)}"
            )
        from .formats import read_tns1  # local import to avoid a cycle

        ref = Path(mix.means["file"])
        if not ref.is_absolute():
            ref = base_dir / ref
        tensor = read_tns1(ref).astype(np.float64)
        means = tensor.reshape(tensor.shape[0], -1)
    else:
        means = np.asarray(mix.means, dtype=np.float64)
        if means.ndim == 1:
            means = means[None, :]
        elif means.ndim > 2:
            means = means.reshape(means.shape[0], -1)
    k = means.shape[0]
    if mix.weights is None:
        weights = np.full(k, 1.0 / k)
    else:
        weights = np.asarray(mix.weights, dtype=np.float64)
    if not (mix.sigma2 >= 0):
        raise InvalidParameterError("mixture.sigma2 must be non-negative")
    return GaussianMixture(weights=weights, means=means, sigma2=float(mix.sigma2))
