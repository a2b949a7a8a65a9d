"""Experiment configuration files.

Flat ``section.key = value`` lines, ``#`` comments, blank lines ignored.
Parsed into a typed :class:`ExperimentConfig`; unknown keys and malformed
values are rejected with the offending field named.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .errors import ConfigInvalid, ConfigSyntax

TOPOLOGY_KINDS = ("ring", "torus", "complete", "file")
OBJECTIVE_FAMILIES = ("sigmoid", "quadratic")
DATA_MODES = ("heterogeneous", "homogeneous")
INIT_KINDS = ("equal", "gaussian")
ALGORITHM_LABELS = ("dsgd", "csgd", "hete_dsgd", "homo_dsgd")
CSGD_SAMPLING = ("per_agent", "pooled")


def parse_config_text(text: str) -> dict:
    """Parse config text into a flat ``{"section.key": "value"}`` mapping."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigSyntax(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or "." not in key:
            raise ConfigSyntax(f"line {lineno}: key must look like 'section.key', got {key!r}")
        if not value:
            raise ConfigSyntax(f"line {lineno}: empty value for {key!r}")
        if key in mapping:
            raise ConfigSyntax(f"line {lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigInvalid(key, f"expected an integer, got {value!r}") from None


def _to_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigInvalid(key, f"expected a number, got {value!r}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, with defaults for the optional knobs."""

    # topology
    topology_kind: str = "ring"
    topology_n: int = 12
    topology_rows: int = 0
    topology_cols: int = 0
    topology_self_weight: float = 0.9
    topology_path: str = ""
    # objective
    objective_family: str = "sigmoid"
    objective_d: int = 5
    objective_per_agent: int = 200
    objective_mode: str = "heterogeneous"
    objective_seed: int = 0
    objective_noise_std: float = 0.5
    objective_condition: float = 2.0
    objective_b_scale: float = 1.0
    # init
    init_kind: str = "gaussian"
    init_value: float = 0.0
    init_mean: float = 1.0
    init_std: float = 0.8
    # schedule
    schedule_kind: str = "sqrt_decay"
    schedule_value: float = 0.0
    schedule_a0: float | str = "auto"
    schedule_a1: float | str = "auto"
    schedule_horizon: int = 0  # 0 means: use run_T
    # run
    run_T: int = 5000
    run_runs: int = 50
    run_master_seed: int = 0
    run_algorithms: tuple = ("hete_dsgd", "homo_dsgd", "csgd")
    run_csgd_sampling: str = "per_agent"
    run_record_stride: int = 1
    run_out: str = ""
    # transient
    transient_delta: float = 0.25
    transient_window: int = 25
    # constant estimation
    estimate_probe_count: int = 64
    estimate_draw_count: int = 2048
    estimate_radius: float = 3.0

    source_text: str = field(default="", repr=False, compare=False)
    sha256: str = field(default="", repr=False, compare=False)

    def __post_init__(self):
        if self.topology_kind not in TOPOLOGY_KINDS:
            raise ConfigInvalid("topology.kind", f"must be one of {TOPOLOGY_KINDS}")
        if self.objective_family not in OBJECTIVE_FAMILIES:
            raise ConfigInvalid("objective.family", f"must be one of {OBJECTIVE_FAMILIES}")
        if self.objective_mode not in DATA_MODES:
            raise ConfigInvalid("objective.mode", f"must be one of {DATA_MODES}")
        if self.init_kind not in INIT_KINDS:
            raise ConfigInvalid("init.kind", f"must be one of {INIT_KINDS}")
        if self.run_csgd_sampling not in CSGD_SAMPLING:
            raise ConfigInvalid("run.csgd_sampling", f"must be one of {CSGD_SAMPLING}")
        for label in self.run_algorithms:
            if label not in ALGORITHM_LABELS:
                raise ConfigInvalid("run.algorithms", f"unknown algorithm {label!r}")
        if not self.run_algorithms:
            raise ConfigInvalid("run.algorithms", "at least one algorithm is required")
        if len(set(self.run_algorithms)) != len(self.run_algorithms):
            raise ConfigInvalid("run.algorithms", "duplicate algorithm labels")
        if self.objective_d < 1 or self.objective_per_agent < 1:
            raise ConfigInvalid("objective.d", "need d >= 1 and per_agent >= 1")
        if not self.objective_condition > 0:
            raise ConfigInvalid("objective.condition", "must be > 0")
        if self.objective_noise_std < 0:
            raise ConfigInvalid("objective.noise_std", "must be >= 0")
        if self.estimate_probe_count < 1 or self.estimate_draw_count < 1:
            raise ConfigInvalid("estimate.probe_count", "need probe_count, draw_count >= 1")
        if not self.estimate_radius > 0:
            raise ConfigInvalid("estimate.radius", "must be > 0")
        if self.run_T < 1:
            raise ConfigInvalid("run.T", "must be >= 1")
        if self.run_runs < 1:
            raise ConfigInvalid("run.runs", "must be >= 1")
        if self.run_record_stride < 1:
            raise ConfigInvalid("run.record_stride", "must be >= 1")
        if self.topology_kind == "torus" and (self.topology_rows < 3 or self.topology_cols < 3):
            raise ConfigInvalid("topology.rows", "torus needs rows >= 3 and cols >= 3")
        if self.topology_kind == "file" and not self.topology_path:
            raise ConfigInvalid("topology.path", "required when topology.kind = file")
        if self.schedule_kind not in ("constant", "inv_sqrt_horizon", "sqrt_decay"):
            raise ConfigInvalid("schedule.kind", "unknown schedule kind")
        if self.schedule_kind == "constant" and not self.schedule_value > 0:
            raise ConfigInvalid("schedule.value", "constant schedule needs value > 0")
        auto = self.schedule_a0 == "auto" or self.schedule_a1 == "auto"
        if auto and (self.schedule_a0 != "auto" or self.schedule_a1 != "auto"):
            raise ConfigInvalid("schedule.a0", "a0 and a1 must both be 'auto' or both numeric")
        if auto and self.objective_family != "sigmoid":
            raise ConfigInvalid("schedule.a0", "'auto' is defined only for the sigmoid family")
        if self.schedule_kind == "sqrt_decay" and not auto:
            if not (isinstance(self.schedule_a0, float) and self.schedule_a0 > 0):
                raise ConfigInvalid("schedule.a0", "needs a0 > 0 (or 'auto')")
            if not (isinstance(self.schedule_a1, float) and self.schedule_a1 > 0):
                raise ConfigInvalid("schedule.a1", "needs a1 > 0 (or 'auto')")
        if self.transient_window < 1:
            raise ConfigInvalid("transient.window", "must be >= 1")
        if not self.transient_delta >= 0:
            raise ConfigInvalid("transient.delta", "must be >= 0")

    @property
    def horizon(self) -> int:
        return self.schedule_horizon if self.schedule_horizon > 0 else self.run_T


_KEY_TO_FIELD = {
    "topology.kind": ("topology_kind", str),
    "topology.n": ("topology_n", int),
    "topology.rows": ("topology_rows", int),
    "topology.cols": ("topology_cols", int),
    "topology.self_weight": ("topology_self_weight", float),
    "topology.path": ("topology_path", str),
    "objective.family": ("objective_family", str),
    "objective.d": ("objective_d", int),
    "objective.per_agent": ("objective_per_agent", int),
    "objective.mode": ("objective_mode", str),
    "objective.seed": ("objective_seed", int),
    "objective.noise_std": ("objective_noise_std", float),
    "objective.condition": ("objective_condition", float),
    "objective.b_scale": ("objective_b_scale", float),
    "init.kind": ("init_kind", str),
    "init.value": ("init_value", float),
    "init.mean": ("init_mean", float),
    "init.std": ("init_std", float),
    "schedule.kind": ("schedule_kind", str),
    "schedule.value": ("schedule_value", float),
    "schedule.a0": ("schedule_a0", "auto_or_float"),
    "schedule.a1": ("schedule_a1", "auto_or_float"),
    "schedule.horizon": ("schedule_horizon", int),
    "run.T": ("run_T", int),
    "run.runs": ("run_runs", int),
    "run.master_seed": ("run_master_seed", int),
    "run.algorithms": ("run_algorithms", "labels"),
    "run.csgd_sampling": ("run_csgd_sampling", str),
    "run.record_stride": ("run_record_stride", int),
    "run.out": ("run_out", str),
    "transient.delta": ("transient_delta", float),
    "transient.window": ("transient_window", int),
    "estimate.probe_count": ("estimate_probe_count", int),
    "estimate.draw_count": ("estimate_draw_count", int),
    "estimate.radius": ("estimate_radius", float),
}


def config_from_mapping(mapping: dict, source_text: str = "") -> ExperimentConfig:
    kwargs = {}
    for key, value in mapping.items():
        if key not in _KEY_TO_FIELD:
            raise ConfigInvalid(key, "unknown configuration key")
        name, kind = _KEY_TO_FIELD[key]
        if kind is int:
            kwargs[name] = _to_int(key, value)
        elif kind is float:
            kwargs[name] = _to_float(key, value)
        elif kind == "auto_or_float":
            kwargs[name] = "auto" if value == "auto" else _to_float(key, value)
        elif kind == "labels":
            labels = tuple(part.strip() for part in value.split(",") if part.strip())
            kwargs[name] = labels
        else:
            kwargs[name] = value
    digest = hashlib.sha256(source_text.encode("utf-8")).hexdigest() if source_text else ""
    return ExperimentConfig(**kwargs, source_text=source_text, sha256=digest)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return config_from_mapping(parse_config_text(text), source_text=text)


def config_as_mapping(config: ExperimentConfig) -> dict:
    """Flat key -> stringified value view, for manifests."""
    reverse = {name: key for key, (name, _) in _KEY_TO_FIELD.items()}
    out = {}
    for f in fields(config):
        if f.name in ("source_text", "sha256"):
            continue
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(value)
        out[reverse[f.name]] = str(value)
    return out
