"""Declarative experiment configuration (TOML file plus ``section.key=value`` overrides)."""

from __future__ import annotations

import ast
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

from ..channel import ScenarioConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUTPUT_DIR_ENV = "BEAMCODEX_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


@dataclass
class SweepConfig:
    """Feedback-parameter sweep around a base point.

    Each axis list is swept with the other parameters at their base values,
    except that ``bwp`` sweeps scale NRB as ``nrb_per_bwp * bwp`` when
    ``bwp_scales_nrb`` is set.
    """

    l_csi: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    p_csi: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    bwp: list = field(default_factory=lambda: [1, 2])
    nrb: list = field(default_factory=lambda: [24, 48, 72, 96])
    base_l_csi: int = 32
    base_p_csi: int = 16
    base_bwp: int = 1
    base_nrb: int = 24
    p_sweep_l_csi: int = 32
    bwp_scales_nrb: bool = True
    axes: list = field(default_factory=lambda: ["l_csi", "p_csi", "bwp", "nrb"])


@dataclass
class TrainingConfig:
    n_x0: int = 16
    n_y0: int = 16
    train_samples: int = 6000
    val_samples: int = 800
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 60
    patience: int = 8
    loss_mode: str = "per_beam"
    hidden: list = field(default_factory=lambda: [144, 1808, 272, 240, 80])
    dropout: list = field(default_factory=lambda: [0.2, 0.4, 0.4, 0.0, 0.0])


@dataclass
class SiteTransferConfig:
    site_seed: int = 101
    rng_seed: int = 202
    vehicular_fraction: float = 0.5
    road_offset: float = 60.0
    road_heading_deg: float = -50.0
    sector_center_deg: float = 20.0
    budget_fraction: float = 0.01
    finetune_samples: int = 1500
    test_drops: int = 400


@dataclass
class ExperimentConfig:
    """Everything an experiment needs; reproducible from this object and its seed.

    ``scenario`` drives the MU-MIMO sweeps; ``ssb_scenario`` (a larger user
    population, only the SSB band and one slot per drop are synthesized)
    drives codebook learning and RSRP evaluation.
    """

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    ssb_scenario: ScenarioConfig = field(default_factory=lambda: ScenarioConfig(n_users=400))
    n_x: int = 4
    n_y: int = 8
    o_h: int = 4
    o_v: int = 4
    l_max: int = 8
    seed: int = 1
    monte_carlo_drops: int = 40
    active_user_range: list = field(default_factory=lambda: [4, 8])
    dataset_user_range: list = field(default_factory=lambda: [4, 12])
    include_prob: float = 0.8
    sweep_include_prob: float = 1.0
    scheduler_cap: int = 8
    greedy_fallback: bool = False
    pilots_per_rb: int = 1
    snr_cap_db: float = 60.0
    signaling_overhead: float = 0.1
    subband_rbs: int = 24
    sinr_convention: str = "consistent"
    data_slot_stride: int = 2
    calibration_users: int = 64
    test_drops: int = 2000
    train_user_fraction: float = 0.75
    output_dir: str = "results"
    sweep: SweepConfig = field(default_factory=SweepConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    site_transfer: SiteTransferConfig = field(default_factory=SiteTransferConfig)

    def validate(self):
        try:
            for name in ("n_x", "n_y", "o_h", "o_v", "l_max", "monte_carlo_drops", "scheduler_cap",
                         "pilots_per_rb", "data_slot_stride", "test_drops", "subband_rbs"):
                if int(getattr(self, name)) < 1:
                    raise ConfigError(f"{name} must be >= 1")
            lo, hi = self.active_user_range
            if not 1 <= lo <= hi <= self.scenario.n_users:
                raise ConfigError(
                    f"active_user_range {self.active_user_range} not within [1, {self.scenario.n_users}]")
            lo, hi = self.dataset_user_range
            if not 1 <= lo <= hi <= self.ssb_scenario.n_users:
                raise ConfigError("dataset_user_range outside the SSB user population")
            if self.l_max > self.n_x * self.n_y:
                raise ConfigError("l_max exceeds the number of ports")
            if not self.sweep.axes:
                raise ConfigError("sweep grid is empty")
            for axis in self.sweep.axes:
                if axis not in ("l_csi", "p_csi", "bwp", "nrb"):
                    raise ConfigError(f"unknown sweep axis {axis!r}")
                if not getattr(self.sweep, axis):
                    raise ConfigError(f"sweep axis {axis} has no values")
            if max(self.sweep.l_csi) > self.n_x * self.n_y:
                raise ConfigError("l_csi values exceed the orthogonal block size")
            if self.sinr_convention not in ("consistent", "user_loaded"):
                raise ConfigError("sinr_convention must be 'consistent' or 'user_loaded'")
            if not 0 < self.train_user_fraction < 1:
                raise ConfigError("train_user_fraction must lie in (0, 1)")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_id(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def resolved_output_dir(self):
        return os.environ.get(OUTPUT_DIR_ENV) or self.output_dir


_SECTIONS = {
    "scenario": ScenarioConfig,
    "ssb_scenario": ScenarioConfig,
    "sweep": SweepConfig,
    "training": TrainingConfig,
    "site_transfer": SiteTransferConfig,
}


_SCALAR_OK = {bool: (bool,), int: (int,), float: (int, float), str: (str,)}


def _check_scalar(name, default, value, where):
    ok = _SCALAR_OK.get(type(default))
    if ok is None:
        return
    if not isinstance(value, ok) or (type(default) is not bool and isinstance(value, bool)):
        raise ConfigError(f"[{where}] {name} must be {type(default).__name__}, got {value!r}")


def _build(cls, data, where):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    for name, value in data.items():
        f = fields[name]
        if f.default is not dataclasses.MISSING:
            _check_scalar(name, f.default, value, where)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def config_from_dict(data):
    data = dict(data)
    top = {}
    defaults = ExperimentConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            base = dataclasses.asdict(getattr(defaults, key))
            base.update(value)
            if _SECTIONS[key] is ScenarioConfig and "noise_power" not in value:
                base["noise_power"] = None
            top[key] = _build(_SECTIONS[key], base, key)
        else:
            top[key] = value
    cfg = _build(ExperimentConfig, top, "experiment")
    return cfg.validate()


def _parse_value(text):
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def apply_overrides(data, overrides):
    """Apply ``section.key=value`` (or ``key=value``) strings to a raw config dict."""
    data = json.loads(json.dumps(data))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-table")
        node[parts[-1]] = _parse_value(value)
    return data


def load_config(path=None, overrides=None):
    """Read a TOML file (optional) and apply overrides."""
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(apply_overrides(data, overrides))
