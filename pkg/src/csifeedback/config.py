"""INI experiment configuration: sections [scenario], [cqi], [model],
[train], [eval], every key defaulted, unknown keys rejected.

Rendering a resolved config and parsing it again is a fixed point, which
keeps run directories self-describing.
"""

import configparser
import json
import os
from dataclasses import dataclass, field, fields, asdict

from .channel import ScenarioConfig
from .cqi import CqiTable, LinkBudget, default_thresholds_db
from .model import ModelConfig
from .train import TrainConfig

ENV_CONFIG_PATH = "CSIFB_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class CqiSettings:
    tx_power_dbm: float = 30.0
    noise_power_dbm: float = -70.0
    subcarriers_per_subband: int = 4
    thresholds_db: list = field(default_factory=lambda: list(default_thresholds_db()))


@dataclass
class ModelSettings:
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    channel_uses: int = 104
    constellation_points: int = 4
    cqi_mode: str = "none"
    mod_mode: str = "jcm"
    tau_start: float = 1.0
    tau_end: float = 0.1
    tau_anneal_steps: int = 4000
    hard_sampling: str = "sample"
    straight_through: bool = False


@dataclass
class EvalSettings:
    snr_db_list: list = field(default_factory=lambda: [-10.0, -5.0, 0.0])
    mode: str = "hard"
    seed: int = 0
    batch_size: int = 256


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    cqi: CqiSettings = field(default_factory=CqiSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def sections(self):
        return {"scenario": self.scenario, "cqi": self.cqi,
                "model": self.model, "train": self.train, "eval": self.eval}

    # -- derived module configs ------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_tx=self.scenario.n_tx,
            n_subcarriers=self.scenario.n_subcarriers,
            subcarriers_per_subband=self.cqi.subcarriers_per_subband,
            **asdict(self.model)).validate()

    def link_budget(self) -> LinkBudget:
        return LinkBudget(tx_power_dbm=self.cqi.tx_power_dbm,
                          noise_power_dbm=self.cqi.noise_power_dbm)

    def cqi_table(self) -> CqiTable:
        return CqiTable(thresholds_db=self.cqi.thresholds_db)

    def validate(self):
        try:
            self.scenario.validate()
            self.train.validate()
            self.model_config()
            self.cqi_table()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if len(self.cqi.thresholds_db) != 15:
            raise ConfigError("cqi.thresholds_db needs exactly 15 values")
        return self


def _coerce(section, key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            value = json.loads(raw)
            if not isinstance(value, list):
                raise ValueError("expected a JSON list")
            return [float(v) for v in value]
        return raw
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _apply(cfg: ExperimentConfig, section, key, raw):
    objs = cfg.sections()
    if section not in objs:
        raise ConfigError(f"unknown section [{section}]")
    obj = objs[section]
    valid = {f.name for f in fields(obj)}
    if key not in valid:
        raise ConfigError(f"unknown key [{section}] {key}")
    setattr(obj, key, _coerce(section, key, raw, getattr(obj, key)))


def parse_ini(text) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = ExperimentConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            _apply(cfg, section, key, raw)
    return cfg.validate()


def load(path=None, overrides=()):
    """Config from file (or env default, or built-ins) plus section.key=value
    overrides."""
    if path is None:
        path = os.environ.get(ENV_CONFIG_PATH)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as f:
            cfg = parse_ini(f.read())
    else:
        cfg = ExperimentConfig()
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        _apply(cfg, section.strip(), key.strip(), raw.strip())
    return cfg.validate()


def _render_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return json.dumps([float(v) for v in value])
    return str(value)


def to_ini(cfg: ExperimentConfig):
    lines = []
    for name, obj in cfg.sections().items():
        lines.append(f"[{name}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {_render_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)
