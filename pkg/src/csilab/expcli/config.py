"""Experiment configuration: presets, file loading, and validation.

A config names the scenario sequence, the strategies to compare, the
compression ratios and replay sizes to grid over, the per-run training
settings, and the output directory. Files are JSON or TOML with the same
field names; the CSILAB_SEED environment variable overrides the master seed.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version dependent
    import tomli as tomllib

from ..channelgen import ScenarioSpec, default_scenarios
from ..ctgan import (
    DESK_DISCRIMINATOR_WIDTHS,
    DESK_GENERATOR_WIDTHS,
    FULL_DISCRIMINATOR_WIDTHS,
    FULL_GENERATOR_BUDGET,
    FULL_GENERATOR_WIDTHS,
    DiscriminatorConfig,
    GanTrainConfig,
    GeneratorConfig,
)
from ..errors import ConfigError
from ..feedbacknet import TrainConfig, codeword_length
from ..memory import Strategy

SEED_ENV_VAR = "CSILAB_SEED"

DEFAULT_GAMMAS = (1 / 16, 1 / 32, 1 / 64, 1 / 128)
FULL_K_LIST = (1000, 2000, 5000, 10000)
DESK_K_LIST = (250, 500, 1000, 2000)

ALL_STRATEGIES = tuple(s.value for s in Strategy)


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: Tuple[ScenarioSpec, ...]
    strategies: Tuple[str, ...] = ALL_STRATEGIES
    gammas: Tuple[float, ...] = DEFAULT_GAMMAS
    k_list: Tuple[int, ...] = FULL_K_LIST
    n_train: int = 5000
    n_test: int = 1000
    train: TrainConfig = field(default_factory=TrainConfig)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    generator: GeneratorConfig = field(
        default_factory=lambda: GeneratorConfig(
            widths=FULL_GENERATOR_WIDTHS, budget=FULL_GENERATOR_BUDGET
        )
    )
    discriminator: DiscriminatorConfig = field(
        default_factory=lambda: DiscriminatorConfig(widths=FULL_DISCRIMINATOR_WIDTHS)
    )
    capacity: int = 2000  # raw-sample budget for reservoir / minmax
    out_dir: str = "runs/exp"
    master_seed: int = 0
    n_seeds: int = 1
    train_final_gan: bool = True  # model the last scenario too (never replayed)
    arch: str = "csinet_like"

    def __post_init__(self):
        ids = [s.scenario_id for s in self.scenarios]
        if not ids:
            raise ConfigError("at least one scenario is required")
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate scenario ids: {ids}")
        unknown = [s for s in self.strategies if s not in ALL_STRATEGIES]
        if unknown:
            raise ConfigError(f"unknown strategies {unknown}; available: {list(ALL_STRATEGIES)}")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        for g in self.gammas:
            codeword_length(g, self.scenarios[0].n_tx, self.scenarios[0].n_sub)
        if any(k < 0 for k in self.k_list) or not self.k_list:
            raise ConfigError(f"k_list must be nonempty with entries >= 0, got {self.k_list}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")
        if self.capacity < 0:
            raise ConfigError("capacity must be >= 0")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if len({(s.n_tx, s.n_sub) for s in self.scenarios}) != 1:
            raise ConfigError("all scenarios must share the same array geometry")

    @property
    def n_tx(self) -> int:
        return self.scenarios[0].n_tx

    @property
    def n_sub(self) -> int:
        return self.scenarios[0].n_sub

    def scenario_ids(self) -> Tuple[str, ...]:
        return tuple(s.scenario_id for s in self.scenarios)


def full_preset(out_dir: str = "runs/full", master_seed: int = 0) -> ExperimentConfig:
    """Settings matching the reference evaluation: 5000/1000, 300 epochs, K up to 10k."""
    return ExperimentConfig(
        scenarios=default_scenarios(), out_dir=out_dir, master_seed=master_seed
    )


def desk_preset(out_dir: str = "runs/desk", master_seed: int = 0) -> ExperimentConfig:
    """Laptop-sized settings: same losses and protocol, shrunk counts and epochs."""
    return apply_desk_preset(
        ExperimentConfig(scenarios=default_scenarios(), out_dir=out_dir, master_seed=master_seed)
    )


def apply_desk_preset(cfg: ExperimentConfig) -> ExperimentConfig:
    """Override the scale-related fields of `cfg` with the desk-sized values.

    Loss definitions, architectures, and the scenario sequence are untouched;
    only counts, epochs, widths, and grid breadth shrink. The protocol grid
    keeps a single compression ratio — the ratio sweep has its own command.
    """
    return replace(
        cfg,
        gammas=(1 / 16,),
        k_list=DESK_K_LIST,
        n_train=500,
        n_test=100,
        train=replace(cfg.train, epochs=50, batch_size=50),
        # the generator trains longer than the feedback net: replayed samples
        # stand in for an entire scenario, and a 50-epoch generator on 500
        # samples is still visibly improving (its EM estimate has not
        # plateaued), which shows up as noise in the replay-size trend
        gan=replace(cfg.gan, epochs=250, batch_size=50),
        generator=replace(cfg.generator, widths=DESK_GENERATOR_WIDTHS, budget=None),
        discriminator=replace(cfg.discriminator, widths=DESK_DISCRIMINATOR_WIDTHS),
        capacity=400,
        n_seeds=3,
        train_final_gan=False,
    )


# -- file loading ---------------------------------------------------------------


def _parse_ratio(x: Any) -> float:
    """Accept 0.0625 or the string form "1/16"."""
    if isinstance(x, str):
        num, sep, den = x.partition("/")
        try:
            return float(num) / float(den) if sep else float(num)
        except ValueError as exc:
            raise ConfigError(f"bad compression ratio {x!r}") from exc
    if isinstance(x, (int, float)):
        return float(x)
    raise ConfigError(f"bad compression ratio {x!r}")


def _scenario_from_dict(d: Dict[str, Any]) -> ScenarioSpec:
    d = dict(d)
    sid = d.pop("scenario_id", None) or d.pop("id", None)
    if not sid:
        raise ConfigError(f"scenario entry missing 'scenario_id': {d}")
    if "sector_deg" in d and "sector_rad" in d:
        raise ConfigError(f"scenario {sid!r}: give sector_deg or sector_rad, not both")
    if "sector_deg" in d:
        lo, hi = d.pop("sector_deg")
        sector = (math.radians(float(lo)), math.radians(float(hi)))
    elif "sector_rad" in d:
        lo, hi = d.pop("sector_rad")
        sector = (float(lo), float(hi))
    else:
        raise ConfigError(f"scenario {sid!r} missing 'sector_deg' (or 'sector_rad')")
    allowed = {f.name for f in dataclasses.fields(ScenarioSpec)} - {"scenario_id", "sector"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"scenario {sid!r}: unknown fields {sorted(unknown)}")
    return ScenarioSpec(scenario_id=str(sid), sector=sector, **d)


def _sub_config(cls, d: Dict[str, Any], label: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{label}: unknown fields {sorted(unknown)}")
    tupled = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return cls(**tupled)


_TOP_LEVEL_KEYS = {
    "preset",
    "scenarios",
    "strategies",
    "gammas",
    "k_list",
    "n_train",
    "n_test",
    "train",
    "gan",
    "generator",
    "discriminator",
    "capacity",
    "out_dir",
    "master_seed",
    "n_seeds",
    "train_final_gan",
    "arch",
}


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    preset = raw.get("preset", "full")
    if preset not in ("full", "desk"):
        raise ConfigError(f"unknown preset {preset!r}; use 'full' or 'desk'")
    cfg = full_preset()
    if preset == "desk":
        cfg = apply_desk_preset(cfg)

    updates: Dict[str, Any] = {}
    if "scenarios" in raw:
        updates["scenarios"] = tuple(_scenario_from_dict(s) for s in raw["scenarios"])
    if "strategies" in raw:
        updates["strategies"] = tuple(str(s) for s in raw["strategies"])
    if "gammas" in raw:
        updates["gammas"] = tuple(_parse_ratio(g) for g in raw["gammas"])
    if "k_list" in raw:
        updates["k_list"] = tuple(int(k) for k in raw["k_list"])
    for key in ("n_train", "n_test", "capacity", "master_seed", "n_seeds"):
        if key in raw:
            updates[key] = int(raw[key])
    if "train_final_gan" in raw:
        updates["train_final_gan"] = bool(raw["train_final_gan"])
    for key in ("out_dir", "arch"):
        if key in raw:
            updates[key] = str(raw[key])
    if "train" in raw:
        updates["train"] = _sub_config(TrainConfig, dict(raw["train"]), "train")
    if "gan" in raw:
        updates["gan"] = _sub_config(GanTrainConfig, dict(raw["gan"]), "gan")
    if "generator" in raw:
        updates["generator"] = _sub_config(GeneratorConfig, dict(raw["generator"]), "generator")
    if "discriminator" in raw:
        updates["discriminator"] = _sub_config(
            DiscriminatorConfig, dict(raw["discriminator"]), "discriminator"
        )
    try:
        cfg = replace(cfg, **updates)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path, env: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """Read a JSON or TOML config file; CSILAB_SEED in `env` overrides master_seed."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".toml":
            raw = tomllib.loads(path.read_text())
        elif path.suffix.lower() == ".json":
            raw = json.loads(path.read_text())
        else:
            raise ConfigError(f"config must be .json or .toml, got {path.suffix!r}")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a table/object, got {type(raw).__name__}")
    cfg = config_from_dict(raw)
    env = env if env is not None else dict(os.environ)
    if SEED_ENV_VAR in env:
        try:
            cfg = replace(cfg, master_seed=int(env[SEED_ENV_VAR]))
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env[SEED_ENV_VAR]!r}") from exc
    return cfg


# -- manifest serialization -------------------------------------------------------


def _scenario_to_dict(s: ScenarioSpec) -> Dict[str, Any]:
    d = dataclasses.asdict(s)
    d["sector_rad"] = list(d.pop("sector"))
    return d


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Round-trippable plain-dict form (used in run manifests)."""
    return {
        "scenarios": [_scenario_to_dict(s) for s in cfg.scenarios],
        "strategies": list(cfg.strategies),
        "gammas": list(cfg.gammas),
        "k_list": list(cfg.k_list),
        "n_train": cfg.n_train,
        "n_test": cfg.n_test,
        "train": dataclasses.asdict(cfg.train),
        "gan": dataclasses.asdict(cfg.gan),
        "generator": {
            **dataclasses.asdict(cfg.generator),
            "widths": list(cfg.generator.widths),
        },
        "discriminator": {
            **dataclasses.asdict(cfg.discriminator),
            "widths": list(cfg.discriminator.widths),
        },
        "capacity": cfg.capacity,
        "out_dir": cfg.out_dir,
        "master_seed": cfg.master_seed,
        "n_seeds": cfg.n_seeds,
        "train_final_gan": cfg.train_final_gan,
        "arch": cfg.arch,
    }
