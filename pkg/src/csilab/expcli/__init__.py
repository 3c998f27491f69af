"""Experiment orchestration: config, seeded protocol runs, reports, and the CLI."""

from .config import (
    ExperimentConfig,
    apply_desk_preset,
    config_to_dict,
    desk_preset,
    full_preset,
    load_config,
)
from .seeds import SeedPlan, seed_plan
from .protocol import RunSummary, gen_data, run_protocol, sweep_compression
from .reporting import emit_plots, emit_tables, inspect_memory_text

__all__ = [
    "ExperimentConfig",
    "apply_desk_preset",
    "config_to_dict",
    "desk_preset",
    "full_preset",
    "load_config",
    "SeedPlan",
    "seed_plan",
    "RunSummary",
    "gen_data",
    "run_protocol",
    "sweep_compression",
    "emit_plots",
    "emit_tables",
    "inspect_memory_text",
]
