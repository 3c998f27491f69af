"""Command-line entry points.

Exit codes: 0 success, 2 configuration/input problems, 3 resumable partial
run detected, 4 numeric divergence during training.
"""

from __future__ import annotations

import functools
import sys
from dataclasses import replace
from pathlib import Path

import click

from ..errors import ConfigError, CsilabError, DivergenceError, NonFiniteLossError, PartialRunError
from .config import apply_desk_preset, load_config
from .protocol import MEMORY_CSV, RESULTS_CSV, SWEEP_CSV, gen_data, run_protocol, sweep_compression
from .reporting import PLOT_KINDS, TABLE_SHAPES, emit_plots, emit_tables, inspect_memory_text, read_rows


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PartialRunError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except (DivergenceError, NonFiniteLossError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(4)
        except CsilabError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
def main():
    """Continual-learning laboratory for compressed CSI feedback."""


@main.command("gen-data")
@click.option("--config", "config_path", required=True, type=click.Path(), help="JSON or TOML experiment config.")
@click.option("--scenario", "scenario_id", default=None, help="Only this scenario id.")
@_guard
def gen_data_cmd(config_path, scenario_id):
    """Pre-generate the datasets a run would create."""
    cfg = load_config(config_path)
    paths = gen_data(cfg, scenario_id)
    for p in paths:
        click.echo(str(p))
    click.echo(f"{len(paths)} dataset file(s) ready under {Path(cfg.out_dir) / 'datasets'}")


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(), help="JSON or TOML experiment config.")
@click.option("--strategy", "strategies", multiple=True, help="Restrict to these strategies (repeatable).")
@click.option("--desk-scale", is_flag=True, help="Apply the laptop-sized preset on top of the config.")
@click.option("--force", is_flag=True, help="Clear a previous run in the output directory first.")
@click.option("--resume", is_flag=True, help="Continue a partial run, keeping finished cells.")
@_guard
def run_cmd(config_path, strategies, desk_scale, force, resume):
    """Run the sequential-scenario protocol over the configured grid."""
    cfg = load_config(config_path)
    if desk_scale:
        cfg = apply_desk_preset(cfg)
    if strategies:
        cfg = replace(cfg, strategies=tuple(strategies))
    summary = run_protocol(cfg, force=force, resume=resume)
    for line in summary.lines():
        click.echo(line)


@main.command("sweep-gamma")
@click.option("--config", "config_path", required=True, type=click.Path(), help="JSON or TOML experiment config.")
@click.option("--gamma", "gammas", multiple=True, help="Compression ratios (e.g. 1/32); default is the stock grid.")
@click.option("--desk-scale", is_flag=True, help="Apply the laptop-sized preset on top of the config.")
@click.option("--force", is_flag=True, help="Clear a previous sweep in the output directory first.")
@click.option("--resume", is_flag=True, help="Continue a partial sweep, keeping finished cells.")
@_guard
def sweep_gamma_cmd(config_path, gammas, desk_scale, force, resume):
    """Sweep compression ratios after the full scenario sequence."""
    from .config import _parse_ratio

    cfg = load_config(config_path)
    if desk_scale:
        cfg = apply_desk_preset(cfg)
    parsed = tuple(_parse_ratio(g) for g in gammas) if gammas else None
    summary = sweep_compression(cfg, gammas=parsed, force=force, resume=resume)
    for line in summary.lines():
        click.echo(line)


@main.command("report")
@click.option("--in", "in_dir", required=True, type=click.Path(), help="Run output directory.")
@click.option("--tables", "tables", is_flag=True, help="Emit tables (CSV + aligned text).")
@click.option("--plots", "plots", is_flag=True, help="Emit figures (PNG + point CSVs).")
@_guard
def report_cmd(in_dir, tables, plots):
    """Assemble tables and figures from a finished run directory."""
    in_dir = Path(in_dir)
    if not tables and not plots:
        tables = plots = True
    results_path = in_dir / RESULTS_CSV
    memory_path = in_dir / MEMORY_CSV
    sweep_path = in_dir / SWEEP_CSV

    emitted, skipped = [], []

    def attempt(kind, fn, *args):
        try:
            emitted.extend(fn(*args))
        except ConfigError as exc:
            skipped.append((kind, str(exc)))

    if tables:
        if results_path.exists():
            rows = read_rows(results_path)
            attempt("nmse_by_k", emit_tables, rows, "nmse_by_k", in_dir / "tables")
            attempt("strategy_nmse", emit_tables, rows, "strategy_nmse", in_dir / "tables")
        else:
            skipped.append(("nmse_by_k", f"no {RESULTS_CSV} in {in_dir}"))
            skipped.append(("strategy_nmse", f"no {RESULTS_CSV} in {in_dir}"))
        if memory_path.exists():
            attempt("memory", emit_tables, read_rows(memory_path), "memory", in_dir / "tables")
        else:
            skipped.append(("memory", f"no {MEMORY_CSV} in {in_dir}"))
    if plots:
        if results_path.exists():
            rows = read_rows(results_path)
            attempt("strategy_bars", emit_plots, rows, "strategy_bars", in_dir / "plots")
            attempt("k_trend", emit_plots, rows, "k_trend", in_dir / "plots")
        else:
            skipped.append(("strategy_bars", f"no {RESULTS_CSV} in {in_dir}"))
            skipped.append(("k_trend", f"no {RESULTS_CSV} in {in_dir}"))
        if sweep_path.exists():
            attempt("gamma_sweep", emit_plots, read_rows(sweep_path), "gamma_sweep", in_dir / "plots")
        else:
            skipped.append(("gamma_sweep", f"no {SWEEP_CSV} in {in_dir} (run sweep-gamma first)"))

    for path in emitted:
        click.echo(str(path))
    for kind, reason in skipped:
        click.echo(f"skipped {kind}: {reason}", err=True)
    if not emitted:
        raise ConfigError(f"nothing to report in {in_dir}")


@main.command("inspect-memory")
@click.option("--in", "in_dir", required=True, type=click.Path(), help="Run output directory.")
@_guard
def inspect_memory_cmd(in_dir):
    """Show what each strategy's memory held and the stored generators on disk."""
    click.echo(inspect_memory_text(in_dir))


if __name__ == "__main__":  # pragma: no cover
    main()
