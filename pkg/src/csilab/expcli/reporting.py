"""Tables and figures assembled from run CSVs.

Every table is written twice — machine-readable CSV and aligned text — and
every plot dumps its exact point data as a CSV sibling, so figures are
regenerable without rerunning anything. Cells that are structurally absent
(evaluation of a scenario not yet encountered) render as a dash; a true
reconstruction failure renders as the −300 dB floor, never as a dash.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from statistics import median
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from ..errors import ConfigError

TABLE_SHAPES = ("nmse_by_k", "memory", "strategy_nmse")
PLOT_KINDS = ("gamma_sweep", "strategy_bars", "k_trend")

_MTL_NOTE = "mtl trains offline on the full corpus; no runtime store is held, reported as 0."


def read_rows(path: str | Path) -> List[Dict[str, object]]:
    """Parse a run CSV into typed row dicts."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing input CSV: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("gamma", "nmse_db", "wall_seconds"):
            if key in row:
                row[key] = float(row[key])
        for key in ("k", "seed", "step", "bytes"):
            if key in row:
                row[key] = int(row[key])
    return rows


def _scenario_order(rows: Sequence[Mapping]) -> List[str]:
    """Scenario sequence as written by the protocol (first-appearance order)."""
    order: List[str] = []
    for row in rows:
        for key in ("evaluated_on", "scenario"):
            sid = row.get(key)
            if sid is not None and sid not in order:
                order.append(sid)
    return order


def _strategy_order(rows: Sequence[Mapping]) -> List[str]:
    order: List[str] = []
    for row in rows:
        if row["strategy"] not in order:
            order.append(row["strategy"])
    return order


def _median_nmse(rows: Sequence[Mapping]) -> float:
    return median(r["nmse_db"] for r in rows)


def _fmt_mib(b: int) -> str:
    return f"{b / 2**20:.3f} MiB"


def _aligned(header: Sequence[str], body: Sequence[Sequence[str]], title: str, notes=()) -> str:
    rows = [list(header)] + [list(r) for r in body]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [title, ""]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(str(c).rjust(widths[i]) for i, c in enumerate(r)).rstrip())
    for note in notes:
        lines.extend(["", note])
    return "\n".join(lines) + "\n"


def _write_table(out_dir: Path, name: str, header, body, title, notes=()) -> Tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
    txt_path = out_dir / f"{name}.txt"
    txt_path.write_text(_aligned(header, body, title, notes))
    return csv_path, txt_path


# -- table shapes -----------------------------------------------------------------


def _table_nmse_by_k(rows: Sequence[Mapping], out_dir: Path) -> Tuple[Path, Path]:
    rows = [r for r in rows if r["strategy"] == "proposed"]
    if not rows:
        raise ConfigError("nmse_by_k table needs proposed-strategy records")
    gamma = max(r["gamma"] for r in rows)
    rows = [r for r in rows if r["gamma"] == gamma]
    scenarios = _scenario_order(rows)
    ks = sorted({r["k"] for r in rows})
    body = []
    for k in ks:
        for ti, trained in enumerate(scenarios):
            cells = []
            for ei, sid in enumerate(scenarios):
                hit = [
                    r
                    for r in rows
                    if r["k"] == k and r["trained_up_to"] == trained and r["evaluated_on"] == sid
                ]
                cells.append(f"{_median_nmse(hit):.2f}" if hit else "-")
            if all(c == "-" for c in cells):
                continue
            body.append([str(k), trained] + cells)
    header = ["k", "trained_up_to"] + scenarios
    title = f"NMSE (dB) by replay size, proposed strategy, gamma={gamma:g} (median over seeds)"
    return _write_table(out_dir, "nmse_by_k", header, body, title)


def _table_memory(rows: Sequence[Mapping], out_dir: Path) -> Tuple[Path, Path]:
    if not rows:
        raise ConfigError("memory table needs memory records")
    body = []
    notes = []
    for strat in _strategy_order(rows):
        mine = [r for r in rows if r["strategy"] == strat]
        final = max(r["step"] for r in mine)
        candidates = sorted(
            (r for r in mine if r["step"] == final),
            key=lambda r: (-r["k"], r["seed"], -r["gamma"]),
        )
        b = candidates[0]["bytes"]
        body.append([strat, str(b), _fmt_mib(b)])
        if strat == "mtl":
            notes.append(_MTL_NOTE)
    header = ["strategy", "bytes", "mib"]
    title = "Memory held entering the final scenario (4 bytes per stored element)"
    return _write_table(out_dir, "memory", header, body, title, notes)


def _table_strategy_nmse(rows: Sequence[Mapping], out_dir: Path) -> Tuple[Path, Path]:
    if not rows:
        raise ConfigError("strategy_nmse table needs result records")
    scenarios = _scenario_order(rows)
    last = scenarios[-1]
    final = [r for r in rows if r["trained_up_to"] == last]
    body = []
    for strat in _strategy_order(rows):
        mine = [r for r in final if r["strategy"] == strat]
        if not mine:
            continue
        k = max(r["k"] for r in mine)
        mine = [r for r in mine if r["k"] == k]
        gamma = max(r["gamma"] for r in mine)
        mine = [r for r in mine if r["gamma"] == gamma]
        cells = []
        for sid in scenarios:
            hit = [r for r in mine if r["evaluated_on"] == sid]
            cells.append(f"{_median_nmse(hit):.2f}" if hit else "-")
        body.append([strat] + cells)
    header = ["strategy"] + scenarios
    title = "NMSE (dB) after the full scenario sequence (median over seeds)"
    return _write_table(out_dir, "strategy_nmse", header, body, title)


def emit_tables(rows: Sequence[Mapping], shape: str, out_dir: str | Path) -> Tuple[Path, Path]:
    """Write one table as CSV + aligned text; returns both paths.

    `rows` come from read_rows on results.csv (nmse_by_k, strategy_nmse) or
    memory.csv (memory).
    """
    out_dir = Path(out_dir)
    if shape == "nmse_by_k":
        return _table_nmse_by_k(rows, out_dir)
    if shape == "memory":
        return _table_memory(rows, out_dir)
    if shape == "strategy_nmse":
        return _table_strategy_nmse(rows, out_dir)
    raise ConfigError(f"unknown table shape {shape!r}; available: {list(TABLE_SHAPES)}")


# -- plots --------------------------------------------------------------------------


def _plot_csv(out_dir: Path, name: str, header, body) -> Path:
    path = out_dir / f"{name}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
    return path


def _ratio_label(gamma: float) -> str:
    inv = 1.0 / gamma
    return f"1/{inv:.0f}" if abs(inv - round(inv)) < 1e-9 else f"{gamma:g}"


def _plot_gamma_sweep(rows, out_dir: Path) -> Tuple[Path, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    strategies = _strategy_order(rows)
    scenarios = _scenario_order(rows)
    gammas = sorted({r["gamma"] for r in rows})
    missing = []
    points = {}
    for strat in strategies:
        for sid in scenarios:
            for g in gammas:
                hit = [
                    r
                    for r in rows
                    if r["strategy"] == strat and r["evaluated_on"] == sid and r["gamma"] == g
                ]
                if hit:
                    points[(strat, sid, g)] = _median_nmse(hit)
                else:
                    missing.append((strat, sid, g))
    if missing:
        raise ConfigError(f"gamma_sweep is missing combinations: {missing}")

    fig, ax = plt.subplots(figsize=(7, 5))
    for strat in strategies:
        for sid in scenarios:
            ys = [points[(strat, sid, g)] for g in gammas]
            ax.plot(range(len(gammas)), ys, marker="o", label=f"{strat} on {sid}")
    ax.set_xticks(range(len(gammas)))
    ax.set_xticklabels([_ratio_label(g) for g in gammas])
    ax.set_xlabel("compression ratio")
    ax.set_ylabel("NMSE (dB)")
    ax.set_title("Reconstruction vs compression ratio after the full sequence")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    png = out_dir / "gamma_sweep.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    body = [
        [strat, sid, repr(float(g)), repr(points[(strat, sid, g)])]
        for strat in strategies
        for sid in scenarios
        for g in gammas
    ]
    return png, _plot_csv(out_dir, "gamma_sweep_points", ("strategy", "evaluated_on", "gamma", "nmse_db"), body)


def _plot_strategy_bars(rows, out_dir: Path) -> Tuple[Path, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scenarios = _scenario_order(rows)
    last = scenarios[-1]
    final = [r for r in rows if r["trained_up_to"] == last]
    strategies = _strategy_order(final)
    if not strategies:
        raise ConfigError("strategy_bars needs records at the final scenario")
    values = {}
    missing = []
    for strat in strategies:
        mine = [r for r in final if r["strategy"] == strat]
        k = max(r["k"] for r in mine)
        for sid in scenarios:
            hit = [r for r in mine if r["evaluated_on"] == sid and r["k"] == k]
            if hit:
                values[(strat, sid)] = _median_nmse(hit)
            else:
                missing.append((strat, sid))
    if missing:
        raise ConfigError(f"strategy_bars is missing combinations: {missing}")

    fig, ax = plt.subplots(figsize=(7, 5))
    width = 0.8 / len(strategies)
    for i, strat in enumerate(strategies):
        xs = [j + i * width for j in range(len(scenarios))]
        ax.bar(xs, [values[(strat, sid)] for sid in scenarios], width=width, label=strat)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(scenarios))])
    ax.set_xticklabels(scenarios)
    ax.set_xlabel("evaluated scenario")
    ax.set_ylabel("NMSE (dB)")
    ax.set_title("Strategies after the full scenario sequence")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    png = out_dir / "strategy_bars.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    body = [[s, sid, repr(values[(s, sid)])] for s in strategies for sid in scenarios]
    return png, _plot_csv(out_dir, "strategy_bars_points", ("strategy", "evaluated_on", "nmse_db"), body)


def _plot_k_trend(rows, out_dir: Path) -> Tuple[Path, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [r for r in rows if r["strategy"] == "proposed"]
    if not rows:
        raise ConfigError("k_trend needs proposed-strategy records")
    scenarios = _scenario_order(rows)
    first, last = scenarios[0], scenarios[-1]
    ks = sorted({r["k"] for r in rows})
    points = []
    missing = []
    for k in ks:
        hit = [
            r
            for r in rows
            if r["k"] == k and r["trained_up_to"] == last and r["evaluated_on"] == first
        ]
        if hit:
            points.append((k, _median_nmse(hit)))
        else:
            missing.append((first, last, k))
    if missing:
        raise ConfigError(f"k_trend is missing (evaluated, trained, k) combinations: {missing}")

    fig, ax = plt.subplots(figsize=(7, 5))
    ax.plot([p[0] for p in points], [p[1] for p in points], marker="o")
    ax.set_xlabel("replay samples per stored generator (K)")
    ax.set_ylabel(f"NMSE on {first} after {last} (dB)")
    ax.set_title("Replay size vs retention of the first scenario")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    png = out_dir / "k_trend.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    body = [[str(k), repr(v)] for k, v in points]
    return png, _plot_csv(out_dir, "k_trend_points", ("k", "nmse_db"), body)


def emit_plots(rows: Sequence[Mapping], kind: str, out_dir: str | Path) -> Tuple[Path, Path]:
    """Write one figure (PNG) plus the CSV of its plotted points."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise ConfigError(f"{kind} plot needs records")
    if kind == "gamma_sweep":
        return _plot_gamma_sweep(rows, out_dir)
    if kind == "strategy_bars":
        return _plot_strategy_bars(rows, out_dir)
    if kind == "k_trend":
        return _plot_k_trend(rows, out_dir)
    raise ConfigError(f"unknown plot kind {kind!r}; available: {list(PLOT_KINDS)}")


# -- memory inspection ----------------------------------------------------------------


def inspect_memory_text(run_dir: str | Path) -> str:
    """Human-readable account of what each strategy's memory held, per step,
    plus the stored-generator inventory on disk."""
    run_dir = Path(run_dir)
    rows = read_rows(run_dir / "memory.csv")
    parts: List[str] = []

    seen = set()
    prog_body = []
    for r in rows:
        key = (r["strategy"], r["step"], r["scenario"], r["bytes"])
        if key in seen:  # identical across seeds/gammas/k by construction
            continue
        seen.add(key)
        prog_body.append([r["strategy"], str(r["step"]), r["scenario"], str(r["bytes"]), _fmt_mib(r["bytes"])])
    parts.append(
        _aligned(
            ["strategy", "step", "entering", "bytes", "size"],
            prog_body,
            "Memory held entering each continual step",
            [_MTL_NOTE],
        )
    )

    snap_dir = run_dir / "snapshots"
    inv_body = []
    for path in sorted(snap_dir.glob("*.csip")):
        meta = json.loads(Path(str(path) + ".json").read_text())
        inv_body.append(
            [
                path.name,
                meta["scenario_id"],
                str(meta["param_count"]),
                str(meta["byte_size"]),
                _fmt_mib(meta["byte_size"]),
            ]
        )
    if inv_body:
        parts.append(
            _aligned(
                ["file", "scenario", "params", "bytes", "size"],
                inv_body,
                "Stored generator snapshots",
            )
        )
    return "\n".join(parts)
