"""The seeded experiment protocol: sequential scenario runs over a strategy grid.

A run owns an output directory:

    out/
      manifest.json        grid, config echo, completion status (deterministic)
      datasets/            one CSID file per (replicate, scenario)
      snapshots/           stored generators, one per (replicate, scenario)
      curves/              GAN training curves and feedback loss curves (CSV)
      cells/               per-cell result JSON (unit of resumability)
      results.csv          strategy,trained_up_to,evaluated_on,gamma,k,nmse_db,seed
      memory.csv           bytes held entering each step
      timing.csv           wall-clock per record (excluded from determinism checks)
      sweep/…, gamma_sweep.csv   written by the compression-ratio sweep

Everything except timing is byte-deterministic under a fixed master seed. A
directory with a manifest but missing cells is a partial run: it raises a
resumable error unless forced (wipe) or resumed (skip completed cells).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import shutil
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from ..channelgen import ScenarioDataset, generate_dataset, load_dataset, save_dataset
from ..ctgan import (
    GeneratorSnapshot,
    load_snapshot,
    save_gan_curves,
    save_snapshot,
    snapshot_generator,
    train_gan,
)
from ..errors import ConfigError, PartialRunError
from ..feedbacknet import build_feedback_model
from ..memory import (
    ContinualRunState,
    Strategy,
    StrategyConfig,
    continual_step,
    mtl_run,
)
from .config import DEFAULT_GAMMAS, ExperimentConfig, config_to_dict
from .seeds import SeedPlan, seed_plan

MANIFEST_NAME = "manifest.json"
RESULTS_CSV = "results.csv"
MEMORY_CSV = "memory.csv"
TIMING_CSV = "timing.csv"
SWEEP_CSV = "gamma_sweep.csv"

RESULT_FIELDS = ("strategy", "trained_up_to", "evaluated_on", "gamma", "k", "nmse_db", "seed")
MEMORY_FIELDS = ("strategy", "gamma", "k", "seed", "step", "scenario", "bytes")
TIMING_FIELDS = RESULT_FIELDS[:-2] + ("seed", "wall_seconds")

SWEEP_STRATEGIES = ("proposed", "direct_transfer", "mtl")

_RUN_ENTRIES = {
    MANIFEST_NAME,
    RESULTS_CSV,
    MEMORY_CSV,
    TIMING_CSV,
    SWEEP_CSV,
    "datasets",
    "snapshots",
    "curves",
    "cells",
    "sweep",
    "tables",
    "plots",
}


@dataclass(frozen=True)
class Cell:
    replicate: int
    strategy: str
    gamma: float
    k: int

    @property
    def tag(self) -> str:
        g = repr(float(self.gamma)).replace(".", "p")
        return f"r{self.replicate}_{self.strategy}_g{g}_k{self.k}"


@dataclass(frozen=True)
class RunSummary:
    out_dir: str
    status: str
    cells_total: int
    cells_run: int
    cells_skipped: int
    n_records: int
    wall_seconds: float

    def lines(self) -> List[str]:
        return [
            f"status: {self.status}",
            f"out_dir: {self.out_dir}",
            f"cells: {self.cells_run} run, {self.cells_skipped} reused, {self.cells_total} total",
            f"records: {self.n_records}",
            f"wall: {self.wall_seconds:.1f}s",
        ]


def protocol_grid(cfg: ExperimentConfig) -> List[Cell]:
    """Deterministic cell order: replicate, then strategy as configured, γ, K.

    Replay size only parameterizes the proposed strategy; every other strategy
    runs a single cell per (replicate, γ) with K recorded as 0.
    """
    cells = []
    for r in range(cfg.n_seeds):
        for strat in cfg.strategies:
            for gamma in cfg.gammas:
                ks: Iterable[int] = cfg.k_list if strat == Strategy.PROPOSED.value else (0,)
                for k in ks:
                    cells.append(Cell(r, strat, float(gamma), int(k)))
    return cells


def sweep_grid(cfg: ExperimentConfig, gammas: Sequence[float]) -> List[Cell]:
    k = max(cfg.k_list)
    cells = []
    for r in range(cfg.n_seeds):
        for strat in SWEEP_STRATEGIES:
            for gamma in gammas:
                cells.append(Cell(r, strat, float(gamma), k if strat == "proposed" else 0))
    return cells


# -- directory state ------------------------------------------------------------


def _read_manifest(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: corrupt manifest: {exc}") from exc


def _write_manifest(path: Path, man: dict) -> None:
    path.write_text(json.dumps(man, indent=2, sort_keys=True))


def _assert_ours(out: Path, known: set) -> None:
    foreign = sorted(p.name for p in out.iterdir() if p.name not in known)
    if foreign:
        raise ConfigError(
            f"{out} contains entries not produced by this tool ({foreign[:5]}…); "
            f"refusing to touch it — choose a different out_dir"
            if len(foreign) > 5
            else f"{out} contains entries not produced by this tool ({foreign}); "
            f"refusing to touch it — choose a different out_dir"
        )


def _prepare_dir(
    out: Path,
    kind: str,
    man_body: dict,
    grid_tags: List[str],
    force: bool,
    resume: bool,
    known_entries: set,
) -> Tuple[Optional[dict], set]:
    """Returns (manifest, completed-tags) or (None, ∅) when already complete."""
    man_path = out / MANIFEST_NAME
    if man_path.exists():
        man = _read_manifest(man_path)
        if man.get("kind") != kind:
            raise ConfigError(f"{out} holds a {man.get('kind')!r} manifest, expected {kind!r}")
        same_cfg = man.get("body") == man_body and man.get("grid") == grid_tags
        if man.get("status") == "complete" and not force:
            if not same_cfg:
                raise ConfigError(
                    f"{out} holds a completed run with a different configuration; "
                    f"use a new out_dir or --force"
                )
            return None, set(grid_tags)
        if man.get("status") != "complete" and not (force or resume):
            done = man.get("completed", [])
            raise PartialRunError(
                f"{out} holds a partial run ({len(done)}/{len(man.get('grid', []))} cells "
                f"complete); re-run with --force to restart, or resume it"
            )
        if force:
            _assert_ours(out, known_entries)
            shutil.rmtree(out)
        elif resume:
            if not same_cfg:
                raise ConfigError(f"{out}: configuration changed since the partial run")
            completed = {t for t in man.get("completed", []) if (out / "cells" / f"{t}.json").exists()}
            man["status"] = "running"
            return man, completed
    elif out.exists() and any(out.iterdir()):
        _assert_ours(out, known_entries)  # pre-seeded datasets etc. are fine

    out.mkdir(parents=True, exist_ok=True)
    man = {
        "format_version": 1,
        "kind": kind,
        "status": "running",
        "body": man_body,
        "grid": grid_tags,
        "completed": [],
    }
    _write_manifest(out / MANIFEST_NAME, man)
    return man, set()


# -- per-replicate resources -----------------------------------------------------


def _ensure_datasets(
    base: Path, plan: SeedPlan, cfg: ExperimentConfig, replicate: int
) -> Tuple[List[ScenarioDataset], Dict[str, object]]:
    ds_dir = base / "datasets"
    ds_dir.mkdir(parents=True, exist_ok=True)
    datasets = []
    for spec in cfg.scenarios:
        sid = spec.scenario_id
        path = ds_dir / f"r{replicate}_{sid}.csid"
        if path.exists():
            ds = load_dataset(path)
            if ds.n_train != cfg.n_train or ds.n_test != cfg.n_test:
                raise ConfigError(
                    f"{path}: holds {ds.n_train}/{ds.n_test} samples but the config asks "
                    f"for {cfg.n_train}/{cfg.n_test}; clear the directory or change out_dir"
                )
        else:
            seeded = replace(spec, seed=plan.data_seed(replicate, sid))
            ds = generate_dataset(seeded, cfg.n_train, cfg.n_test)
            save_dataset(ds, path)
        datasets.append(ds)
    eval_sets = {ds.spec.scenario_id: ds.test for ds in datasets}
    return datasets, eval_sets


def _make_gan_provider(
    base: Path, plan: SeedPlan, cfg: ExperimentConfig, replicate: int
) -> Callable:
    """Stored-generator factory with disk caching.

    Generator snapshots depend only on (master seed, replicate, scenario) —
    not on γ, K, or the strategy asking — so the first cell that needs one
    trains it and every later cell reuses the identical bytes.
    """
    snap_dir = base / "snapshots"
    curve_dir = base / "curves"
    cache: Dict[str, GeneratorSnapshot] = {}

    def provider(samples, scenario_id: str) -> GeneratorSnapshot:
        if scenario_id in cache:
            return cache[scenario_id]
        path = snap_dir / f"r{replicate}_{scenario_id}.csip"
        if path.exists():
            snap = load_snapshot(path)
        else:
            snap_dir.mkdir(parents=True, exist_ok=True)
            curve_dir.mkdir(parents=True, exist_ok=True)
            g_net, _, curves = train_gan(
                samples,
                cfg.generator,
                cfg.discriminator,
                cfg.gan,
                plan.gan_rng(replicate, scenario_id),
            )
            snap = snapshot_generator(g_net, scenario_id, cfg.generator, cfg.n_tx, cfg.n_sub)
            save_snapshot(snap, path)
            save_gan_curves(curves, curve_dir / f"gan_r{replicate}_{scenario_id}.csv")
        cache[scenario_id] = snap
        return snap

    return provider


# -- cell execution ---------------------------------------------------------------


def _run_cell(
    cfg: ExperimentConfig,
    plan: SeedPlan,
    cell: Cell,
    datasets: List[ScenarioDataset],
    eval_sets: Dict[str, object],
    provider: Callable,
) -> dict:
    rng = plan.cell_rng(cell.replicate, cell.strategy, cell.gamma, cell.k)
    model = build_feedback_model(
        cell.gamma, cfg.n_tx, cfg.n_sub, cfg.arch, rng.substream("model")
    )
    t0 = time.monotonic()
    histories: List[Tuple[str, Tuple[float, ...]]] = []
    if cell.strategy == Strategy.MTL.value:
        records = mtl_run(
            model,
            datasets,
            cfg.train,
            rng,
            eval_sets,
            seed_label=cell.replicate,
            history_out=histories,
        )
        memory_log = [(ds.spec.scenario_id, 0) for ds in datasets]
    else:
        strat = StrategyConfig(
            Strategy(cell.strategy), replay_k=cell.k, capacity=cfg.capacity
        )
        state = ContinualRunState.fresh(model, strat, seed_label=cell.replicate)
        last = len(datasets) - 1
        for i, ds in enumerate(datasets):
            store = i < last or cfg.train_final_gan
            continual_step(
                state, ds, cfg.train, rng, eval_sets, provider, store_snapshot=store
            )
        records, memory_log, histories = state.records, state.memory_log, state.histories
    wall = time.monotonic() - t0
    return {
        "cell": dataclasses.asdict(cell),
        "records": [dataclasses.asdict(r) for r in records],
        "memory_log": [[sid, b] for sid, b in memory_log],
        "histories": [[sid, list(h)] for sid, h in histories],
        "wall_seconds": wall,
    }


def _save_cell(out: Path, cell: Cell, payload: dict) -> None:
    cell_dir = out / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    (cell_dir / f"{cell.tag}.json").write_text(json.dumps(payload, sort_keys=True))
    curve_dir = out / "curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    with open(curve_dir / f"fb_{cell.tag}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "scenario", "epoch", "loss"))
        for step, (sid, losses) in enumerate(payload["histories"]):
            for epoch, loss in enumerate(losses):
                w.writerow((step, sid, epoch, repr(float(loss))))


def _load_cell(out: Path, cell: Cell) -> dict:
    return json.loads((out / "cells" / f"{cell.tag}.json").read_text())


# -- CSV assembly ------------------------------------------------------------------


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
            n += 1
    return n


def _assemble(out: Path, cells: List[Cell], record_filter=None) -> Tuple[int, List[dict]]:
    payloads = [(c, _load_cell(out, c)) for c in cells]
    result_rows, memory_rows, timing_rows = [], [], []
    for cell, payload in payloads:
        for rec in payload["records"]:
            if record_filter is not None and not record_filter(rec):
                continue
            result_rows.append([rec[f] for f in RESULT_FIELDS])
            timing_rows.append(
                [rec[f] for f in RESULT_FIELDS[:-2]]
                + [rec["seed"], rec["wall_seconds"]]
            )
        for step, (sid, b) in enumerate(payload["memory_log"]):
            memory_rows.append(
                [cell.strategy, cell.gamma, cell.k, cell.replicate, step, sid, b]
            )
    n = _write_csv(out / RESULTS_CSV, RESULT_FIELDS, result_rows)
    _write_csv(out / MEMORY_CSV, MEMORY_FIELDS, memory_rows)
    _write_csv(out / TIMING_CSV, TIMING_FIELDS, timing_rows)
    return n, [p for _, p in payloads]


# -- entry points -------------------------------------------------------------------


def run_protocol(cfg: ExperimentConfig, force: bool = False, resume: bool = False) -> RunSummary:
    """Execute the full strategy × γ × K grid over the scenario sequence."""
    t0 = time.monotonic()
    out = Path(cfg.out_dir)
    grid = protocol_grid(cfg)
    tags = [c.tag for c in grid]
    man_body = {"config": config_to_dict(cfg)}
    man, completed = _prepare_dir(out, "protocol", man_body, tags, force, resume, _RUN_ENTRIES)
    if man is None:
        n = sum(1 for _ in open(out / RESULTS_CSV)) - 1
        return RunSummary(str(out), "already-complete", len(grid), 0, len(grid), n, 0.0)

    plan = seed_plan(cfg.master_seed)
    datasets_by_r: Dict[int, Tuple[List[ScenarioDataset], Dict[str, object]]] = {}
    providers: Dict[int, Callable] = {}
    ran = 0
    for cell in grid:
        if cell.tag in completed:
            continue
        r = cell.replicate
        if r not in datasets_by_r:
            datasets_by_r[r] = _ensure_datasets(out, plan, cfg, r)
            providers[r] = _make_gan_provider(out, plan, cfg, r)
        datasets, eval_sets = datasets_by_r[r]
        payload = _run_cell(cfg, plan, cell, datasets, eval_sets, providers[r])
        _save_cell(out, cell, payload)
        ran += 1
        man["completed"] = sorted(completed | {c.tag for c in grid if (out / "cells" / f"{c.tag}.json").exists()})
        _write_manifest(out / MANIFEST_NAME, man)

    n_records, _ = _assemble(out, grid)
    man["status"] = "complete"
    man["completed"] = tags
    _write_manifest(out / MANIFEST_NAME, man)
    return RunSummary(
        str(out), "complete", len(grid), ran, len(grid) - ran, n_records, time.monotonic() - t0
    )


def sweep_compression(
    cfg: ExperimentConfig,
    gammas: Optional[Sequence[float]] = None,
    force: bool = False,
    resume: bool = False,
) -> RunSummary:
    """Train per compression ratio after the full sequence; record NMSE on the
    first two scenarios for the proposed, direct-transfer, and all-data
    strategies. Datasets and generator snapshots are shared with the main
    protocol run (same seeds), so a prior run makes the sweep cheaper."""
    t0 = time.monotonic()
    gammas = tuple(float(g) for g in (gammas if gammas is not None else DEFAULT_GAMMAS))
    if not gammas:
        raise ConfigError("sweep needs at least one compression ratio")
    base = Path(cfg.out_dir)
    out = base / "sweep"
    grid = sweep_grid(cfg, gammas)
    tags = [c.tag for c in grid]
    man_body = {"config": config_to_dict(cfg), "sweep_gammas": list(gammas)}
    known = {MANIFEST_NAME, "cells", "curves", TIMING_CSV}
    man, completed = _prepare_dir(out, "sweep", man_body, tags, force, resume, known)
    if man is None:
        n = sum(1 for _ in open(base / SWEEP_CSV)) - 1 if (base / SWEEP_CSV).exists() else 0
        return RunSummary(str(out), "already-complete", len(grid), 0, len(grid), n, 0.0)

    plan = seed_plan(cfg.master_seed)
    first_two = set(cfg.scenario_ids()[:2])
    last_sid = cfg.scenario_ids()[-1]
    datasets_by_r: Dict[int, Tuple[List[ScenarioDataset], Dict[str, object]]] = {}
    providers: Dict[int, Callable] = {}
    ran = 0
    for cell in grid:
        if cell.tag in completed:
            continue
        r = cell.replicate
        if r not in datasets_by_r:
            datasets_by_r[r] = _ensure_datasets(base, plan, cfg, r)
            providers[r] = _make_gan_provider(base, plan, cfg, r)
        datasets, eval_sets = datasets_by_r[r]
        payload = _run_cell(cfg, plan, cell, datasets, eval_sets, providers[r])
        _save_cell(out, cell, payload)
        ran += 1
        man["completed"] = sorted(completed | {c.tag for c in grid if (out / "cells" / f"{c.tag}.json").exists()})
        _write_manifest(out / MANIFEST_NAME, man)

    def keep(rec: dict) -> bool:
        return rec["trained_up_to"] == last_sid and rec["evaluated_on"] in first_two

    payloads = [(c, _load_cell(out, c)) for c in grid]
    rows = []
    for cell, payload in payloads:
        for rec in payload["records"]:
            if keep(rec):
                rows.append([rec[f] for f in RESULT_FIELDS])
    n_records = _write_csv(base / SWEEP_CSV, RESULT_FIELDS, rows)
    timing_rows = [
        [rec[f] for f in RESULT_FIELDS[:-2]] + [rec["seed"], rec["wall_seconds"]]
        for _, payload in payloads
        for rec in payload["records"]
    ]
    _write_csv(out / TIMING_CSV, TIMING_FIELDS, timing_rows)
    man["status"] = "complete"
    man["completed"] = tags
    _write_manifest(out / MANIFEST_NAME, man)
    return RunSummary(
        str(out), "complete", len(grid), ran, len(grid) - ran, n_records, time.monotonic() - t0
    )


def gen_data(cfg: ExperimentConfig, scenario_id: Optional[str] = None) -> List[Path]:
    """Pre-generate the datasets a run would create (all replicates).

    A later `run` with the same config loads these files instead of
    regenerating them; the bytes are identical either way.
    """
    if scenario_id is not None and scenario_id not in cfg.scenario_ids():
        raise ConfigError(
            f"unknown scenario {scenario_id!r}; config has {list(cfg.scenario_ids())}"
        )
    out = Path(cfg.out_dir)
    plan = seed_plan(cfg.master_seed)
    ds_dir = out / "datasets"
    ds_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for r in range(cfg.n_seeds):
        for spec in cfg.scenarios:
            sid = spec.scenario_id
            if scenario_id is not None and sid != scenario_id:
                continue
            path = ds_dir / f"r{r}_{sid}.csid"
            if not path.exists():
                seeded = replace(spec, seed=plan.data_seed(r, sid))
                save_dataset(generate_dataset(seeded, cfg.n_train, cfg.n_test), path)
            paths.append(path)
    return paths
