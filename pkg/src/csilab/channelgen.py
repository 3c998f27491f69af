"""Spatial-frequency CSI dataset synthesis, import, normalization, and storage.

Channels follow a clustered-multipath model over a half-wavelength ULA and an
OFDM grid: each sample is a sum of P paths with angles drawn from a
scenario-specific AoD sector, uniform excess delays, and complex Gaussian
gains whose power decays exponentially with path index,

    h_n = sum_p  alpha_p * a(theta_p) * exp(-2j*pi*f_n*tau_p),

with f_n the normalized subcarrier offset n/N_c and tau expressed in units of
1/bandwidth (the bandwidth itself cancels in the normalized phases; it is kept
on the spec for physical bookkeeping). Disjoint AoD sectors give scenarios
with disjoint angular support, which is the property the continual-learning
experiments rely on.

Datasets are stored in a small binary tensor format ("CSID") with a JSON
sidecar carrying the scenario spec, split counts, and normalization stats.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import (
    DecodeError,
    DegenerateDataError,
    MissingSidecarError,
    ShapeError,
    UnsupportedVersionError,
)
from .netcore.rng import RandomState

_MAGIC = b"CSID"
_VERSION = 1

DEFAULT_TRAIN = 5000
DEFAULT_TEST = 1000


@dataclass(frozen=True)
class ScenarioSpec:
    """Geometry and randomness of one channel distribution."""

    scenario_id: str
    sector: Tuple[float, float]  # AoD sector [theta_min, theta_max], radians
    n_tx: int = 32
    n_sub: int = 32
    n_paths: int = 25
    delay_spread: float = 4.0  # max excess delay, units of 1/bandwidth
    bandwidth_hz: float = 0.05e9
    decay: float = 0.1  # per-path power decay exponent
    seed: int = 0

    def __post_init__(self):
        if self.n_tx < 1 or self.n_sub < 1 or self.n_paths < 1:
            raise ValueError("n_tx, n_sub, n_paths must all be >= 1")
        lo, hi = self.sector
        half_pi = math.pi / 2
        if not (-half_pi < lo < hi < half_pi):
            raise ValueError(
                f"sector must satisfy -pi/2 < lo < hi < pi/2, got ({lo}, {hi})"
            )
        if self.delay_spread < 0:
            raise ValueError("delay_spread must be >= 0")
        object.__setattr__(self, "sector", (float(lo), float(hi)))


def default_scenarios(seed: int = 0) -> Tuple[ScenarioSpec, ScenarioSpec, ScenarioSpec]:
    """The three stock scenarios: disjoint AoD sectors A, B, C."""
    deg = math.pi / 180.0
    return (
        ScenarioSpec("A", (0.0 * deg, 25.0 * deg), seed=seed),
        ScenarioSpec("B", (35.0 * deg, 60.0 * deg), seed=seed),
        ScenarioSpec("C", (-60.0 * deg, -35.0 * deg), seed=seed),
    )


@dataclass(frozen=True)
class NormStats:
    """Min-max extremes of the training split, applied to both splits."""

    min: float
    max: float


@dataclass
class ScenarioDataset:
    spec: Optional[ScenarioSpec]
    train: np.ndarray  # (n_train, 2, n_tx, n_sub) float32
    test: np.ndarray  # (n_test, 2, n_tx, n_sub) float32
    stats: Optional[NormStats]
    normalized: bool

    @property
    def n_train(self) -> int:
        return self.train.shape[0]

    @property
    def n_test(self) -> int:
        return self.test.shape[0]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.train.shape[1:])


# -- channel synthesis ---------------------------------------------------


def steering_vector(theta: float, n_tx: int) -> np.ndarray:
    """ULA steering vector at half-wavelength spacing: a_k = exp(j*pi*k*sin(theta))."""
    if not abs(theta) < math.pi / 2:
        raise ValueError(f"|theta| must be < pi/2, got {theta}")
    k = np.arange(n_tx)
    return np.exp(1j * np.pi * k * math.sin(theta))


def complex_to_real(h: np.ndarray) -> np.ndarray:
    """(n_tx, n_sub) complex -> (2, n_tx, n_sub) real; channel 0 real, 1 imag."""
    return np.stack([h.real, h.imag], axis=0)


def real_to_complex(x: np.ndarray) -> np.ndarray:
    if x.ndim < 3 or x.shape[-3] != 2:
        raise ShapeError(f"real form must have a leading size-2 axis, got {x.shape}")
    return x[..., 0, :, :] + 1j * x[..., 1, :, :]


def synth_channel(spec: ScenarioSpec, gen: np.random.Generator) -> np.ndarray:
    """One multipath channel draw, complex (n_tx, n_sub)."""
    p = spec.n_paths
    theta = gen.uniform(spec.sector[0], spec.sector[1], p)
    tau = gen.uniform(0.0, spec.delay_spread, p)
    w = np.exp(-spec.decay * np.arange(p))
    w /= w.sum()
    gauss = gen.standard_normal((p, 2))
    alpha = (gauss[:, 0] + 1j * gauss[:, 1]) * np.sqrt(w / 2.0)
    # (n_tx, p) steering matrix, weighted per path, times (p, n_sub) delay phases
    a = np.exp(1j * np.pi * np.outer(np.arange(spec.n_tx), np.sin(theta)))
    phases = np.exp(-2j * np.pi * np.outer(tau, np.arange(spec.n_sub)) / spec.n_sub)
    return (a * alpha) @ phases


def _synth_block(spec: ScenarioSpec, rng: RandomState, start: int, count: int) -> np.ndarray:
    """Samples [start, start+count) in real form; per-sample substreams make the
    result independent of how generation is chunked."""
    out = np.empty((count, 2, spec.n_tx, spec.n_sub), dtype=np.float64)
    for j in range(count):
        g = rng.numpy_gen("data", spec.scenario_id, start + j)
        out[j] = complex_to_real(synth_channel(spec, g))
    return out


def generate_dataset(
    spec: ScenarioSpec,
    n_train: int = DEFAULT_TRAIN,
    n_test: int = DEFAULT_TEST,
) -> ScenarioDataset:
    """Draw i.i.d. samples, fit min-max stats on the train split, normalize both."""
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    rng = RandomState(spec.seed)
    raw_train = _synth_block(spec, rng, 0, n_train)
    raw_test = _synth_block(spec, rng, n_train, n_test)
    return _finish_dataset(spec, raw_train, raw_test)


def _finish_dataset(spec, raw_train, raw_test) -> ScenarioDataset:
    stats = NormStats(float(raw_train.min()), float(raw_train.max()))
    train = normalize(raw_train, stats).astype(np.float32)
    test = np.clip(normalize(raw_test, stats), -1.0, 1.0).astype(np.float32)
    return ScenarioDataset(spec=spec, train=train, test=test, stats=stats, normalized=True)


# -- normalization -------------------------------------------------------


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    if not stats.max > stats.min:
        raise DegenerateDataError(
            f"normalization stats are degenerate (min={stats.min}, max={stats.max})"
        )
    return 2.0 * (x - stats.min) / (stats.max - stats.min) - 1.0


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    if not stats.max > stats.min:
        raise DegenerateDataError(
            f"normalization stats are degenerate (min={stats.min}, max={stats.max})"
        )
    return (x + 1.0) * (stats.max - stats.min) / 2.0 + stats.min


# -- beamspace diagnostics ----------------------------------------------


def beamspace_spectrum(x: np.ndarray) -> np.ndarray:
    """Mean squared DFT magnitude across the antenna axis, per angular bin.

    Accepts real-form batches (B, 2, n_tx, n_sub); returns (B, n_tx).
    """
    h = real_to_complex(np.asarray(x, dtype=np.float64))
    spec = np.fft.fft(h, axis=-2)
    return (np.abs(spec) ** 2).mean(axis=-1)


def beamspace_argmax_bins(x: np.ndarray) -> np.ndarray:
    """Dominant angular bin per sample."""
    return beamspace_spectrum(x).argmax(axis=-1)


# -- binary format -------------------------------------------------------


def save_dataset(ds: ScenarioDataset, path: str | Path) -> None:
    """Write the CSID binary (train then test, file order) plus the .meta sidecar."""
    path = Path(path)
    n = ds.n_train + ds.n_test
    _, n_tx, n_sub = ds.shape
    data = np.concatenate([ds.train, ds.test], axis=0).astype("<f4")
    header = _MAGIC + struct.pack("<IIIIIB", _VERSION, n, 2, n_tx, n_sub, 1 if ds.normalized else 0)
    path.write_bytes(header + data.tobytes(order="C"))
    meta = {
        "version": _VERSION,
        "spec": asdict(ds.spec) if ds.spec is not None else None,
        "stats": asdict(ds.stats) if ds.stats is not None else None,
        "normalized": ds.normalized,
        "n_train": ds.n_train,
        "n_test": ds.n_test,
        "seed": ds.spec.seed if ds.spec is not None else None,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta")


def _read_payload(path: Path) -> tuple[np.ndarray, int, int, int, bool]:
    blob = path.read_bytes()
    if len(blob) < 25:
        raise DecodeError(f"{path}: file too short for a dataset header")
    if blob[:4] != _MAGIC:
        raise DecodeError(f"{path}: bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    version, n, c, n_tx, n_sub, flag = struct.unpack("<IIIIIB", blob[4:25])
    if version != _VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported dataset version {version}")
    if c != 2:
        raise DecodeError(f"{path}: expected 2 real channels, header says {c}")
    expected = n * 2 * n_tx * n_sub * 4
    payload = blob[25:]
    if len(payload) != expected:
        raise DecodeError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n, 2, n_tx, n_sub).copy()
    return data, n, n_tx, n_sub, bool(flag)


def load_dataset(path: str | Path) -> ScenarioDataset:
    """Read a dataset written by save_dataset, sidecar required."""
    path = Path(path)
    data, n, n_tx, n_sub, normalized = _read_payload(path)
    side = sidecar_path(path)
    if not side.exists():
        raise MissingSidecarError(
            f"{path}: sidecar {side.name} not found; normalization stats unavailable "
            f"(the binary payload itself may be intact)"
        )
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise DecodeError(f"{side}: corrupt sidecar JSON: {exc}") from exc
    if meta.get("version") != _VERSION:
        raise UnsupportedVersionError(
            f"{side}: unsupported sidecar version {meta.get('version')}"
        )
    n_train, n_test = int(meta["n_train"]), int(meta["n_test"])
    if n_train + n_test != n:
        raise DecodeError(
            f"{path}: sidecar counts {n_train}+{n_test} do not match payload N={n}"
        )
    spec = None
    if meta.get("spec") is not None:
        fields = dict(meta["spec"])
        fields["sector"] = tuple(fields["sector"])
        spec = ScenarioSpec(**fields)
    stats = NormStats(**meta["stats"]) if meta.get("stats") is not None else None
    return ScenarioDataset(
        spec=spec,
        train=data[:n_train],
        test=data[n_train:],
        stats=stats,
        normalized=normalized,
    )


def import_external(
    path: str | Path,
    n_tx: int,
    n_sub: int,
    n_train: Optional[int] = None,
) -> ScenarioDataset:
    """Import an unnormalized external channel dump and split/normalize it.

    The file must be CSID-format with the normalized flag clear. Samples are
    split in file order; by default five sixths go to training (a 6000-sample
    export becomes 5000 train / 1000 test).
    """
    path = Path(path)
    data, n, file_tx, file_sub, normalized = _read_payload(path)
    if normalized:
        raise DecodeError(f"{path}: file is flagged normalized; import expects raw channels")
    if (file_tx, file_sub) != (n_tx, n_sub):
        raise ShapeError(
            f"{path}: header dimensions ({file_tx}, {file_sub}) do not match "
            f"requested ({n_tx}, {n_sub})"
        )
    if not np.isfinite(data).all():
        raise DegenerateDataError(f"{path}: non-finite entries in imported data")
    if n_train is None:
        n_train = (n * 5) // 6
    if not 0 < n_train < n:
        raise ValueError(f"n_train={n_train} must split N={n} into two nonempty parts")
    raw = data.astype(np.float64)
    return _finish_dataset(None, raw[:n_train], raw[n_train:])
