"""Deep-autoencoder CSI feedback: compression to a V-dim codeword and back.

The model is the classic convolutional autoencoder for CSI feedback: a light
convolutional head plus a dense projection down to V = round(gamma * 2*N_t*N_c)
on the encoder side, and a dense expansion followed by two additive residual
refinement blocks (2->8->16->2 channels) and a tanh output on the decoder
side, so reconstructions live in the same [-1, 1] domain as the normalized
channels. Training minimizes per-sample squared error under Adam; evaluation
reports NMSE in dB.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import ConfigError, DegenerateDataError, ShapeError
from .netcore import (
    AdamConfig,
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    LeakyReLU,
    Network,
    NetworkSpec,
    ParameterSet,
    Reshape,
    Residual,
    Tanh,
    deserialize_params,
    make_adam,
    serialize_params,
)
from .netcore.rng import RandomState

NMSE_FLOOR_DB = -300.0
_FLOOR_RATIO = 1e-30

ARCHS = ("csinet_like",)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 100
    epochs: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError(
                f"invalid training config: lr={self.lr}, batch={self.batch_size}, "
                f"epochs={self.epochs}"
            )


@dataclass
class FeedbackModel:
    encoder: Network
    decoder: Network
    v: int
    gamma: float
    n_tx: int
    n_sub: int
    arch: str = "csinet_like"

    def parameters(self):
        yield from self.encoder.parameters()
        yield from self.decoder.parameters()

    def count_params(self) -> int:
        return self.encoder.count_params() + self.decoder.count_params()

    def export_params(self) -> ParameterSet:
        ps = ParameterSet()
        for prefix, net in (("encoder", self.encoder), ("decoder", self.decoder)):
            sub = net.export_params()
            for name in sub.names():
                ps.add(f"{prefix}.{name}", sub[name])
        return ps

    def load_params(self, ps: ParameterSet) -> None:
        for prefix, net in (("encoder", self.encoder), ("decoder", self.decoder)):
            sub = ParameterSet()
            plen = len(prefix) + 1
            for name in ps.names():
                if name.startswith(prefix + "."):
                    sub.add(name[plen:], ps[name])
            net.load_params(sub)

    def reinit(self, rng: RandomState) -> None:
        self.encoder.init_params(rng.substream("encoder"))
        self.decoder.init_params(rng.substream("decoder"))


def encoder_spec(v: int, n_tx: int, n_sub: int) -> NetworkSpec:
    flat = 2 * n_tx * n_sub
    return NetworkSpec(
        input_shape=(2, n_tx, n_sub),
        layers=(
            Conv2d(2, 2),
            BatchNorm(2),
            LeakyReLU(),
            Flatten(),
            Dense(flat, v),
        ),
        output_shape=(v,),
    )


def _refinement_block() -> Residual:
    return Residual(
        (
            Conv2d(2, 8),
            BatchNorm(8),
            LeakyReLU(),
            Conv2d(8, 16),
            BatchNorm(16),
            LeakyReLU(),
            Conv2d(16, 2),
            BatchNorm(2),
            LeakyReLU(),
        )
    )


def decoder_spec(v: int, n_tx: int, n_sub: int) -> NetworkSpec:
    flat = 2 * n_tx * n_sub
    return NetworkSpec(
        input_shape=(v,),
        layers=(
            Dense(v, flat),
            Reshape((2, n_tx, n_sub)),
            _refinement_block(),
            _refinement_block(),
            Conv2d(2, 2),
            Tanh(),
        ),
        output_shape=(2, n_tx, n_sub),
    )


def codeword_length(gamma: float, n_tx: int, n_sub: int) -> int:
    if not 0 < gamma <= 1:
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
    v = round(gamma * 2 * n_tx * n_sub)
    if v < 1:
        raise ConfigError(
            f"gamma={gamma} gives codeword length {v} < 1 at N_t={n_tx}, N_c={n_sub}"
        )
    return v


def build_feedback_model(
    gamma: float,
    n_tx: int,
    n_sub: int,
    arch: str = "csinet_like",
    rng: Optional[RandomState] = None,
) -> FeedbackModel:
    if arch not in ARCHS:
        raise ConfigError(f"unknown architecture {arch!r}; available: {ARCHS}")
    v = codeword_length(gamma, n_tx, n_sub)
    rng = rng if rng is not None else RandomState(0)
    enc = Network(encoder_spec(v, n_tx, n_sub), rng.substream("encoder"))
    dec = Network(decoder_spec(v, n_tx, n_sub), rng.substream("decoder"))
    return FeedbackModel(enc, dec, v=v, gamma=gamma, n_tx=n_tx, n_sub=n_sub, arch=arch)


def check_bottleneck(model: FeedbackModel) -> int:
    """Structural narrow-point audit: the only path from H to H-hat is the codeword.

    Walks the encoder's shape sequence and verifies its narrowest boundary is
    the final output of width V, and that the decoder consumes exactly V.
    """
    from .netcore.layers import propagate_trace

    widths = [int(np.prod(s)) for s in propagate_trace(model.encoder.spec)]
    if min(widths) != model.v or widths[-1] != model.v:
        raise ShapeError(
            f"encoder narrow point {min(widths)} != codeword length {model.v}"
        )
    if tuple(model.decoder.spec.input_shape) != (model.v,):
        raise ShapeError(
            f"decoder input {model.decoder.spec.input_shape} != ({model.v},)"
        )
    return model.v


# -- forward paths ---------------------------------------------------------


def _as_batch(x, n_tx: int, n_sub: int) -> Tuple[torch.Tensor, bool]:
    t = torch.as_tensor(x, dtype=torch.float32)
    single = t.dim() == 3
    if single:
        t = t.unsqueeze(0)
    if t.dim() != 4 or tuple(t.shape[1:]) != (2, n_tx, n_sub):
        raise ShapeError(
            f"expected samples of shape (2, {n_tx}, {n_sub}), got {tuple(t.shape)}"
        )
    return t, single


def encode(model: FeedbackModel, h, mode: str = "eval") -> torch.Tensor:
    batch, single = _as_batch(h, model.n_tx, model.n_sub)
    s = model.encoder(batch, mode=mode)
    return s[0] if single else s


def decode(model: FeedbackModel, s, mode: str = "eval") -> torch.Tensor:
    t = torch.as_tensor(s, dtype=torch.float32)
    single = t.dim() == 1
    if single:
        t = t.unsqueeze(0)
    if t.dim() != 2 or t.shape[1] != model.v:
        raise ShapeError(f"expected codewords of length {model.v}, got {tuple(t.shape)}")
    out = model.decoder(t, mode=mode)
    return out[0] if single else out


def reconstruct(model: FeedbackModel, h, mode: str = "eval") -> torch.Tensor:
    return decode(model, encode(model, h, mode=mode), mode=mode)


def mse_loss(h: torch.Tensor, h_hat: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of per-sample squared L2 error."""
    if h.shape != h_hat.shape:
        raise ShapeError(f"shape mismatch {tuple(h.shape)} vs {tuple(h_hat.shape)}")
    diff = (h - h_hat).reshape(h.shape[0], -1)
    return diff.pow(2).sum(dim=1).mean()


# -- training & evaluation --------------------------------------------------


def train_feedback(
    model: FeedbackModel,
    train_sets: Sequence[np.ndarray],
    cfg: TrainConfig,
    rng: Optional[RandomState] = None,
) -> Tuple[FeedbackModel, List[float]]:
    """Minibatch Adam on the shuffled union of the given sample collections."""
    parts = [np.asarray(p, dtype=np.float32) for p in train_sets if len(p) > 0]
    if not parts:
        raise ConfigError("train_feedback needs at least one nonempty sample collection")
    data = torch.from_numpy(np.concatenate(parts, axis=0))
    n = data.shape[0]
    if cfg.batch_size > n:
        raise ConfigError(f"batch size {cfg.batch_size} exceeds train set size {n}")
    rng = rng if rng is not None else RandomState(cfg.seed)
    shuffle_gen = rng.torch_gen("shuffle")
    opt = make_adam(model.parameters(), AdamConfig(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps))
    history: List[float] = []
    for _epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=shuffle_gen)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            opt.zero_grad()
            loss = mse_loss(batch, reconstruct(model, batch, mode="train"))
            loss.backward()
            opt.step()
            total += loss.item() * batch.shape[0]
            seen += batch.shape[0]
        history.append(total / seen)
    return model, history


def nmse_eval(model: FeedbackModel, test_set, batch_size: int = 200) -> float:
    """10*log10(mean_i ||H_hat_i - H_i||^2 / ||H_i||^2), floored at -300 dB.

    Reconstruction runs at model precision; the ratio accumulates in float64
    so the metric itself adds no visible rounding.
    """
    data = torch.as_tensor(np.asarray(test_set, dtype=np.float64))
    if data.dim() == 3:
        data = data.unsqueeze(0)
    if data.shape[0] == 0:
        raise ConfigError("nmse_eval needs a nonempty test set")
    ratios = []
    with torch.no_grad():
        for start in range(0, data.shape[0], batch_size):
            batch = data[start : start + batch_size]
            rec = reconstruct(model, batch, mode="eval").to(torch.float64)
            err = (rec - batch).reshape(batch.shape[0], -1).pow(2).sum(dim=1)
            power = batch.reshape(batch.shape[0], -1).pow(2).sum(dim=1)
            if bool((power == 0).any()):
                raise DegenerateDataError("test sample with zero power in nmse_eval")
            ratios.append(err / power)
    mean_ratio = float(torch.cat(ratios).mean())
    if mean_ratio < _FLOOR_RATIO:
        return NMSE_FLOOR_DB
    return 10.0 * float(np.log10(mean_ratio))


# -- persistence -------------------------------------------------------------


def save_feedback_model(model: FeedbackModel, path: str | Path, extra: Optional[dict] = None) -> None:
    path = Path(path)
    path.write_bytes(serialize_params(model.export_params()))
    meta = {
        "arch": model.arch,
        "gamma": model.gamma,
        "v": model.v,
        "n_tx": model.n_tx,
        "n_sub": model.n_sub,
    }
    if extra:
        meta.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_feedback_model(path: str | Path) -> FeedbackModel:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    model = build_feedback_model(
        meta["gamma"], meta["n_tx"], meta["n_sub"], arch=meta.get("arch", "csinet_like")
    )
    model.load_params(deserialize_params(path.read_bytes()))
    return model
