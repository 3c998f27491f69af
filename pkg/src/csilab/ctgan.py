"""Adversarial channel modeling with a consistency-regularized WGAN.

The discriminator trains on a three-term objective

    L_D = E[D(G(z))] - E[D(H)] + lambda1 * GP + lambda2 * CT

where GP is the gradient penalty at per-sample uniform interpolates between
real and generated batches (dropout disabled for that pass so the input
gradient is well defined, and trained through via double backpropagation),
and CT is a hinge on the discrepancy between two independent dropout passes
on real data. The generator minimizes -E[D(G(z))]. Trained generators are
snapshotted to a compact binary form and act as replay memory for the
continual-learning engine.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import ConfigError, DivergenceError, NonFiniteLossError, ShapeError
from .netcore import (
    AdamConfig,
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    LeakyReLU,
    MeanReduce,
    Network,
    NetworkSpec,
    Reshape,
    Tanh,
    UpsampleNearest2x,
    count_params,
    deserialize_params,
    make_adam,
    serialize_params,
)
from .netcore.rng import RandomState

DIVERGENCE_LIMIT = 1e6

# channel widths: full-scale sized against the two-snapshot storage budget,
# desk-scale shrunk for laptop runs
FULL_GENERATOR_WIDTHS = (96, 64, 32)
DESK_GENERATOR_WIDTHS = (48, 32, 16)
FULL_GENERATOR_BUDGET = 465_568
FULL_DISCRIMINATOR_WIDTHS = (32, 64, 128)
DESK_DISCRIMINATOR_WIDTHS = (16, 32, 64)


@dataclass(frozen=True)
class GeneratorConfig:
    """Latent size, conv widths, and an optional parameter-count budget."""

    z_dim: int = 64
    widths: Tuple[int, int, int] = FULL_GENERATOR_WIDTHS
    budget: Optional[int] = None
    budget_tolerance: float = 0.05

    def spec(self, n_tx: int, n_sub: int) -> NetworkSpec:
        if n_tx % 4 or n_sub % 4:
            raise ConfigError(
                f"generator needs spatial dims divisible by 4, got ({n_tx}, {n_sub})"
            )
        base_h, base_w = n_tx // 4, n_sub // 4
        c0, c1, c2 = self.widths
        return NetworkSpec(
            input_shape=(self.z_dim,),
            layers=(
                Dense(self.z_dim, base_h * base_w * c0),
                Reshape((c0, base_h, base_w)),
                UpsampleNearest2x(),
                Conv2d(c0, c1),
                BatchNorm(c1),
                LeakyReLU(),
                UpsampleNearest2x(),
                Conv2d(c1, c2),
                BatchNorm(c2),
                LeakyReLU(),
                Conv2d(c2, 2),
                Tanh(),
            ),
            output_shape=(2, n_tx, n_sub),
        )


@dataclass(frozen=True)
class DiscriminatorConfig:
    widths: Tuple[int, int, int] = FULL_DISCRIMINATOR_WIDTHS
    dropout: float = 0.5

    def spec(self, n_tx: int, n_sub: int) -> NetworkSpec:
        c0, c1, c2 = self.widths
        return NetworkSpec(
            input_shape=(2, n_tx, n_sub),
            layers=(
                Conv2d(2, c0, stride=2),
                LeakyReLU(),
                Dropout(self.dropout),
                Conv2d(c0, c1, stride=2),
                LeakyReLU(),
                Dropout(self.dropout),
                Conv2d(c1, c2, stride=2),
                LeakyReLU(),
                Dropout(self.dropout),
                Conv2d(c2, 1),
                MeanReduce(),
            ),
            output_shape=(1,),
        )


@dataclass(frozen=True)
class GanTrainConfig:
    lambda1: float = 10.0
    lambda2: float = 2.0
    m_prime: float = 0.2
    lr: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size: int = 100
    epochs: int = 300
    n_critic: int = 5
    seed: int = 0
    # reserved extension: weight for a hidden-layer consistency term; 0 keeps
    # the hinge on final outputs only
    ct_hidden_weight: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.m_prime < 0:
            raise ConfigError("lambda1, lambda2, m_prime must be nonnegative")
        if self.n_critic < 1:
            raise ConfigError(f"n_critic must be >= 1, got {self.n_critic}")


def build_generator(cfg: GeneratorConfig, n_tx: int, n_sub: int, rng: Optional[RandomState] = None) -> Network:
    net = Network(cfg.spec(n_tx, n_sub), rng)
    if cfg.budget is not None:
        n = net.count_params()
        lo = cfg.budget * (1 - cfg.budget_tolerance)
        hi = cfg.budget * (1 + cfg.budget_tolerance)
        if not lo <= n <= hi:
            raise ConfigError(
                f"generator has {n} parameters, outside +/-{cfg.budget_tolerance:.0%} "
                f"of the {cfg.budget} budget"
            )
    return net


def build_discriminator(cfg: DiscriminatorConfig, n_tx: int, n_sub: int, rng: Optional[RandomState] = None) -> Network:
    return Network(cfg.spec(n_tx, n_sub), rng)


# -- loss pieces ----------------------------------------------------------


def sample_latent(batch: int, z_dim: int, gen: torch.Generator) -> torch.Tensor:
    """Standard normal latent draws, B x z_dim."""
    if batch < 0:
        raise ConfigError(f"batch must be >= 0, got {batch}")
    return torch.randn(batch, z_dim, generator=gen, dtype=torch.float32)


def generate(g_net: Network, z: torch.Tensor) -> torch.Tensor:
    """Deterministic eval-mode generation (the snapshot/reply path)."""
    with torch.no_grad():
        return g_net(z, mode="eval")


def _per_sample(out: torch.Tensor) -> torch.Tensor:
    flat = out.reshape(out.shape[0], -1)
    if flat.shape[1] != 1:
        raise ShapeError(f"discriminator must emit one scalar per sample, got {tuple(out.shape)}")
    return flat[:, 0]


def gradient_penalty(
    d_net: Network,
    real: torch.Tensor,
    fake: torch.Tensor,
    interp_gen: torch.Generator,
) -> torch.Tensor:
    """Mean (||grad_x D(x_mix)||_2 - 1)^2 at per-sample uniform interpolates.

    Dropout is disabled for this pass; the returned scalar stays connected to
    the discriminator parameters (create_graph) so the penalty trains through.
    """
    if real.shape != fake.shape:
        raise ShapeError(f"real {tuple(real.shape)} vs fake {tuple(fake.shape)}")
    i = torch.rand((real.shape[0],) + (1,) * (real.dim() - 1), generator=interp_gen)
    mixed = i * real + (1.0 - i) * fake
    grad = d_net.input_gradient(mixed, mode="eval", create_graph=True)
    norms = grad.reshape(grad.shape[0], -1).norm(2, dim=1)
    return (norms - 1.0).pow(2).mean()


def consistency_term(
    d_net: Network,
    real: torch.Tensor,
    dropout_gen: torch.Generator,
    m_prime: float,
) -> torch.Tensor:
    """Hinge on the gap between two independent dropout passes over real data."""
    d1 = _per_sample(d_net(real, mode="train", dropout_gen=dropout_gen))
    d2 = _per_sample(d_net(real, mode="train", dropout_gen=dropout_gen))
    return torch.relu((d1 - d2).abs() - m_prime).mean()


def discriminator_loss(
    d_net: Network,
    g_net: Network,
    real: torch.Tensor,
    z: torch.Tensor,
    cfg: GanTrainConfig,
    dropout_gen: torch.Generator,
    interp_gen: torch.Generator,
) -> Tuple[torch.Tensor, dict]:
    """EM estimate + gradient penalty + consistency hinge; returns (loss, parts)."""
    fake = g_net(z, mode="train").detach()
    d_fake = _per_sample(d_net(fake, mode="train", dropout_gen=dropout_gen)).mean()
    d_real = _per_sample(d_net(real, mode="train", dropout_gen=dropout_gen)).mean()
    gp = gradient_penalty(d_net, real, fake, interp_gen)
    ct = consistency_term(d_net, real, dropout_gen, cfg.m_prime)
    parts = {"em": d_fake - d_real, "gp": gp, "ct": ct}
    for name, value in parts.items():
        if not torch.isfinite(value):
            raise NonFiniteLossError(
                f"discriminator loss term '{name}' is not finite", value.item()
            )
    loss = parts["em"] + cfg.lambda1 * gp + cfg.lambda2 * ct
    return loss, {k: v.item() for k, v in parts.items()}


def generator_loss(
    d_net: Network,
    g_net: Network,
    z: torch.Tensor,
    dropout_gen: torch.Generator,
) -> torch.Tensor:
    fake = g_net(z, mode="train")
    loss = -_per_sample(d_net(fake, mode="train", dropout_gen=dropout_gen)).mean()
    if not torch.isfinite(loss):
        raise NonFiniteLossError("generator loss is not finite", loss.item())
    return loss


# -- training loop ----------------------------------------------------------


@dataclass
class CurvePoint:
    iteration: int  # 1-based discriminator step count
    d_loss: float
    g_loss: Optional[float]  # set on iterations that took a generator step
    gp_term: float
    ct_term: float


def train_gan(
    data,
    gen_cfg: GeneratorConfig,
    disc_cfg: DiscriminatorConfig,
    cfg: GanTrainConfig,
    rng: Optional[RandomState] = None,
) -> Tuple[Network, Network, List[CurvePoint]]:
    """Alternating Adam: n_critic discriminator steps per generator step."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[0] == 0:
        raise ConfigError(f"train_gan needs a nonempty (N, 2, H, W) dataset, got {arr.shape}")
    n, _, n_tx, n_sub = arr.shape
    if cfg.batch_size > n:
        raise ConfigError(f"batch size {cfg.batch_size} exceeds dataset size {n}")
    rng = rng if rng is not None else RandomState(cfg.seed)
    g_net = build_generator(gen_cfg, n_tx, n_sub, rng.substream("gen"))
    d_net = build_discriminator(disc_cfg, n_tx, n_sub, rng.substream("disc"))
    opt_g = make_adam(g_net.parameters(), AdamConfig(cfg.lr, cfg.beta1, cfg.beta2))
    opt_d = make_adam(d_net.parameters(), AdamConfig(cfg.lr, cfg.beta1, cfg.beta2))
    latent_gen = rng.torch_gen("latent")
    dropout_gen = rng.torch_gen("dropout")
    interp_gen = rng.torch_gen("interpolation")
    shuffle_gen = rng.torch_gen("shuffle")
    tensor = torch.from_numpy(arr)

    curves: List[CurvePoint] = []
    it = 0
    for _epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=shuffle_gen)
        for start in range(0, n, cfg.batch_size):
            real = tensor[order[start : start + cfg.batch_size]]
            z = sample_latent(real.shape[0], gen_cfg.z_dim, latent_gen)
            opt_d.zero_grad()
            d_loss, parts = discriminator_loss(
                d_net, g_net, real, z, cfg, dropout_gen, interp_gen
            )
            if abs(d_loss.item()) > DIVERGENCE_LIMIT:
                raise DivergenceError(
                    f"discriminator loss {d_loss.item():.3e} exceeded "
                    f"{DIVERGENCE_LIMIT:.0e} at iteration {it + 1}"
                )
            d_loss.backward()
            opt_d.step()
            it += 1

            g_val: Optional[float] = None
            if it % cfg.n_critic == 0:
                z2 = sample_latent(real.shape[0], gen_cfg.z_dim, latent_gen)
                opt_g.zero_grad()
                g_loss = generator_loss(d_net, g_net, z2, dropout_gen)
                if abs(g_loss.item()) > DIVERGENCE_LIMIT:
                    raise DivergenceError(
                        f"generator loss {g_loss.item():.3e} exceeded "
                        f"{DIVERGENCE_LIMIT:.0e} at iteration {it}"
                    )
                g_loss.backward()
                opt_g.step()
                g_val = g_loss.item()

            curves.append(
                CurvePoint(it, d_loss.item(), g_val, parts["gp"], parts["ct"])
            )
    return g_net, d_net, curves


def save_gan_curves(curves: Sequence[CurvePoint], path: str | Path) -> None:
    lines = ["iteration,d_loss,g_loss,gp_term,ct_term"]
    for c in curves:
        g = "" if c.g_loss is None else f"{c.g_loss:.8g}"
        lines.append(f"{c.iteration},{c.d_loss:.8g},{g},{c.gp_term:.8g},{c.ct_term:.8g}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- snapshots ----------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSnapshot:
    """Immutable stored generator: the memory unit for one scenario."""

    scenario_id: str
    z_dim: int
    widths: Tuple[int, int, int]
    n_tx: int
    n_sub: int
    payload: bytes
    param_count: int

    @property
    def byte_size(self) -> int:
        """Parameter payload bytes (4 per stored scalar, headers excluded)."""
        return 4 * self.param_count

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(z_dim=self.z_dim, widths=tuple(self.widths))

    def build(self) -> Network:
        net = Network(self.generator_config().spec(self.n_tx, self.n_sub))
        net.load_params(deserialize_params(self.payload))
        return net

    def spec_hash(self) -> str:
        key = repr((self.z_dim, tuple(self.widths), self.n_tx, self.n_sub)).encode()
        return hashlib.blake2b(key, digest_size=8).hexdigest()


def snapshot_generator(
    g_net: Network,
    scenario_id: str,
    gen_cfg: GeneratorConfig,
    n_tx: int,
    n_sub: int,
) -> GeneratorSnapshot:
    params = g_net.export_params()
    return GeneratorSnapshot(
        scenario_id=scenario_id,
        z_dim=gen_cfg.z_dim,
        widths=tuple(gen_cfg.widths),
        n_tx=n_tx,
        n_sub=n_sub,
        payload=serialize_params(params),
        param_count=count_params(params),
    )


def save_snapshot(snap: GeneratorSnapshot, path: str | Path, extra: Optional[dict] = None) -> None:
    path = Path(path)
    path.write_bytes(snap.payload)
    meta = {
        "scenario_id": snap.scenario_id,
        "z_dim": snap.z_dim,
        "widths": list(snap.widths),
        "n_tx": snap.n_tx,
        "n_sub": snap.n_sub,
        "param_count": snap.param_count,
        "byte_size": snap.byte_size,
        "spec_hash": snap.spec_hash(),
    }
    if extra:
        meta.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_snapshot(path: str | Path) -> GeneratorSnapshot:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    payload = path.read_bytes()
    snap = GeneratorSnapshot(
        scenario_id=meta["scenario_id"],
        z_dim=meta["z_dim"],
        widths=tuple(meta["widths"]),
        n_tx=meta["n_tx"],
        n_sub=meta["n_sub"],
        payload=payload,
        param_count=meta["param_count"],
    )
    if snap.spec_hash() != meta.get("spec_hash", snap.spec_hash()):
        raise ConfigError(f"{path}: snapshot sidecar spec hash does not match payload spec")
    return snap
