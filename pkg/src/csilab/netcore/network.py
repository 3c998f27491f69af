"""Torch-backed realization of a NetworkSpec.

A Network owns the torch modules for one spec, with deterministic fan-in
uniform initialization from a named init stream, explicit train/eval forward
modes, generator-driven dropout (inverted scaling), parameter export/import in
canonical float32 form, and the two gradient facilities the training code
relies on: parameter gradients of an arbitrary scalar loss and per-sample
input gradients that remain differentiable with respect to parameters, so a
gradient-norm penalty can be trained through exactly.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from ..errors import NonFiniteLossError, ShapeError
from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    Layer,
    LeakyReLU,
    MeanReduce,
    NetworkSpec,
    Reshape,
    Residual,
    Tanh,
    UpsampleNearest2x,
    layer_kind,
)
from .params import ParameterSet, count_params
from .rng import RandomState

# leaf tensors persisted per stateful layer kind
_BN_FIELDS = ("weight", "bias", "running_mean", "running_var")


def _make_module(layer: Layer) -> Optional[nn.Module]:
    if isinstance(layer, Conv2d):
        return nn.Conv2d(
            layer.in_channels,
            layer.out_channels,
            layer.kernel,
            stride=layer.stride,
            padding=layer.padding,
        )
    if isinstance(layer, Dense):
        return nn.Linear(layer.in_features, layer.out_features)
    if isinstance(layer, BatchNorm):
        return nn.BatchNorm2d(layer.num_features)
    if isinstance(layer, Residual):
        return nn.ModuleList([_make_module(l) or nn.Identity() for l in layer.inner])
    return None


class Network(nn.Module):
    """Executable network for one NetworkSpec."""

    def __init__(
        self,
        spec: NetworkSpec,
        rng: RandomState | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.spec = spec
        self.dtype = dtype
        self.mods = nn.ModuleList([_make_module(l) or nn.Identity() for l in spec.layers])
        self.to(dtype)
        if rng is not None:
            self.init_params(rng)

    # -- initialization ------------------------------------------------

    def init_params(self, rng: RandomState) -> None:
        """Centered-uniform fan-in init for conv/dense; batchnorm to identity."""
        gen = rng.torch_gen("init")
        for layer, mod in self._walk():
            if isinstance(layer, (Conv2d, Dense)):
                fan_in = (
                    layer.in_channels * layer.kernel * layer.kernel
                    if isinstance(layer, Conv2d)
                    else layer.in_features
                )
                bound = math.sqrt(6.0 / fan_in)
                with torch.no_grad():
                    # draw in float32 so the canonical form is identical in
                    # 32- and 64-bit instantiations of the same seed
                    w32 = torch.empty(mod.weight.shape, dtype=torch.float32)
                    w32.uniform_(-bound, bound, generator=gen)
                    mod.weight.copy_(w32)
                    mod.bias.zero_()
            elif isinstance(layer, BatchNorm):
                with torch.no_grad():
                    mod.weight.fill_(1.0)
                    mod.bias.zero_()
                    mod.running_mean.zero_()
                    mod.running_var.fill_(1.0)
                    mod.num_batches_tracked.zero_()

    def _walk(self, layers=None, mods=None, prefix=""):
        """Yield (layer, module) leaves depth-first, recursing into residuals."""
        layers = self.spec.layers if layers is None else layers
        mods = self.mods if mods is None else mods
        for layer, mod in zip(layers, mods):
            if isinstance(layer, Residual):
                yield from self._walk(layer.inner, mod)
            elif not isinstance(mod, nn.Identity):
                yield layer, mod

    def _named_leaves(self, layers=None, mods=None, prefix="layers"):
        layers = self.spec.layers if layers is None else layers
        mods = self.mods if mods is None else mods
        for i, (layer, mod) in enumerate(zip(layers, mods)):
            path = f"{prefix}.{i}"
            if isinstance(layer, Residual):
                yield from self._named_leaves(layer.inner, mod, prefix=f"{path}.inner")
            elif isinstance(layer, (Conv2d, Dense)):
                yield f"{path}.weight", mod.weight, True
                yield f"{path}.bias", mod.bias, True
            elif isinstance(layer, BatchNorm):
                yield f"{path}.weight", mod.weight, True
                yield f"{path}.bias", mod.bias, True
                yield f"{path}.running_mean", mod.running_mean, False
                yield f"{path}.running_var", mod.running_var, False

    # -- forward -------------------------------------------------------

    def forward(
        self,
        x: torch.Tensor,
        mode: str = "eval",
        dropout_gen: torch.Generator | None = None,
    ) -> torch.Tensor:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ShapeError(
                f"input shape {tuple(x.shape[1:])} does not match network input "
                f"{self.spec.input_shape}"
            )
        train = mode == "train"
        self.train(train)
        return self._run(self.spec.layers, self.mods, x, train, dropout_gen)

    def _run(self, layers, mods, x, train, dropout_gen, where="layers"):
        for i, (layer, mod) in enumerate(zip(layers, mods)):
            try:
                x = self._apply_layer(layer, mod, x, train, dropout_gen)
            except (RuntimeError, ShapeError) as exc:
                raise ShapeError(f"{where}[{i}] ({layer_kind(layer)}): {exc}") from exc
        return x

    def _apply_layer(self, layer, mod, x, train, dropout_gen):
        if isinstance(layer, (Conv2d, Dense, BatchNorm)):
            return mod(x)
        if isinstance(layer, LeakyReLU):
            return torch.nn.functional.leaky_relu(x, layer.slope)
        if isinstance(layer, Tanh):
            return torch.tanh(x)
        if isinstance(layer, Dropout):
            if not train or layer.p == 0.0:
                return x
            if dropout_gen is None:
                raise ValueError("train-mode dropout requires a dropout generator")
            keep = 1.0 - layer.p
            mask = (
                torch.rand(x.shape, generator=dropout_gen, dtype=torch.float32) >= layer.p
            ).to(x.dtype)
            return x * mask / keep
        if isinstance(layer, UpsampleNearest2x):
            return x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)
        if isinstance(layer, MeanReduce):
            return x.mean(dim=(-2, -1))
        if isinstance(layer, Reshape):
            return x.reshape((x.shape[0],) + tuple(layer.shape))
        if isinstance(layer, Flatten):
            return x.reshape(x.shape[0], -1)
        if isinstance(layer, Residual):
            return x + self._run(layer.inner, mod, x, train, dropout_gen, where="inner")
        raise ShapeError(f"unknown layer kind {layer_kind(layer)}")

    # -- parameters ----------------------------------------------------

    def export_params(self) -> ParameterSet:
        """Canonical float32 snapshot of every persisted tensor.

        The copy matters: the snapshot must stay frozen while the live
        tensors keep training.
        """
        ps = ParameterSet()
        for name, tensor, _ in self._named_leaves():
            ps.add(name, tensor.detach().cpu().to(torch.float32).numpy().copy())
        return ps

    def load_params(self, ps: ParameterSet) -> None:
        names = [name for name, _, _ in self._named_leaves()]
        if ps.names() != names:
            raise ValueError(
                f"parameter names do not match network structure: "
                f"expected {names[:3]}..., got {ps.names()[:3]}..."
            )
        with torch.no_grad():
            for name, tensor, _ in self._named_leaves():
                arr = ps[name]
                if tuple(arr.shape) != tuple(tensor.shape):
                    raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {tuple(tensor.shape)}")
                tensor.copy_(torch.from_numpy(arr).to(tensor.dtype))

    def count_params(self) -> int:
        return count_params(self.export_params())

    def trainable_named(self):
        return [(name, t) for name, t, trainable in self._named_leaves() if trainable]

    # -- gradients -----------------------------------------------------

    def param_gradients(self, loss_fn: Callable[["Network"], torch.Tensor]) -> ParameterSet:
        """Gradient of a scalar loss with respect to every trainable tensor.

        Tensors the loss does not reach get explicit zero gradients; batchnorm
        running statistics are never differentiated.
        """
        loss = loss_fn(self)
        if loss.dim() != 0:
            raise ValueError("loss_fn must produce a scalar")
        if not torch.isfinite(loss):
            raise NonFiniteLossError("loss is not finite", loss.item())
        named = self.trainable_named()
        grads = torch.autograd.grad(
            loss, [t for _, t in named], allow_unused=True, retain_graph=False
        )
        out = ParameterSet()
        for (name, tensor), g in zip(named, grads):
            arr = (
                np.zeros(tuple(tensor.shape), dtype=np.float32)
                if g is None
                else g.detach().to(torch.float32).cpu().numpy()
            )
            out.add(name, arr)
        return out

    def input_gradient(
        self,
        x: torch.Tensor,
        mode: str = "eval",
        dropout_gen: torch.Generator | None = None,
        create_graph: bool = False,
    ) -> torch.Tensor:
        """Per-sample gradient of a scalar-per-sample output w.r.t. its input.

        With create_graph=True the result can be differentiated again with
        respect to parameters (double backpropagation).
        """
        if not x.requires_grad:
            x = x.detach().clone().requires_grad_(True)
        out = self.forward(x, mode=mode, dropout_gen=dropout_gen)
        per_sample = out.reshape(out.shape[0], -1)
        if per_sample.shape[1] != 1:
            raise ShapeError(
                f"input_gradient needs a scalar output per sample, got shape {tuple(out.shape)}"
            )
        (grad,) = torch.autograd.grad(per_sample.sum(), x, create_graph=create_graph)
        return grad
