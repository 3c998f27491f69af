"""Central finite-difference gradient oracle.

Everything here works in float64 with step h=1e-5 and is deliberately
independent of the autograd path it checks: losses are re-evaluated through
the public forward interface with parameters perturbed in place, one element
at a time.
"""

from __future__ import annotations

import numpy as np
import torch

from csilab.netcore import Network, ParameterSet

H_STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-10


def fd_param_gradients(net: Network, loss_fn, h: float = H_STEP) -> ParameterSet:
    """Elementwise central differences of loss_fn over every trainable tensor.

    loss_fn(net) must be a deterministic pure function of the current
    parameter values (re-seed any dropout generator inside it).
    """
    def _set(flat, idx, value):
        # in-place edit of a leaf parameter; the loss itself may still need autograd
        with torch.no_grad():
            flat[idx] = value

    out = ParameterSet()
    for name, tensor in net.trainable_named():
        flat = tensor.view(-1)
        grad = np.zeros(flat.shape[0], dtype=np.float64)
        for idx in range(flat.shape[0]):
            orig = flat[idx].item()
            _set(flat, idx, orig + h)
            up = loss_fn(net).detach().item()
            _set(flat, idx, orig - h)
            down = loss_fn(net).detach().item()
            _set(flat, idx, orig)
            grad[idx] = (up - down) / (2.0 * h)
        out.add(name, grad.reshape(tuple(tensor.shape)).astype(np.float64))
    return out


def fd_input_gradient(forward_fn, x: torch.Tensor, h: float = H_STEP) -> torch.Tensor:
    """Central differences of sum(forward_fn(x)) with respect to every input element."""
    x = x.detach().clone()
    flat = x.view(-1)
    grad = torch.zeros(flat.shape[0], dtype=torch.float64)
    with torch.no_grad():
        for idx in range(flat.shape[0]):
            orig = flat[idx].item()
            flat[idx] = orig + h
            up = float(forward_fn(x))
            flat[idx] = orig - h
            down = float(forward_fn(x))
            flat[idx] = orig
            grad[idx] = (up - down) / (2.0 * h)
    return grad.reshape(x.shape)


def max_rel_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Largest elementwise relative error, ignoring elements where both vanish."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(fd, dtype=np.float64)
    diff = np.abs(a - f)
    denom = np.maximum(np.abs(a), np.abs(f))
    rel = np.where(diff <= ABS_FLOOR, 0.0, diff / np.maximum(denom, 1e-300))
    return float(rel.max()) if rel.size else 0.0


def assert_grads_close(analytic: ParameterSet, fd: ParameterSet, label: str = "") -> float:
    """Assert elementwise relative error < REL_TOL for every tensor; return the worst."""
    assert analytic.names() == fd.names()
    worst = 0.0
    for name in analytic.names():
        err = max_rel_error(analytic[name], fd[name])
        assert err < REL_TOL, f"{label}{name}: rel err {err:.3e} >= {REL_TOL}"
        worst = max(worst, err)
    return worst
