"""Evolutionary spiking neuron (LIF with hard reset) and its surrogate gradient.

Forward per time step::

    M = tau * U_prev + I
    S = H(M - u_th)              (H(0) = 1)
    U = u_reset * S + M * (1 - S)

Backward replaces dS/dM with the derivative of
``phi(x) = 0.5 * tanh(K (x - u_th)) + 0.5`` where the steepness K follows an
epoch schedule. The reset multiplication is treated as detached, so the only
path into ``U_prev`` is the leak ``tau * (1 - S)``.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, make_op, ops
from .errors import ArgumentError, StateError, ValidationError
from .nn import Module

SHORTCUTS = ("ms", "vs", "sew")


@dataclass
class NeuronConfig:
    tau: float = 0.25
    u_th: float = 1.0
    u_reset: float = 0.0
    time_steps: int = 1
    k_min: float = 1.0
    k_max: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ArgumentError(f"tau must lie in [0, 1], got {self.tau}")
        if self.u_th <= self.u_reset:
            raise ArgumentError("u_th must exceed u_reset")
        if self.time_steps < 1:
            raise ArgumentError("time_steps must be >= 1")
        if not 0 < self.k_min <= self.k_max:
            raise ArgumentError("need 0 < k_min <= k_max")


@dataclass
class Surrogate:
    """Mutable surrogate settings shared by every neuron of a network.

    ``smooth=True`` swaps the Heaviside forward for phi itself, giving a fully
    differentiable model used for gradient checking.
    """
    k: float = 1.0
    smooth: bool = False


def evaf_value(x, k: float, u_th: float):
    if k <= 0:
        raise ArgumentError("surrogate steepness K must be positive")
    return 0.5 * np.tanh(k * (np.asarray(x) - u_th)) + 0.5


def evaf_grad(x, k: float, u_th: float):
    t = np.tanh(k * (np.asarray(x) - u_th))
    return 0.5 * k * (1.0 - t * t)


def evaf_k(i: int, n: int, k_min: float = 1.0, k_max: float = 10.0) -> float:
    """Surrogate steepness for epoch ``i`` of ``n``: log ramp from k_min toward k_max."""
    if n < 1 or not 0 <= i <= n - 1:
        raise ArgumentError(f"epoch index {i} outside [0, {n - 1}]")
    r = 10.0 ** (i / n)
    return ((r - 1.0) * k_max + (10.0 - r) * k_min) / 9.0


@dataclass
class NeuronState:
    u: np.ndarray
    s: np.ndarray


def esn_forward(current: np.ndarray, state: NeuronState | None, cfg: NeuronConfig):
    """One step on raw arrays. Returns (spikes, new_state, pre-spike potential M)."""
    u_prev = np.zeros_like(current) if state is None else state.u
    if u_prev.shape != current.shape:
        raise ArgumentError(f"input shape {current.shape} does not match state {u_prev.shape}")
    m = cfg.tau * u_prev + current
    s = (m >= cfg.u_th).astype(current.dtype)
    u = cfg.u_reset * s + m * (1.0 - s)
    return s, NeuronState(u=u, s=s), m


def esn_backward(grad_spikes, grad_u, m, s, cfg: NeuronConfig, k: float):
    """Gradients w.r.t. (input current, previous membrane) for one step.

    ``grad_u`` is the gradient arriving from the next time step (zeros at the
    last step). ``s`` enters only through the detached reset factor.
    """
    if m is None:
        raise StateError("esn_backward needs the saved pre-spike potential from forward")
    g_m = grad_spikes * evaf_grad(m, k, cfg.u_th)
    if grad_u is not None:
        g_m = g_m + grad_u * (1.0 - s)
    g_m = g_m.astype(m.dtype, copy=False)
    return g_m, cfg.tau * g_m


def _binary(a: np.ndarray) -> bool:
    return bool(np.all((a == 0) | (a == 1)))


def shortcut(kind: str, trunk: Tensor, residual: Tensor) -> Tensor:
    """Residual fusion.

    ms:  membrane + membrane
    vs:  trunk membrane + residual spikes
    sew: trunk spikes + residual spikes (values in {0, 1, 2})
    """
    if trunk.shape != residual.shape:
        raise ArgumentError(f"shortcut shape mismatch {trunk.shape} vs {residual.shape}")
    if kind == "ms":
        return ops.add(trunk, residual)
    if kind == "vs":
        if not _binary(residual.data):
            raise ValidationError("vanilla shortcut expects a binary spike residual")
        return ops.add(trunk, residual)
    if kind == "sew":
        if not (_binary(trunk.data) and _binary(residual.data)):
            raise ValidationError("SEW shortcut expects binary spikes on both inputs")
        return ops.add(trunk, residual)
    raise ValidationError(f"unknown shortcut kind {kind!r}; expected one of {SHORTCUTS}")


_capture = threading.local()


class SpikeCapture:
    """Context manager collecting (name, spike array) for every neuron that fires inside it."""

    def __init__(self):
        self.outputs: list[tuple[str, np.ndarray]] = []

    def __enter__(self):
        _capture.active = self
        return self

    def __exit__(self, *exc):
        _capture.active = None


class ESN(Module):
    """Spiking neuron layer; keeps its membrane across the time steps of one sample."""

    def __init__(self, cfg: NeuronConfig, surrogate: Surrogate):
        super().__init__()
        self.cfg = cfg
        self.surrogate = surrogate
        self.u: Tensor | None = None
        self.fired = 0
        self.seen = 0

    def reset_state(self) -> None:
        self.u = None
        self.fired = 0
        self.seen = 0

    @property
    def rate(self) -> float:
        return self.fired / self.seen if self.seen else 0.0

    def forward(self, current: Tensor) -> Tensor:
        cfg = self.cfg
        if self.u is not None and self.u.shape != current.shape:
            raise ArgumentError(f"{self.qualname}: input {current.shape} does not match state {self.u.shape}")
        if self.surrogate.smooth:
            s, u = self._smooth(current)
        else:
            s, u = self._hard(current)
        self.u = u
        self.fired += int(np.count_nonzero(s.data))
        self.seen += s.size
        cap = getattr(_capture, "active", None)
        if cap is not None:
            cap.outputs.append((self.qualname, s.data))
        return s

    def _hard(self, current: Tensor):
        cfg, k = self.cfg, self.surrogate.k
        keep_state = cfg.time_steps > 1
        u_prev = self.u
        m = current.data if u_prev is None else cfg.tau * u_prev.data + current.data
        s = (m >= cfg.u_th).astype(current.dtype)
        if not keep_state:
            def bwd_single(g):
                return (esn_backward(g[0], None, m, s, cfg, k)[0],)
            return make_op(s, [current], bwd_single), None
        u = cfg.u_reset * s + m * (1.0 - s)
        inputs = [current] if u_prev is None else [current, u_prev]

        def bwd(g):
            g_in, g_prev = esn_backward(g[0], g[1], m, s, cfg, k)
            return (g_in,) if u_prev is None else (g_in, g_prev)

        return make_op((s, u), inputs, bwd)

    def _smooth(self, current: Tensor):
        cfg, k = self.cfg, self.surrogate.k
        m = current if self.u is None else ops.add(ops.scale(self.u, cfg.tau), current)
        s = ops.add_scalar(ops.scale(ops.tanh(ops.scale(ops.add_scalar(m, -cfg.u_th), k)), 0.5), 0.5)
        if cfg.time_steps == 1:
            return s, None
        sd = s.data
        u = ops.add(ops.mul(m, Tensor(1.0 - sd)), Tensor(cfg.u_reset * sd))
        return s, u
