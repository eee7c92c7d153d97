"""Euler-Maruyama integration, reflection folding, and first-passage detection.

Coefficient evaluators are plain callables vectorized over numpy arrays, so a
single stepping kernel serves both single-path simulation and the batched
Monte Carlo engines in :mod:`sdelab.stats`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import SamplePath, SeedSpec, TimeGrid, derive_stream

__all__ = [
    "CoefficientField",
    "HitResult",
    "StopRule",
    "SimulationError",
    "euler_maruyama",
    "euler_maruyama_from_increments",
    "fold_reflect",
    "first_hit",
    "solve_stopped",
    "passthrough_circle",
]


class SimulationError(RuntimeError):
    """Raised when a simulated state leaves the finite floats."""


@dataclass(frozen=True)
class CoefficientField:
    """Drift/diffusion evaluators plus an optional running-functional channel.

    Conventions (``p`` = batch size, ``d`` = state dimension):

    * states are arrays of shape ``(p,)`` for ``dim == 1`` and ``(p, d)`` for
      ``dim == 2``;
    * ``drift(t, x, aux)`` returns an array shaped like ``x`` (or ``None``
      field for zero drift);
    * ``diffusion(t, x, aux)`` returns an array shaped like ``x`` when
      ``n_drivers == 1``, otherwise a tuple with one such array per driver
      (diagonal per driving noise);
    * ``aux_rate(t, x)`` returns the per-time increment rate of the running
      functional, shape ``(p,)``; the functional starts at 0 and is
      accumulated with the left-endpoint rule.

    All evaluators must be total and finite on the reachable state space and
    accept numpy arrays.
    """

    diffusion: Callable
    drift: Optional[Callable] = None
    aux_rate: Optional[Callable] = None
    n_drivers: int = 1
    dim: int = 1

    def __post_init__(self):
        if self.n_drivers not in (1, 2):
            raise ValueError(f"n_drivers must be 1 or 2, got {self.n_drivers}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")


@dataclass
class HitResult:
    """First-passage record; ``hit=False`` means censored at the horizon."""

    hit: bool
    tau: float
    grid_index: int
    approach_side: int
    method: str  # "grid" | "linear-interp" | "bridge"


@dataclass(frozen=True)
class StopRule:
    """Stopping rule for :func:`solve_stopped`.

    kind:
      * ``"level"`` -- first node where the scalar state reaches ``level``
        (sign change or equality, at grid resolution);
      * ``"sum_level"`` -- same, applied to ``states @ weights``;
      * ``"aux"`` -- first node where the aux channel is >= ``threshold``.
    """

    kind: str
    level: float = 0.0
    weights: tuple = (1.0, 1.0)
    threshold: float = 1.0

    def __post_init__(self):
        if self.kind not in ("level", "sum_level", "aux"):
            raise ValueError(f"unknown stop rule kind {self.kind!r}")


def _as_driver_tuple(value, n_drivers):
    if isinstance(value, tuple):
        if len(value) != n_drivers:
            raise ValueError(f"diffusion returned {len(value)} drivers, field declares {n_drivers}")
        return value
    if n_drivers != 1:
        raise ValueError("multi-driver field must return a tuple of per-driver diffusions")
    return (value,)


def euler_maruyama_from_increments(
    field: CoefficientField,
    x0,
    grid: TimeGrid,
    dW: np.ndarray,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Explicit Euler-Maruyama stepping from pre-drawn Brownian increments.

    ``dW`` has shape ``(p, n_steps, n_drivers)`` (a leading batch axis may be
    omitted for a single path) and already carries the sqrt(dt) scaling.
    Returns ``(states, aux)`` with states shaped ``(p, n_steps + 1)`` or
    ``(p, n_steps + 1, 2)``.
    """
    dW = np.asarray(dW, dtype=float)
    if dW.ndim == 2:
        dW = dW[None]
    p, n, m = dW.shape
    if n != grid.n_steps:
        raise ValueError(f"increments have {n} steps, grid wants {grid.n_steps}")
    if m != field.n_drivers:
        raise ValueError(f"increments carry {m} drivers, field wants {field.n_drivers}")

    dt = grid.dt
    if field.dim == 1:
        x = np.broadcast_to(np.asarray(x0, dtype=float), (p,)).copy()
        states = np.empty((p, n + 1))
    else:
        x = np.broadcast_to(np.asarray(x0, dtype=float), (p, 2)).copy()
        states = np.empty((p, n + 1, 2))
    states[:, 0] = x
    aux = np.zeros(p)
    aux_out = np.empty((p, n + 1)) if field.aux_rate is not None else None
    if aux_out is not None:
        aux_out[:, 0] = 0.0

    for k in range(n):
        t = grid.t_start + k * dt
        x_new = x
        if field.drift is not None:
            x_new = x_new + field.drift(t, x, aux) * dt
        sigmas = _as_driver_tuple(field.diffusion(t, x, aux), m)
        for j, g in enumerate(sigmas):
            inc = dW[:, k, j]
            if field.dim == 2:
                inc = inc[:, None]
            x_new = x_new + g * inc
        if not np.isfinite(x_new).all():
            finite_by_path = np.isfinite(x_new.reshape(p, -1)).all(axis=1)
            bad = int(np.flatnonzero(~finite_by_path)[0])
            raise SimulationError(
                f"non-finite state at step {k + 1} (t={t + dt:.6g}), path {bad}, "
                f"previous state {np.atleast_1d(x)[bad]}"
            )
        if field.aux_rate is not None:
            aux = aux + field.aux_rate(t, x) * dt
            aux_out[:, k + 1] = aux
        x = x_new
        states[:, k + 1] = x
    return states, aux_out


def euler_maruyama(field: CoefficientField, x0, grid: TimeGrid, seed: SeedSpec) -> SamplePath:
    """Single-path Euler-Maruyama run with the path's own random stream.

    For a one-driver field this consumes the generator exactly like
    :func:`sdelab.core.brownian_path`, so fields with unit diffusion couple
    node-for-node to the raw Brownian path of the same seed.
    """
    gen = derive_stream(seed)
    dW = gen.standard_normal((grid.n_steps, field.n_drivers)) * np.sqrt(grid.dt)
    states, aux = euler_maruyama_from_increments(field, x0, grid, dW)
    return SamplePath(grid, states[0], aux[0] if aux is not None else None)


def fold_reflect(y, a: float, b: float):
    """Fold the real line into [a, b] by repeated reflection at both ends.

    With L = b - a and m = (y - a) mod 2L the image is a + m for m <= L and
    a + 2L - m otherwise.  Idempotent on [a, b]; accepts scalars or arrays.
    """
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    length = b - a
    m = np.mod(np.asarray(y, dtype=float) - a, 2.0 * length)
    out = np.where(m <= length, a + m, a + 2.0 * length - m)
    return float(out) if out.ndim == 0 else out


def _first_sign_change(d: np.ndarray) -> int | None:
    """Index k of the first step [k, k+1] with a sign change or zero at k+1."""
    crossing = (d[:-1] * d[1:] < 0.0) | (d[1:] == 0.0)
    idx = np.flatnonzero(crossing)
    return int(idx[0]) if idx.size else None


def first_hit(
    path: SamplePath,
    level: float,
    bridge: bool = False,
    gen: np.random.Generator | None = None,
    sigma=None,
) -> HitResult:
    """First passage of a scalar path at ``level``.

    Grid detection scans for the first sign change of (state - level) or an
    exact equality; tau is refined by linear interpolation within the step.
    With ``bridge=True``, steps before the first grid crossing additionally
    sample a between-node crossing with the Brownian-bridge probability
    exp(-2 (level - x_k)(level - x_{k+1}) / (sigma_k^2 dt)), where sigma_k is
    the local diffusion value at the left node (scalar or per-step array).
    """
    if path.dim != 1:
        raise ValueError("first_hit requires a 1-D path")
    if bridge and gen is None:
        raise ValueError("bridge sampling requires a generator")
    if bridge and sigma is None:
        raise ValueError("bridge sampling requires the local diffusion value(s)")

    grid = path.grid
    d = path.states - level
    n = grid.n_steps

    if d[0] == 0.0:
        nonzero = np.flatnonzero(d)
        side = int(np.sign(d[nonzero[0]])) if nonzero.size else 1
        return HitResult(True, grid.t_start, 0, side, "grid")

    k_grid = _first_sign_change(d)

    if bridge:
        stop = k_grid if k_grid is not None else n
        if stop > 0:
            sig = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))[:stop]
            with np.errstate(divide="ignore", over="ignore"):
                var = sig * sig * grid.dt
                p_cross = np.where(var > 0.0, np.exp(-2.0 * d[:stop] * d[1 : stop + 1] / var), 0.0)
            u = gen.random(stop)
            sampled = np.flatnonzero(u < p_cross)
            if sampled.size:
                k = int(sampled[0])
                tau = grid.t_start + (k + 0.5) * grid.dt
                return HitResult(True, tau, k, int(np.sign(d[k])), "bridge")

    if k_grid is None:
        return HitResult(False, grid.t_end, n, int(np.sign(d[-1])), "grid")

    k = k_grid
    tau = grid.t_start + grid.dt * (k + d[k] / (d[k] - d[k + 1]))
    return HitResult(True, float(tau), k, int(np.sign(d[k])), "linear-interp")


def _stop_index(states: np.ndarray, aux: np.ndarray | None, rule: StopRule) -> int | None:
    if rule.kind == "aux":
        if aux is None:
            raise ValueError("aux stop rule on a field without an aux channel")
        idx = np.flatnonzero(aux >= rule.threshold)
        return int(idx[0]) if idx.size else None
    if rule.kind == "sum_level":
        scalar = states @ np.asarray(rule.weights, dtype=float)
    else:
        if states.ndim != 1:
            raise ValueError("level stop rule requires a scalar state")
        scalar = states
    d = scalar - rule.level
    if d[0] == 0.0:
        return 0
    crossed = np.flatnonzero((np.sign(d) != np.sign(d[0])) | (d == 0.0))
    return int(crossed[0]) if crossed.size else None


def solve_stopped(
    field: CoefficientField,
    x0,
    grid: TimeGrid,
    seed: SeedSpec,
    stop: StopRule,
) -> SamplePath:
    """Euler-Maruyama path frozen at the first node satisfying ``stop``.

    Nodes before the detected stopping index coincide exactly with the
    unstopped solution for the same seed; afterwards the state is held
    constant (and the aux channel continues at the frozen state's rate).
    """
    path = euler_maruyama(field, x0, grid, seed)
    k = _stop_index(path.states, path.aux, stop)
    if k is None:
        return path
    states = path.states.copy()
    states[k:] = states[k]
    aux = None
    if path.aux is not None:
        aux = path.aux.copy()
        rate = float(field.aux_rate(grid.t_start + k * grid.dt, np.atleast_1d(states[k]))[0])
        aux[k:] = aux[k] + rate * grid.dt * np.arange(grid.n_steps + 1 - k)
    return SamplePath(grid, states, aux)


def step_passthrough_angle(theta, dw, copy_start: float = np.pi):
    """One step of the pass-through angle dynamics (vectorized over paths).

    The angle reflects at +pi; reaching -pi traps the current excursion and a
    fresh copy starts at ``copy_start``.  With the default start at +pi the
    leftover part of the trapping increment continues from +pi downward,
    which keeps the planar coordinates continuous.  Returns (new_angle,
    trapped_mask).
    """
    v = np.asarray(theta, dtype=float) + np.asarray(dw, dtype=float)
    v = np.where(v > np.pi, 2.0 * np.pi - v, v)
    trapped = v <= -np.pi
    if copy_start == np.pi:
        v = np.where(trapped, v + 2.0 * np.pi, v)
    else:
        v = np.where(trapped, copy_start, v)
    return v, trapped


def passthrough_circle(
    grid: TimeGrid,
    x0: float,
    seed: SeedSpec,
    copy_start: float = np.pi,
) -> SamplePath:
    """Circle-valued process reflected at the angle +pi and trapped at -pi,
    restarted with independent copies at each trapping time.

    The output path is (cos theta, sin theta) per node; with the default
    ``copy_start = pi`` the planar path is continuous across restarts and
    every post-trap excursion enters the upper half-plane first.
    """
    if not -np.pi <= x0 <= np.pi:
        raise ValueError(f"x0 must lie in [-pi, pi], got {x0}")
    gen = derive_stream(seed)
    dw = gen.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
    theta = np.empty(grid.n_steps + 1)
    theta[0] = x0
    for k in range(grid.n_steps):
        theta[k + 1], _ = step_passthrough_angle(theta[k], dw[k], copy_start)
    states = np.column_stack([np.cos(theta), np.sin(theta)])
    return SamplePath(grid, states)
