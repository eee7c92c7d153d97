"""One constructor per studied model: coefficients, stopping semantics, and
closed-form reference solutions where they exist.

Model catalog (tags):

* ``ReflectedBM`` -- Brownian motion on an interval with reflection at both
  ends, realized by folding a free Brownian path.
* ``CircleProcess`` -- the planar image (cos, sin) of reflected Brownian
  motion on [-pi, pi]; Markov on the circle minus the gluing point but not
  strong Markov.
* ``PassThroughCircle`` -- the one-way variant: reflected when arriving from
  the upper half-plane, passing through when arriving from the lower one.
* ``PenalizedSDE`` -- dX = sigma dB + b dt - phi_n' dt with a rescaled bump
  penalty concentrating at the origin.
* ``DegenerateIndicator`` -- dX = 1{X != 0} dB, the branching SDE with two
  explicit global solutions (full and stopped-at-zero).
* ``SqrtCappedApprox`` -- dX = (sqrt|X|/eps ^ 1) dB, pathwise-unique family
  whose small-eps limit is the stopped branch.
* ``NoisePerturbApprox`` -- dY = 1{Y != 0} dB + eps dB~, pathwise-unique
  family whose small-eps limit is the full branch.
* ``PathDependent`` -- dX = (1{X != 0} + 1{int_0^t |X| ds < 1}) dB; the two
  indicators add, so the diffusion takes values in {0, 1, 2}.
* ``TwoDimPathDependent`` -- the Markovian lift (X, Y) with dY = |X| dt.
* ``ShiftedSystem`` / ``ShiftedSystemApprox`` -- the two-component
  decompositions whose sum solves the degenerate-indicator SDE, with the
  regime frozen by the initial first component.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .core import SamplePath, SeedSpec, TimeGrid, brownian_path, derive_stream, stream_generators
from .scale_oracle import BumpSpec, canonical_bump
from .solvers import (
    CoefficientField,
    StopRule,
    euler_maruyama,
    euler_maruyama_from_increments,
    fold_reflect,
    passthrough_circle,
    step_passthrough_angle,
)

__all__ = [
    "MODEL_TAGS",
    "ModelSpec",
    "BuiltModel",
    "build_model",
    "simulate",
    "simulate_batch",
    "reference_solutions",
    "shifted_solve",
    "CoupledSolver",
    "coupled_em_solver",
    "full_reference_solver",
    "stopped_reference_solver",
]

MODEL_TAGS = frozenset(
    {
        "ReflectedBM",
        "CircleProcess",
        "PassThroughCircle",
        "PenalizedSDE",
        "DegenerateIndicator",
        "SqrtCappedApprox",
        "NoisePerturbApprox",
        "PathDependent",
        "TwoDimPathDependent",
        "ShiftedSystem",
        "ShiftedSystemApprox",
    }
)

_EM_TAGS = frozenset(
    {
        "PenalizedSDE",
        "DegenerateIndicator",
        "SqrtCappedApprox",
        "NoisePerturbApprox",
        "PathDependent",
        "TwoDimPathDependent",
        "ShiftedSystemApprox",
    }
)


@dataclass(frozen=True)
class ModelSpec:
    """Tagged description of one model with all its parameters.

    ``drift`` and ``sigma`` are numpy-vectorized callables (None means 0 and
    1 respectively) and apply to the penalized family; ``bump`` adds the
    -phi_n' penalty.  ``eps`` parametrizes the approximating families.
    ``y0`` is the initial pair of the shifted systems, whose first component
    freezes the regime |y1| > 1 versus |y1| <= 1.
    """

    tag: str
    x0: float = 0.0
    interval: tuple[float, float] = (-np.pi, np.pi)
    drift: Optional[Callable] = None
    sigma: Optional[Callable] = None
    bump: Optional[BumpSpec] = None
    eps: Optional[float] = None
    y0: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.tag not in MODEL_TAGS:
            raise ValueError(f"unknown model tag {self.tag!r}; known: {sorted(MODEL_TAGS)}")
        if self.tag in ("SqrtCappedApprox", "NoisePerturbApprox", "ShiftedSystemApprox"):
            if self.eps is None or not self.eps > 0.0:
                raise ValueError(f"{self.tag} requires eps > 0, got eps={self.eps}")
        if self.tag in ("ShiftedSystem", "ShiftedSystemApprox"):
            if self.y0 is None or len(self.y0) != 2:
                raise ValueError(f"{self.tag} requires the initial pair y0=(y1, y2)")
        if self.tag == "ReflectedBM" or self.tag == "CircleProcess":
            a, b = self.interval
            if not a < b:
                raise ValueError(f"interval must satisfy a < b, got {self.interval}")


def penalized_spec(b: float = 0.0, sigma: float = 1.0, n: int | None = None, x0: float = 0.0) -> ModelSpec:
    """Penalized model with constant drift/diffusion and the canonical bump."""
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    drift = None if b == 0.0 else (lambda z, _b=float(b): np.full_like(np.asarray(z, dtype=float), _b))
    sig = None if sigma == 1.0 else (lambda z, _s=float(sigma): np.full_like(np.asarray(z, dtype=float), _s))
    bump = canonical_bump(n) if n is not None else None
    return ModelSpec("PenalizedSDE", x0=x0, drift=drift, sigma=sig, bump=bump)


@dataclass(frozen=True)
class BuiltModel:
    """Evaluators plus stopping semantics produced by :func:`build_model`.

    ``absorb_at_zero`` marks models whose exact solution can never cross the
    origin (the diffusion degenerates fast enough there that zero is an
    absorbing trap); their simulators freeze a path at exactly 0 from the
    first node with a sign change, since a discrete chain would otherwise
    tunnel through the origin on any feasible step size.
    """

    spec: ModelSpec
    field: Optional[CoefficientField]
    stop: Optional[StopRule]
    dim: int
    n_drivers: int
    x0: object
    absorb_at_zero: bool = False


def _freeze_at_zero(states: np.ndarray, x0: float) -> np.ndarray:
    """Set states to exactly 0 from the first node with a sign change on.

    Operates in place on a (n+1,) or (p, n+1) state array started at x0.
    """
    flat = states.ndim == 1
    mat = states[None, :] if flat else states
    if x0 == 0.0:
        mat[:] = 0.0
        return states
    sign0 = np.sign(x0)
    crossed = (np.sign(mat) != sign0) | (mat == 0.0)
    has_hit = crossed.any(axis=1)
    first = np.argmax(crossed, axis=1)
    node_idx = np.arange(mat.shape[1])
    mat[has_hit[:, None] & (node_idx[None, :] >= first[:, None])] = 0.0
    return states


def _indicator_nonzero(x):
    return (np.asarray(x) != 0.0).astype(float)


def _vectorized(fn):
    """Use fn directly when it maps arrays to arrays, else wrap it elementwise."""
    probe = np.array([0.0, 0.3])
    try:
        out = np.asarray(fn(probe))
        if out.shape == probe.shape:
            return fn
    except Exception:
        pass
    return np.vectorize(fn, otypes=[float])


def build_model(spec: ModelSpec) -> BuiltModel:
    """Bind a ModelSpec to concrete coefficient evaluators.

    Fold-based models (ReflectedBM, CircleProcess, PassThroughCircle) and the
    exact ShiftedSystem have no Euler-Maruyama field; use :func:`simulate` or
    :func:`shifted_solve` for those.
    """
    tag = spec.tag

    if tag == "PenalizedSDE":
        b, sig, bump = spec.drift, spec.sigma, spec.bump
        if bump is not None:
            bump.validate()
            dphi_n = _vectorized(bump.dphi_n)
            if b is None:
                drift = lambda t, x, aux: -dphi_n(x)
            else:
                drift = lambda t, x, aux: b(x) - dphi_n(x)
        else:
            drift = None if b is None else (lambda t, x, aux: b(x))
        diffusion = (lambda t, x, aux: np.ones_like(x)) if sig is None else (lambda t, x, aux: sig(x))
        fld = CoefficientField(diffusion=diffusion, drift=drift)
        return BuiltModel(spec, fld, None, 1, 1, spec.x0)

    if tag == "DegenerateIndicator":
        fld = CoefficientField(diffusion=lambda t, x, aux: _indicator_nonzero(x))
        # zero is the branch point: the stopped solution freezes there
        return BuiltModel(spec, fld, StopRule("level", level=0.0), 1, 1, spec.x0)

    if tag == "SqrtCappedApprox":
        eps = spec.eps
        fld = CoefficientField(
            diffusion=lambda t, x, aux: np.minimum(np.sqrt(np.abs(x)) / eps, 1.0)
        )
        # sqrt(|x|)/eps fails the crossing integral test at 0, so the exact
        # solution is trapped there; the simulator must enforce that.
        return BuiltModel(spec, fld, None, 1, 1, spec.x0, absorb_at_zero=True)

    if tag == "NoisePerturbApprox":
        eps = spec.eps
        fld = CoefficientField(
            diffusion=lambda t, x, aux: (_indicator_nonzero(x), np.full_like(x, eps)),
            n_drivers=2,
        )
        return BuiltModel(spec, fld, None, 1, 2, spec.x0)

    if tag == "PathDependent":
        fld = CoefficientField(
            diffusion=lambda t, x, aux: _indicator_nonzero(x) + (aux < 1.0).astype(float),
            aux_rate=lambda t, x: np.abs(x),
        )
        return BuiltModel(spec, fld, StopRule("aux", threshold=1.0), 1, 1, spec.x0)

    if tag == "TwoDimPathDependent":

        def drift2(t, x, aux):
            out = np.zeros_like(x)
            out[:, 1] = np.abs(x[:, 0])
            return out

        def diffusion2(t, x, aux):
            out = np.zeros_like(x)
            y = x[:, 1]
            out[:, 0] = _indicator_nonzero(x[:, 0]) + ((y >= 0.0) & (y < 1.0)).astype(float)
            return out

        fld = CoefficientField(diffusion=diffusion2, drift=drift2, dim=2)
        return BuiltModel(spec, fld, None, 2, 1, (spec.x0, 0.0))

    if tag == "ShiftedSystemApprox":
        eps = spec.eps
        y1, y2 = spec.y0
        upper_regime = abs(y1) > 1.0  # frozen at construction

        def drv1(t, x, aux):
            s = x[:, 0] + x[:, 1]
            out = np.zeros_like(x)
            if upper_regime:
                out[:, 0] = np.minimum(np.sqrt(np.abs(s)) / eps, 1.0)
            else:
                out[:, 1] = _indicator_nonzero(s)
            return out

        def drv2(t, x, aux):
            out = np.zeros_like(x)
            out[:, 1] = eps
            return out

        fld = CoefficientField(diffusion=lambda t, x, aux: (drv1(t, x, aux), drv2(t, x, aux)), dim=2, n_drivers=2)
        return BuiltModel(spec, fld, None, 2, 2, (y1, y2))

    if tag in ("ReflectedBM", "CircleProcess", "PassThroughCircle", "ShiftedSystem"):
        dim = 1 if tag == "ReflectedBM" else 2
        return BuiltModel(spec, None, None, dim, 1, spec.x0)

    raise ValueError(f"unknown model tag {tag!r}")


def simulate(spec: ModelSpec, grid: TimeGrid, seed: SeedSpec) -> SamplePath:
    """Simulate one path of any single-output model."""
    tag = spec.tag
    if tag == "ReflectedBM":
        a, b = spec.interval
        free = spec.x0 + brownian_path(grid, derive_stream(seed)).states
        return SamplePath(grid, fold_reflect(free, a, b))
    if tag == "CircleProcess":
        free = spec.x0 + brownian_path(grid, derive_stream(seed)).states
        theta = fold_reflect(free, -np.pi, np.pi)
        return SamplePath(grid, np.column_stack([np.cos(theta), np.sin(theta)]))
    if tag == "PassThroughCircle":
        return passthrough_circle(grid, spec.x0, seed)
    if tag == "ShiftedSystem":
        raise ValueError("ShiftedSystem produces a component pair; use shifted_solve")
    built = build_model(spec)
    path = euler_maruyama(built.field, built.x0, grid, seed)
    if built.absorb_at_zero:
        _freeze_at_zero(path.states, built.x0)
    return path


def simulate_batch(
    spec: ModelSpec, grid: TimeGrid, master_seed: int, start: int, count: int
) -> tuple[np.ndarray, np.ndarray | None]:
    """States (and aux) for paths with stream ids start .. start + count - 1.

    Returns states shaped (count, n+1) or (count, n+1, 2); each row is
    bit-identical to the single-path :func:`simulate` for the same stream.
    """
    gens = stream_generators(master_seed, start, count)
    n = grid.n_steps
    root_dt = np.sqrt(grid.dt)
    tag = spec.tag
    if tag in ("ReflectedBM", "CircleProcess"):
        incs = np.stack([g.standard_normal(n) for g in gens]) * root_dt
        free = spec.x0 + np.concatenate([np.zeros((count, 1)), np.cumsum(incs, axis=1)], axis=1)
        a, b = spec.interval if tag == "ReflectedBM" else (-np.pi, np.pi)
        folded = fold_reflect(free, a, b)
        if tag == "ReflectedBM":
            return folded, None
        return np.stack([np.cos(folded), np.sin(folded)], axis=-1), None
    if tag == "PassThroughCircle":
        incs = np.stack([g.standard_normal(n) for g in gens]) * root_dt
        theta = np.empty((count, n + 1))
        theta[:, 0] = spec.x0
        for k in range(n):
            theta[:, k + 1], _ = step_passthrough_angle(theta[:, k], incs[:, k])
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1), None
    if tag not in _EM_TAGS:
        raise ValueError(f"model {tag!r} has no batch simulator")
    built = build_model(spec)
    dW = np.stack([g.standard_normal((n, built.n_drivers)) for g in gens]) * root_dt
    states, aux = euler_maruyama_from_increments(built.field, built.x0, grid, dW)
    if built.absorb_at_zero:
        _freeze_at_zero(states, built.x0)
    return states, aux


def reference_solutions(xi: float, driver: SamplePath) -> tuple[SamplePath, SamplePath]:
    """The two explicit branches of the degenerate-indicator SDE.

    ``full`` is xi plus the driving path node-for-node; ``stopped`` coincides
    with it strictly before the first node at which the full path reaches 0
    and is exactly 0 from that node on (detection at grid resolution).
    """
    if driver.dim != 1:
        raise ValueError("reference solutions need a scalar driving path")
    full_states = xi + driver.states
    stopped_states = full_states.copy()
    if xi == 0.0:
        stopped_states[:] = 0.0
    else:
        sign0 = np.sign(xi)
        hits = np.flatnonzero((np.sign(full_states) != sign0) | (full_states == 0.0))
        if hits.size:
            stopped_states[hits[0]:] = 0.0
    grid = driver.grid
    return SamplePath(grid, full_states), SamplePath(grid, stopped_states)


def shifted_solve(
    y1: float,
    y2: float,
    grid: TimeGrid,
    seed: SeedSpec,
    variant: str = "exact",
    eps: float | None = None,
) -> tuple[SamplePath, SamplePath]:
    """Solve the two-component shifted system from the initial pair (y1, y2).

    Exact variant (closed form): with |y1| > 1 the first component is
    y1 + B stopped when the component sum first reaches 0 and the second is
    constant; with |y1| <= 1 the first is constant and the second is y2 + B.
    Approx variant: Euler-Maruyama for the eps-regularized system with two
    independent drivers and the regime frozen at the initial condition.
    """
    if variant == "approx":
        if eps is None or not eps > 0.0:
            raise ValueError("approx variant requires eps > 0")
        spec = ModelSpec("ShiftedSystemApprox", eps=eps, y0=(y1, y2))
        built = build_model(spec)
        path = euler_maruyama(built.field, built.x0, grid, seed)
        return (
            SamplePath(grid, path.states[:, 0]),
            SamplePath(grid, path.states[:, 1]),
        )
    if variant != "exact":
        raise ValueError(f"unknown variant {variant!r}; expected 'exact' or 'approx'")

    driver = brownian_path(grid, derive_stream(seed))
    n_nodes = grid.n_steps + 1
    if abs(y1) > 1.0:
        first = y1 + driver.states
        total0 = y1 + y2
        total = total0 + driver.states
        if total0 == 0.0:
            first[:] = y1
        else:
            hits = np.flatnonzero((np.sign(total) != np.sign(total0)) | (total == 0.0))
            if hits.size:
                first[hits[0]:] = first[hits[0]]
        second = np.full(n_nodes, y2)
    else:
        first = np.full(n_nodes, y1)
        second = y2 + driver.states
    return SamplePath(grid, first), SamplePath(grid, second)


@dataclass(frozen=True)
class CoupledSolver:
    """A solver driven by externally supplied increments, for coupled runs.

    ``run(grid, dW)`` maps increments of shape (p, n_steps, m) to a state
    matrix of shape (p, n_steps + 1).  ``n_drivers = None`` means the solver
    only reads the first driver column and accepts any m.
    """

    n_drivers: Optional[int]
    run: Callable[[TimeGrid, np.ndarray], np.ndarray]
    label: str = ""


def coupled_em_solver(spec: ModelSpec) -> CoupledSolver:
    """Wrap a scalar Euler-Maruyama model for use in coupled comparisons."""
    built = build_model(spec)
    if built.field is None or built.dim != 1:
        raise ValueError(f"model {spec.tag!r} is not a scalar Euler-Maruyama model")

    def run(grid, dW):
        states, _ = euler_maruyama_from_increments(built.field, built.x0, grid, dW)
        if built.absorb_at_zero:
            _freeze_at_zero(states, built.x0)
        return states

    return CoupledSolver(built.n_drivers, run, spec.tag)


def full_reference_solver(xi: float) -> CoupledSolver:
    """The unstopped branch xi + B as a coupled solver (driver 1 only)."""

    def run(grid, dW):
        p = dW.shape[0]
        states = np.empty((p, grid.n_steps + 1))
        states[:, 0] = xi
        np.cumsum(dW[:, :, 0], axis=1, out=states[:, 1:])
        states[:, 1:] += xi
        return states

    return CoupledSolver(None, run, "full-reference")


def stopped_reference_solver(xi: float) -> CoupledSolver:
    """The branch xi + B frozen at 0 from its first zero node on."""
    base = full_reference_solver(xi)

    def run(grid, dW):
        states = base.run(grid, dW)
        if xi == 0.0:
            states[:] = 0.0
            return states
        sign0 = np.sign(xi)
        crossed = (np.sign(states) != sign0) | (states == 0.0)
        has_hit = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1)
        n_nodes = states.shape[1]
        node_idx = np.arange(n_nodes)
        freeze = has_hit[:, None] & (node_idx[None, :] >= first[:, None])
        states[freeze] = 0.0
        return states

    return CoupledSolver(None, run, "stopped-reference")
