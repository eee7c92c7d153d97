"""Deterministic random streams, time grids, Brownian increments, and path containers.

Every stochastic experiment in this package draws its randomness through
:func:`derive_stream`, which maps a ``(master_seed, stream_id)`` pair to a
counter-based Philox generator.  The mapping is a pure function, so any path
can be re-simulated in isolation and results never depend on how work is
partitioned across workers.

Gaussian variates come from numpy's ziggurat sampler.  Bit-identical output is
guaranteed only within one build of numpy; cross-platform checks should use
statistical tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TimeGrid",
    "SeedSpec",
    "SamplePath",
    "derive_stream",
    "stream_generators",
    "brownian_path",
]

_MAX_SEED = 2**64


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t_start, t_end] with n_steps steps (n_steps + 1 nodes)."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"t_end must exceed t_start, got [{self.t_start}, {self.t_end}]")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class SeedSpec:
    """Addressable random stream: one stream_id per sample path."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < _MAX_SEED:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.stream_id < 0:
            raise ValueError(f"stream_id must be non-negative, got {self.stream_id}")


@dataclass
class SamplePath:
    """Discretized trajectory on a uniform grid.

    ``states`` has shape (n_steps + 1,) for scalar processes and
    (n_steps + 1, 2) for planar ones.  ``aux`` optionally carries a running
    path functional (e.g. the integral of |X| over time) sampled at the same
    nodes.
    """

    grid: TimeGrid
    states: np.ndarray
    aux: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        n_nodes = self.grid.n_steps + 1
        if self.states.shape[0] != n_nodes:
            raise ValueError(f"states has {self.states.shape[0]} nodes, grid wants {n_nodes}")
        if self.states.ndim not in (1, 2) or (self.states.ndim == 2 and self.states.shape[1] != 2):
            raise ValueError(f"states must be (n+1,) or (n+1, 2), got {self.states.shape}")
        if not np.isfinite(self.states).all():
            raise ValueError("states contain non-finite entries")
        if self.aux is not None:
            self.aux = np.asarray(self.aux, dtype=float)
            if self.aux.shape != (n_nodes,):
                raise ValueError(f"aux must have shape ({n_nodes},), got {self.aux.shape}")
            if not np.isfinite(self.aux).all():
                raise ValueError("aux contains non-finite entries")

    @property
    def dim(self) -> int:
        return 1 if self.states.ndim == 1 else 2


def derive_stream(seed: SeedSpec) -> np.random.Generator:
    """Pure map from a SeedSpec to an independent counter-based generator.

    The master seed is hash-mixed with the stream id through numpy's
    SeedSequence spawning scheme and fed to a Philox bit generator, so
    distinct stream ids yield statistically independent streams and the same
    spec always reproduces the same draws.
    """
    ss = np.random.SeedSequence(entropy=seed.master_seed, spawn_key=(seed.stream_id,))
    return np.random.Generator(np.random.Philox(ss))


def stream_generators(master_seed: int, start: int, count: int) -> list[np.random.Generator]:
    """Generators for stream ids start .. start + count - 1."""
    return [derive_stream(SeedSpec(master_seed, sid)) for sid in range(start, start + count)]


def brownian_path(grid: TimeGrid, gen: np.random.Generator) -> SamplePath:
    """Standard Brownian motion started at 0, one N(0, dt) increment per step.

    Consumes exactly ``grid.n_steps`` Gaussian draws from ``gen``.
    """
    increments = gen.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
    states = np.empty(grid.n_steps + 1)
    states[0] = 0.0
    np.cumsum(increments, out=states[1:])
    return SamplePath(grid, states)
