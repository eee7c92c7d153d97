"""Monte Carlo estimators and hypothesis tests over batches of sample paths.

Determinism contract: every estimator partitions paths into fixed-size chunks
keyed by stream id, reduces each chunk to integer counters or a small tuple of
floats, and combines the per-chunk results in chunk order.  The thread count
therefore affects wall-clock time only, never the reported numbers.

Per-path random consumption is also fixed: each path draws its Gaussian
increments segment by segment, then (when the bridge correction is on) one
uniform per step of the segment, so a path's trajectory is a pure function of
its own stream regardless of what other paths do.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import TimeGrid, stream_generators
from .models import CoupledSolver, ModelSpec, build_model, simulate_batch
from .scale_oracle import ExitQuery
from .solvers import euler_maruyama_from_increments, fold_reflect

__all__ = [
    "Z95",
    "EstimateCI",
    "ExitProbResult",
    "KSResult",
    "ProbeResult",
    "wilson_ci",
    "mean_ci",
    "mc_exit_prob",
    "occupation_fraction",
    "coupled_sup_distance",
    "ks_two_sample",
    "strong_markov_probe",
    "modulus_of_continuity",
]

Z95 = 1.959963984540054

_CHUNK = 1024
_SEGMENT = 512
# cap on floats held per chunk so long grids get narrower chunks
_CHUNK_BUDGET = 4_000_000


@dataclass(frozen=True)
class EstimateCI:
    """Point estimate with a 95% confidence half-width."""

    value: float
    half_width: float
    n_samples: int
    kind: str  # "proportion-Wilson" | "mean-normal"

    def __post_init__(self):
        if self.half_width < 0.0:
            raise ValueError(f"half_width must be >= 0, got {self.half_width}")


@dataclass(frozen=True)
class ExitProbResult:
    """Exit-at-right estimate plus the raw absorption counts."""

    estimate: EstimateCI
    n_exit_left: int
    n_exit_right: int
    n_censored: int
    horizon_warning: bool
    bridge: bool

    @property
    def stderr(self) -> float:
        m = self.n_exit_left + self.n_exit_right
        if m == 0:
            return float("inf")
        p = self.n_exit_right / m
        return math.sqrt(p * (1.0 - p) / m)


@dataclass(frozen=True)
class KSResult:
    """Two-sample Kolmogorov-Smirnov statistic with asymptotic p-value."""

    statistic: float
    p_value: float
    n1: int
    n2: int


@dataclass
class ProbeResult:
    """Post-hit law comparison split by approach side.

    ``left``/``right`` hold the displacement samples for paths that
    approached the target from below/above.  ``crossing_fraction`` is the
    fraction of hitting paths found on the side opposite their approach side
    one lag after the hit.  ``side_agreement`` is the complementary
    same-side fraction (sign ties count as disagreement).
    """

    left: np.ndarray
    right: np.ndarray
    ks: KSResult
    crossing_fraction: EstimateCI
    side_agreement: float
    n_censored: int
    inconclusive: bool


def wilson_ci(successes: int, trials: int) -> EstimateCI:
    """Wilson score interval; the reported value is the plain count ratio."""
    if trials <= 0:
        return EstimateCI(0.0, 1.0, 0, "proportion-Wilson")
    p = successes / trials
    z2 = Z95 * Z95
    denom = 1.0 + z2 / trials
    hw = Z95 * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    return EstimateCI(p, hw, trials, "proportion-Wilson")


def mean_ci(total: float, total_sq: float, n: int) -> EstimateCI:
    """Normal-approximation CI for a sample mean from running sums."""
    if n <= 0:
        raise ValueError("mean_ci needs at least one sample")
    mean = total / n
    if n == 1:
        return EstimateCI(mean, float("inf"), 1, "mean-normal")
    var = max((total_sq - n * mean * mean) / (n - 1), 0.0)
    return EstimateCI(mean, Z95 * math.sqrt(var / n), n, "mean-normal")


def _chunk_size(n_steps: int) -> int:
    return max(16, min(_CHUNK, _CHUNK_BUDGET // max(n_steps, 1)))


def _map_chunks(worker, n_paths: int, n_threads: int, chunk: int) -> list:
    """Apply worker(start, count) over path chunks; results in chunk order."""
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    ranges = [(s, min(chunk, n_paths - s)) for s in range(0, n_paths, chunk)]
    if n_threads <= 1:
        return [worker(s, c) for s, c in ranges]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(lambda sc: worker(*sc), ranges))


def mc_exit_prob(
    spec: ModelSpec,
    q: ExitQuery,
    n_paths: int,
    grid: TimeGrid,
    master_seed: int,
    bridge: bool = True,
    n_threads: int = 1,
) -> ExitProbResult:
    """Monte Carlo exit-at-right probability from the interval (q.l, q.r).

    Paths start at q.x and are absorbed at the first step whose endpoint
    crosses a boundary; with ``bridge=True`` surviving steps additionally
    sample a between-node boundary crossing using the Brownian-bridge
    crossing probability with the left-node diffusion value.  The estimate
    is the integer ratio right-exits / total-exits, so reruns with the same
    seed are bit-identical for any thread count.
    """
    built = build_model(spec)
    if built.field is None or built.dim != 1:
        raise ValueError(f"mc_exit_prob needs a scalar coefficient model, got {spec.tag!r}")
    if not q.l < spec.x0 < q.r or spec.x0 != q.x:
        raise ValueError(f"query start x={q.x} must equal the model's x0={spec.x0}")
    field = built.field
    n, dt = grid.n_steps, grid.dt
    root_dt = math.sqrt(dt)
    m = field.n_drivers

    def worker(start, count):
        gens = stream_generators(master_seed, start, count)
        alive = np.arange(count)
        x = np.full(count, q.x)
        aux = np.zeros(count)
        n_left = n_right = 0
        for seg_start in range(0, n, _SEGMENT):
            if alive.size == 0:
                break
            seg = min(_SEGMENT, n - seg_start)
            dW = np.stack([gens[i].standard_normal((seg, m)) for i in alive]) * root_dt
            U = np.stack([gens[i].random(seg) for i in alive]) if bridge else None
            live = np.ones(alive.size, dtype=bool)
            for j in range(seg):
                t = grid.t_start + (seg_start + j) * dt
                sig = field.diffusion(t, x, aux)
                sigs = sig if isinstance(sig, tuple) else (sig,)
                x_new = x if field.drift is None else x + field.drift(t, x, aux) * dt
                for jd, g in enumerate(sigs):
                    x_new = x_new + g * dW[:, j, jd]
                hit_l = x_new <= q.l
                hit_r = ~hit_l & (x_new >= q.r)
                if bridge:
                    surv = live & ~hit_l & ~hit_r
                    if surv.any():
                        s0 = np.broadcast_to(np.asarray(sigs[0], dtype=float), x.shape)
                        var = s0 * s0 * dt
                        with np.errstate(divide="ignore", invalid="ignore"):
                            e_l = np.minimum(-2.0 * (q.l - x) * (q.l - x_new) / var, 0.0)
                            e_r = np.minimum(-2.0 * (q.r - x) * (q.r - x_new) / var, 0.0)
                            p_l = np.where(var > 0.0, np.exp(e_l), 0.0)
                            p_r = np.where(var > 0.0, np.exp(e_r), 0.0)
                        u = U[:, j]
                        b_l = surv & (u < p_l)
                        b_r = surv & ~b_l & (u < p_l + p_r)
                        hit_l = hit_l | b_l
                        hit_r = hit_r | b_r
                n_left += int((live & hit_l).sum())
                n_right += int((live & hit_r).sum())
                live = live & ~(hit_l | hit_r)
                if field.aux_rate is not None:
                    aux = np.where(live, aux + field.aux_rate(t, x) * dt, aux)
                x = np.where(live, x_new, x)
                if not live.any():
                    break
            alive = alive[live]
            x = x[live]
            aux = aux[live]
        return n_left, n_right, alive.size

    parts = _map_chunks(worker, n_paths, n_threads, _chunk_size(n))
    n_left = sum(p[0] for p in parts)
    n_right = sum(p[1] for p in parts)
    n_cens = sum(p[2] for p in parts)
    return ExitProbResult(
        estimate=wilson_ci(n_right, n_left + n_right),
        n_exit_left=n_left,
        n_exit_right=n_right,
        n_censored=n_cens,
        horizon_warning=n_cens > n_paths // 2,
        bridge=bridge,
    )


def occupation_fraction(
    spec: ModelSpec,
    eps: float,
    T: float,
    n_paths: int,
    master_seed: int,
    n_steps: int = 1000,
    n_threads: int = 1,
) -> EstimateCI:
    """Mean occupation time of the band [-eps, eps] up to T.

    Per path the occupation is the left-endpoint sum dt * 1{|X_k| <= eps}
    over steps; reruns with the same seed are bit-identical because chunk
    partial sums are combined in a fixed order.
    """
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    grid = TimeGrid(0.0, T, n_steps)
    dt = grid.dt

    def worker(start, count):
        states, _ = simulate_batch(spec, grid, master_seed, start, count)
        if states.ndim != 2:
            raise ValueError("occupation_fraction needs a scalar model")
        occ = dt * (np.abs(states[:, :-1]) <= eps).sum(axis=1)
        return float(occ.sum()), float((occ * occ).sum()), count

    parts = _map_chunks(worker, n_paths, n_threads, _chunk_size(n_steps))
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    return mean_ci(total, total_sq, n_paths)


def coupled_sup_distance(
    solver_a: CoupledSolver,
    solver_b: CoupledSolver,
    grid: TimeGrid,
    n_paths: int,
    master_seed: int,
    n_threads: int = 1,
) -> EstimateCI:
    """E[ sup over nodes |A - B|^2 ] with both solvers fed identical increments.

    A solver with ``n_drivers=None`` consumes the first driver and accepts any
    driver count; two fixed but different driver counts are an error.
    """
    declared = [s.n_drivers for s in (solver_a, solver_b) if s.n_drivers is not None]
    if len(declared) == 2 and declared[0] != declared[1]:
        raise ValueError(f"driver-count mismatch: {solver_a.n_drivers} vs {solver_b.n_drivers}")
    m = max(declared) if declared else 1
    n = grid.n_steps
    root_dt = math.sqrt(grid.dt)

    def worker(start, count):
        gens = stream_generators(master_seed, start, count)
        dW = np.stack([g.standard_normal((n, m)) for g in gens]) * root_dt
        a = solver_a.run(grid, dW)
        b = solver_b.run(grid, dW)
        d = np.max(np.abs(a - b), axis=1)
        v = d * d
        return float(v.sum()), float((v * v).sum()), count

    parts = _map_chunks(worker, n_paths, n_threads, _chunk_size(n * m))
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    return mean_ci(total, total_sq, n_paths)


def ks_two_sample(a, b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    D is the maximum gap between the two empirical CDFs over the merged
    sample; the p-value comes from the Kolmogorov series (truncated at 100
    terms) evaluated at the effective sample size n1 n2 / (n1 + n2), with
    Stephens' finite-sample adjustment of the series argument.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise ValueError("ks_two_sample requires non-empty samples")
    merged = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, merged, side="right") / n1
    cdf_b = np.searchsorted(b, merged, side="right") / n2
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    ne = n1 * n2 / (n1 + n2)
    # Stephens' finite-sample adjustment of the Kolmogorov argument; without
    # it the p-values are noticeably conservative at effective sizes ~100
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    if lam < 0.3:
        # the truncated alternating series is unusable here and the true
        # survival probability is 1 to 10 digits
        p = 1.0
    else:
        p = 2.0 * sum((-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam) for k in range(1, 101))
        p = min(max(p, 0.0), 1.0)
    return KSResult(d, p, n1, n2)


def _hit_and_side(d: np.ndarray, hit_radius: float):
    """First hit node (>= 1) and approach side from a displacement matrix.

    d has shape (paths, nodes) and holds state - target.  A hit at node k is
    a sign change over step k-1 -> k, an exact zero, or (with a positive
    radius) |d_k| <= radius.  The approach side is the sign at node k - 1;
    exact ties there mark the path unusable (side 0).
    """
    hit_evt = (np.sign(d[:, 1:]) != np.sign(d[:, :-1])) | (d[:, 1:] == 0.0)
    if hit_radius > 0.0:
        hit_evt = hit_evt | (np.abs(d[:, 1:]) <= hit_radius)
    has = hit_evt.any(axis=1)
    first = np.argmax(hit_evt, axis=1) + 1
    side = np.sign(d[np.arange(d.shape[0]), first - 1]).astype(int)
    return has, first, side


def strong_markov_probe(
    spec: ModelSpec,
    target: float,
    lag: float,
    n_paths: int,
    master_seed: int,
    T: float = 1.0,
    n_steps: int = 1000,
    hit_radius: float = 0.0,
    mirror: bool = True,
    n_threads: int = 1,
) -> ProbeResult:
    """Compare post-hit laws conditioned on the approach side.

    For scalar models, each hitting path records the displacement
    X_{tau+lag} - X_tau, where tau is the first node at which the path
    crosses the target (or enters the |state - target| <= hit_radius
    neighborhood when a positive radius is given; the exact-zero hit has
    probability ~0 for repelled dynamics on a discrete grid).  With
    ``mirror=True`` odd stream ids start from the reflection of x0 through
    the target so both approach sides are populated.

    For the circle model the target is the gluing point: hits are detected
    on the free angle reaching +/-pi and the recorded displacement is the
    post-hit vertical coordinate.

    Paths with no usable hit (censored, tie at the pre-hit node, or lag
    running past the horizon) are excluded from the samples and counted.
    """
    grid = TimeGrid(0.0, T, n_steps)
    n, dt = n_steps, grid.dt
    root_dt = math.sqrt(dt)
    lag_idx = int(round(lag / dt))
    if lag_idx < 1 or lag_idx > n:
        raise ValueError(f"lag {lag} is not representable on the grid (dt={dt:.3g})")

    circle = spec.tag == "CircleProcess"
    if circle:
        field = None
        m = 1
    else:
        built = build_model(spec)
        if built.field is None or built.dim != 1:
            raise ValueError(f"strong_markov_probe needs a scalar model or the circle, got {spec.tag!r}")
        field = built.field
        m = field.n_drivers

    def worker(start, count):
        gens = stream_generators(master_seed, start, count)
        dW = np.stack([g.standard_normal((n, m)) for g in gens]) * root_dt
        if circle:
            w = np.concatenate([np.zeros((count, 1)), np.cumsum(dW[:, :, 0], axis=1)], axis=1)
            w += spec.x0
            d = np.abs(w) - np.pi
            hit_evt = d[:, 1:] >= 0.0
            has = hit_evt.any(axis=1)
            first = np.argmax(hit_evt, axis=1) + 1
            side = np.sign(w[np.arange(count), first]).astype(int)
        else:
            x0 = np.full(count, spec.x0)
            if mirror:
                odd = (np.arange(start, start + count) % 2) == 1
                x0[odd] = 2.0 * target - spec.x0
            states, _ = euler_maruyama_from_increments(field, x0, grid, dW)
            d = states - target
            has, first, side = _hit_and_side(d, hit_radius)

        usable = has & (side != 0) & (first + lag_idx <= n)
        rows = np.flatnonzero(usable)
        k_hit = first[rows]
        k_post = k_hit + lag_idx
        if circle:
            disp = np.sin(fold_reflect(w[rows, k_post], -np.pi, np.pi))
            post_sign = np.sign(disp).astype(int)
        else:
            disp = (d[rows, k_post] + target) - (d[rows, k_hit] + target)
            post_sign = np.sign(d[rows, k_post]).astype(int)
        s = side[rows]
        left = disp[s < 0]
        right = disp[s > 0]
        n_cross = int((post_sign == -s).sum())
        n_agree = int((post_sign == s).sum())
        return left, right, n_cross, n_agree, rows.size, count - rows.size

    parts = _map_chunks(worker, n_paths, n_threads, _chunk_size(n))
    left = np.concatenate([p[0] for p in parts])
    right = np.concatenate([p[1] for p in parts])
    n_cross = sum(p[2] for p in parts)
    n_agree = sum(p[3] for p in parts)
    n_usable = sum(p[4] for p in parts)
    n_censored = sum(p[5] for p in parts)

    inconclusive = min(left.size, right.size) < 100
    if left.size and right.size:
        ks = ks_two_sample(left, right)
    else:
        ks = KSResult(0.0, 1.0, left.size, right.size)
    return ProbeResult(
        left=left,
        right=right,
        ks=ks,
        crossing_fraction=wilson_ci(n_cross, n_usable),
        side_agreement=n_agree / n_usable if n_usable else 0.0,
        n_censored=n_censored,
        inconclusive=inconclusive,
    )


def _sliding_max(a: np.ndarray, width: int) -> np.ndarray:
    """Max over every contiguous window of `width` nodes along the last axis.

    Block prefix/suffix running maxima (one O(n) pass each), so wide windows
    cost the same as narrow ones.
    """
    n = a.shape[-1]
    if width < 1 or width > n:
        raise ValueError(f"window width {width} out of range for length {n}")
    pad = (-n) % width
    if pad:
        a = np.concatenate([a, np.full(a.shape[:-1] + (pad,), -np.inf)], axis=-1)
    blocks = a.reshape(a.shape[:-1] + (-1, width))
    prefix = np.maximum.accumulate(blocks, axis=-1).reshape(a.shape)
    suffix = np.maximum.accumulate(blocks[..., ::-1], axis=-1)[..., ::-1].reshape(a.shape)
    idx = np.arange(n - width + 1)
    return np.maximum(suffix[..., idx], prefix[..., idx + width - 1])


def modulus_of_continuity(
    spec: ModelSpec,
    h_list,
    T: float,
    n_paths: int,
    quantile: float = 0.95,
    n_steps: int = 1000,
    master_seed: int = 0,
    n_threads: int = 1,
) -> list[tuple[float, float]]:
    """Empirical quantiles of the discrete modulus sup_{|t-s|<h} |X_t - X_s|.

    The modulus is taken over all grid node pairs closer than h; the returned
    table pairs each h with the requested quantile over paths.
    """
    h_list = [float(h) for h in h_list]
    if not all(0.0 < h < T for h in h_list):
        raise ValueError(f"every h must lie in (0, T), got {h_list}")
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must be in (0, 1), got {quantile}")
    grid = TimeGrid(0.0, T, n_steps)
    dt = grid.dt
    # node-index gap allowed by |t - s| < h
    gaps = [int(math.ceil(h / dt - 1e-12)) - 1 for h in h_list]

    def worker(start, count):
        states, _ = simulate_batch(spec, grid, master_seed, start, count)
        if states.ndim != 2:
            raise ValueError("modulus_of_continuity needs a scalar model")
        out = np.zeros((count, len(h_list)))
        for col, w in enumerate(gaps):
            if w < 1:
                continue
            hi = _sliding_max(states, w + 1)
            lo = -_sliding_max(-states, w + 1)
            out[:, col] = np.max(hi - lo, axis=-1)
        return out

    parts = _map_chunks(worker, n_paths, n_threads, _chunk_size(n_steps))
    moduli = np.concatenate(parts, axis=0)
    return [(h, float(np.quantile(moduli[:, j], quantile))) for j, h in enumerate(h_list)]
