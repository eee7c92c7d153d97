"""Numerically stable scale functions, exit probabilities, and limiting constants.

For a one-dimensional diffusion with drift b, diffusion sigma > 0 and an
optional penalty drift -phi_n', the scale function is

    s_n(x) = integral_l^x exp( -integral_l^y 2 (b(z) - phi_n'(z)) / sigma(z)^2 dz ) dy

and the exit-at-right probability from (l, r) started at x is the ratio of
scale increments.  The exponent grows linearly in the penalty strength n, so
all ratios are formed after shifting by the maximum exponent; the diverging
factor cancels exactly, mirroring the analytic limit argument.

Quadrature is adaptive Simpson with panel splits at the penalty support edges
(the integrand kinks there), inner and outer relative tolerance 1e-8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "QuadratureError",
    "BumpSpec",
    "ExitQuery",
    "canonical_bump",
    "adaptive_simpson",
    "integrate",
    "log_weight",
    "exit_prob_oracle",
    "limit_c",
    "bm_occupation_oracle",
]

DEFAULT_REL_TOL = 1e-8
_MAX_DEPTH = 48


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def _simpson_panel(f, a, fa, b, fb):
    m = 0.5 * (a + b)
    fm = f(m)
    return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def _adaptive(f, a, fa, m, fm, b, fb, whole, eps, depth):
    lm, flm, left = _simpson_panel(f, a, fa, m, fm)
    rm, frm, right = _simpson_panel(f, m, fm, b, fb)
    delta = left + right - whole
    if abs(delta) <= 15.0 * eps:
        return left + right + delta / 15.0
    if depth <= 0:
        raise QuadratureError(
            f"adaptive Simpson did not converge on [{a:.6g}, {b:.6g}]; "
            f"achieved error estimate {abs(delta) / 15.0:.3e} against tolerance {eps:.3e}"
        )
    return _adaptive(f, a, fa, lm, flm, m, fm, left, 0.5 * eps, depth - 1) + _adaptive(
        f, m, fm, rm, frm, b, fb, right, 0.5 * eps, depth - 1
    )


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Adaptive Simpson quadrature of f on [a, b] to relative tolerance rel_tol."""
    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    m, fm, whole = _simpson_panel(f, a, fa, b, fb)
    eps = rel_tol * max(abs(whole), 1e-300)
    return _adaptive(f, a, fa, m, fm, b, fb, whole, eps, _MAX_DEPTH)


def integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    rel_tol: float = DEFAULT_REL_TOL,
    knots: tuple = (),
) -> float:
    """Signed integral of f from a to b, with panel splits at interior knots."""
    sign = 1.0
    if b < a:
        a, b = b, a
        sign = -1.0
    if a == b:
        return 0.0
    points = [a] + sorted(k for k in knots if a < k < b) + [b]
    total = 0.0
    for lo, hi in zip(points[:-1], points[1:]):
        total += adaptive_simpson(f, lo, hi, rel_tol)
    return sign * total


@dataclass(frozen=True)
class BumpSpec:
    """Rescaled penalty bump phi_n(x) = n phi(n x) built from a C^1 base bump.

    The base bump must be nonnegative, supported on [-1, 1], unimodal (phi'
    >= 0 left of 0, <= 0 right of 0), and integrate to 1.
    """

    phi: Callable[[float], float]
    dphi: Callable[[float], float]
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"penalty scale n must be >= 1, got {self.n}")

    @property
    def support(self) -> tuple[float, float]:
        return (-1.0 / self.n, 1.0 / self.n)

    def phi_n(self, x: float) -> float:
        return self.n * self.phi(self.n * x)

    def dphi_n(self, x: float) -> float:
        return self.n * self.n * self.dphi(self.n * x)

    def validate(self, rel_tol: float = 1e-12, abs_tol: float = 1e-10) -> None:
        """Check mass 1 by quadrature and the sign conditions on a probe grid."""
        mass = integrate(self.phi, -1.0, 1.0, rel_tol, knots=(0.0,))
        if abs(mass - 1.0) > abs_tol:
            raise ValueError(f"base bump has mass {mass!r}, expected 1 within {abs_tol}")
        probe = np.linspace(-1.0, 1.0, 201)
        vals = np.array([self.phi(float(u)) for u in probe])
        if (vals < -abs_tol).any():
            raise ValueError("base bump takes negative values")
        dv = np.array([self.dphi(float(u)) for u in probe])
        if (dv[probe < 0] < -1e-9).any() or (dv[probe > 0] > 1e-9).any():
            raise ValueError("base bump derivative violates unimodality")


def _canonical_phi(x):
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) < 1.0, (15.0 / 16.0) * (1.0 - x * x) ** 2, 0.0)
    return float(out) if out.ndim == 0 else out


def _canonical_dphi(x):
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) < 1.0, -(15.0 / 4.0) * x * (1.0 - x * x), 0.0)
    return float(out) if out.ndim == 0 else out


def canonical_bump(n: int) -> BumpSpec:
    """The polynomial bump phi(x) = (15/16)(1 - x^2)^2 on [-1, 1], scaled by n."""
    return BumpSpec(_canonical_phi, _canonical_dphi, n)


@dataclass(frozen=True)
class ExitQuery:
    """Interval query l < x < r for exit probabilities."""

    l: float
    x: float
    r: float

    def __post_init__(self):
        if not self.l < self.x < self.r:
            raise ValueError(f"need l < x < r, got ({self.l}, {self.x}, {self.r})")


def _sigma_sq(sigma: Optional[Callable]) -> Callable[[float], float]:
    if sigma is None:
        return lambda z: 1.0

    def sq(z: float) -> float:
        v = sigma(z)
        if not v > 0.0:
            raise ValueError(f"diffusion coefficient must be positive, got sigma({z!r}) = {v!r}")
        return v * v

    return sq


def log_weight(
    b: Optional[Callable],
    sigma: Optional[Callable],
    bump: Optional[BumpSpec],
    l: float,
    y: float,
    rel_tol: float = DEFAULT_REL_TOL,
) -> float:
    """Exponent of the scale integrand: -integral_l^y 2 (b - phi_n') / sigma^2 dz.

    The penalty part is integrated on the intersection of [l, y] with the
    bump support only, with a split at the origin.
    """
    sig2 = _sigma_sq(sigma)
    total = 0.0
    if b is not None:
        total -= integrate(lambda z: 2.0 * b(z) / sig2(z), l, y, rel_tol)
    if bump is not None:
        lo, hi = bump.support
        sign = 1.0
        za, zb = l, y
        if zb < za:
            za, zb = zb, za
            sign = -1.0
        za, zb = max(za, lo), min(zb, hi)
        if za < zb:
            total += sign * integrate(
                lambda z: 2.0 * bump.dphi_n(z) / sig2(z), za, zb, rel_tol, knots=(0.0,)
            )
    return total


def exit_prob_oracle(
    q: ExitQuery,
    b: Optional[Callable] = None,
    sigma: Optional[Callable] = None,
    bump: Optional[BumpSpec] = None,
    rel_tol: float = DEFAULT_REL_TOL,
) -> float:
    """Probability of exiting (l, r) at r, from the scale-increment ratio.

    The scale density exp(log_weight) can overflow for strong penalties, so
    both integrals are evaluated after subtracting the maximum exponent found
    on a probe grid; the ratio is invariant under that shift.
    """
    lw = lambda y: log_weight(b, sigma, bump, q.l, y, rel_tol)

    probes = list(np.linspace(q.l, q.r, 33))
    if bump is not None:
        lo, hi = bump.support
        probes += [u for u in (lo, 0.0, hi) if q.l < u < q.r]
    shift = max(lw(float(u)) for u in probes)
    if not math.isfinite(shift):
        raise OverflowError(f"scale exponent is non-finite (max probe exponent {shift!r})")

    f = lambda y: math.exp(lw(y) - shift)
    knots = ()
    if bump is not None:
        knots = tuple(bump.support) + (0.0,)
    num = integrate(f, q.l, q.x, rel_tol, knots=knots)
    den = num + integrate(f, q.x, q.r, rel_tol, knots=knots)
    if not (math.isfinite(num) and math.isfinite(den)) or den <= 0.0:
        raise OverflowError(
            f"scale integrals overflowed despite shifting (max exponent {shift:.6g})"
        )
    return min(max(num / den, 0.0), 1.0)


def limit_c(
    l: float,
    x: float,
    b: Optional[Callable] = None,
    sigma: Optional[Callable] = None,
    rel_tol: float = DEFAULT_REL_TOL,
) -> float:
    """Limiting exit constant for l < x < 0: the penalty-free scale ratio
    (s(x) - s(l)) / (s(0) - s(l)) with weight exp(-integral 2 b / sigma^2)."""
    if not l < x < 0.0:
        raise ValueError(f"need l < x < 0, got l={l}, x={x}")
    sig2 = _sigma_sq(sigma)

    if b is None:
        return (x - l) / (0.0 - l)

    def w(y: float) -> float:
        return math.exp(-integrate(lambda z: 2.0 * b(z) / sig2(z), l, y, rel_tol))

    num = integrate(w, l, x, rel_tol)
    den = num + integrate(w, x, 0.0, rel_tol)
    return num / den


def bm_occupation_oracle(eps: float, T: float, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """E[ Lebesgue time B spends in [-eps, eps] up to T ] for standard BM from 0.

    Equals the time integral of the Gaussian band probability,
    integral_0^T erf(eps / sqrt(2 t)) dt, computed after the substitution
    t = u^2 which removes the square-root kink at t = 0.
    """
    if not (eps > 0.0 and T > 0.0):
        raise ValueError(f"need eps > 0 and T > 0, got eps={eps}, T={T}")

    def f(u: float) -> float:
        if u == 0.0:
            return 0.0
        return 2.0 * u * math.erf(eps / (math.sqrt(2.0) * u))

    return adaptive_simpson(f, 0.0, math.sqrt(T), rel_tol)
