"""Recovery guarantees for mixed l1/l2 decoding with Gaussian measurements.

The quantities here chain together as follows. For a subspace ratio
``delta = m/n``, :func:`alpha_star` gives the largest almost-Euclidean
constant that a random Gaussian subspace satisfies with high probability
(``||w||_1 >= alpha * sqrt(n) * ||w||_2``). For a sparsity ratio
``rho = k/n``, :func:`c_from_sparsity` converts that constant into a
balancedness constant ``C``, and :func:`varpi` combines both with the
limiting smallest singular value ``1 - sqrt(delta)`` into the normalized
error amplification factor.

All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "BoundReport",
    "SubspaceRatio",
    "alpha_star",
    "bound_report",
    "c_from_sparsity",
    "erfc",
    "escape_probability_lower_bound",
    "g_objective",
    "g_of_alpha",
    "max_recoverable_sparsity",
    "varpi",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0

# Beyond this the radicand is < 1e-20 and g_objective only grows with u2.
U2_MAX = 10.0


@dataclass(frozen=True)
class SubspaceRatio:
    """Ratio ``m/n`` of state dimension to measurement count."""

    delta: float

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    @classmethod
    def from_dims(cls, n: int, m: int) -> "SubspaceRatio":
        return cls(m / n)


@dataclass(frozen=True)
class BoundReport:
    delta: float
    rho: float
    alpha_star: float
    c_constant: float
    sigma_min_normalized: float
    varpi: float
    feasible: bool

    FIELDS = (
        "delta",
        "rho",
        "alpha_star",
        "c_constant",
        "sigma_min_normalized",
        "varpi",
        "feasible",
    )

    def as_row(self) -> list[str]:
        out = []
        for name in self.FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool):
                out.append("true" if value else "false")
            else:
                out.append(repr(float(value)))
        return out


def erfc(x: float) -> float:
    """Complementary error function, total on the extended reals."""
    if math.isnan(x):
        raise ValueError("erfc of NaN")
    return math.erfc(x)


def g_objective(alpha: float, u2: float) -> float:
    """Normalized Gaussian-width bound for a fixed dual multiplier ``u2``.

    Evaluates ``sqrt((u2^2+1) erfc(u2/sqrt2) - sqrt(2/pi) u2 exp(-u2^2/2))
    + alpha*u2``. The radicand is ``E[(h - u2)^2 ; h > u2]`` for half-normal
    ``h``; it is clamped at zero where cancellation makes it negative.
    """
    if alpha < 0 or u2 < 0:
        raise ValueError("alpha and u2 must be nonnegative")
    radicand = (u2 * u2 + 1.0) * math.erfc(u2 / _SQRT2) - _SQRT_2_OVER_PI * u2 * math.exp(
        -0.5 * u2 * u2
    )
    return math.sqrt(max(radicand, 0.0)) + alpha * u2


def _golden_min(f, lo, hi, xtol=1e-10):
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > xtol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    # endpoints matter: u2=0 is optimal for large alpha, u2=U2_MAX for alpha=0
    return min(f(lo), f(hi), fc, fd, f(0.5 * (a + b)))


def g_of_alpha(alpha: float) -> float:
    """Minimum of :func:`g_objective` over ``u2 >= 0``.

    The objective is convex in ``u2`` so a golden-section search on
    ``[0, U2_MAX]`` is exact to well below 1e-6.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return _golden_min(lambda u: g_objective(alpha, u), 0.0, U2_MAX)


def alpha_star(delta: float, iterations: int = 60) -> float:
    """Largest alpha with ``g(alpha) < sqrt(1 - delta)``.

    ``g`` is nondecreasing and reaches 1 at ``sqrt(2/pi)``, so bisection on
    ``[0, sqrt(2/pi)]`` brackets the answer for every ``delta`` in (0, 1).
    """
    SubspaceRatio(delta)
    target = math.sqrt(1.0 - delta)
    lo, hi = 0.0, _SQRT_2_OVER_PI
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if g_of_alpha(mid) < target:
            lo = mid
        else:
            hi = mid
    return lo


def c_from_sparsity(alpha: float, rho: float) -> float | None:
    """Balancedness constant ``C`` implied by ``alpha`` at sparsity ``rho``.

    Solves ``1/rho + C^2/(1-rho) = (C+1)^2/alpha^2`` for ``C``. Writing
    ``beta = 1/(C+1)`` for the share of ``||w||_1`` a support of size
    ``rho n`` can hold, the equation marks the ends of the interval of
    attainable ``beta``. Only the upper end ``beta_2`` bounds every support,
    so the constant is ``1/beta_2 - 1``. For ``alpha^2 < 1 - rho`` this is the
    unique positive root. For larger ``alpha`` both roots are positive and
    the larger one belongs to the lower end, so the smaller one is taken.
    Returns ``None`` when the constant does not exceed 1, i.e. ``rho`` is
    above the recoverable threshold for this alpha.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    inv_a2 = 1.0 / (alpha * alpha)
    qa = 1.0 / (1.0 - rho) - inv_a2
    qb = -2.0 * inv_a2
    qc = 1.0 / rho - inv_a2

    if qc <= 0.0:
        # 1/rho <= 1/alpha^2 admits beta = 1, so no support is excluded
        return None
    if abs(qa) <= 1e-12 * max(1.0, inv_a2):
        roots = [-qc / qb]
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < -1e-12 * qb * qb:
            return None
        # alpha = 1 gives a double root; rounding can push disc just below 0
        sq = math.sqrt(max(disc, 0.0))
        # cancellation-free pair of roots
        q = -0.5 * (qb + math.copysign(sq, qb))
        roots = [q / qa]
        if q != 0.0:
            roots.append(qc / q)
    c = min(r for r in roots if r > 0.0)
    return c if c > 1.0 and math.isfinite(c) else None


def max_recoverable_sparsity(alpha: float) -> float:
    """Sparsity ratio at which ``C`` drops to 1.

    This is the smaller root of ``rho (1 - rho) = alpha^2 / 4``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    a2 = alpha * alpha
    return a2 / (2.0 * (1.0 + math.sqrt(1.0 - a2)))


def _varpi_from(alpha, c, sigma_bar):
    return 2.0 * (c + 1.0) / (sigma_bar * alpha * (c - 1.0))


def varpi(delta: float, rho: float) -> float | None:
    """Normalized error amplification ``2(C+1) / ((1-sqrt(delta)) alpha* (C-1))``.

    Returns ``None`` when ``rho`` is above the recoverable threshold.
    """
    a = alpha_star(delta)
    c = c_from_sparsity(a, rho)
    if c is None:
        return None
    return _varpi_from(a, c, 1.0 - math.sqrt(delta))


def bound_report(delta: float, rho: float) -> BoundReport:
    a = alpha_star(delta)
    sigma_bar = 1.0 - math.sqrt(delta)
    c = c_from_sparsity(a, rho)
    if c is None:
        return BoundReport(delta, rho, a, math.nan, sigma_bar, math.nan, False)
    return BoundReport(delta, rho, a, c, sigma_bar, _varpi_from(a, c, sigma_bar), True)


def escape_probability_lower_bound(n: int, m: int, w_s: float) -> float:
    """Lower bound on the probability that a random subspace misses a set.

    ``w_s`` is the Gaussian width of the set. The exponent is linear in the
    width gap, as in the source statement; the result may be negative, in
    which case the bound is vacuous.
    """
    if not n > m >= 1:
        raise ValueError("need n > m >= 1")
    if w_s < 0:
        raise ValueError("w_s must be nonnegative")
    root = math.sqrt(n - m)
    gap = (root - 1.0 / (2.0 * root)) - w_s
    return 1.0 - 3.5 * math.exp(-gap / 18.0)
