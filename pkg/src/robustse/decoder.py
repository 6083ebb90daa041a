"""Robust linear decoding: separate sparse bad data from dense noise.

Two equivalent convex programs are supported::

    constrained:  min_{x,z} ||y - Hx - z||_1   s.t. ||z||_2 <= eps
    lagrangian:   min_{x,z} ||y - Hx - z||_1 + lam * ||z||_2

Two regimes have exact shortcuts: least squares is optimal when ``lam <= 1``
(or when the least-squares residual fits in the ball), and ``z = 0`` is optimal
when an l1-regression dual has ``||s||_2 <= lam`` (the l1 regression itself is
an LP, handed to HiGHS). Otherwise both programs are Huber regressions in
disguise: for a threshold ``mu`` the Huber fit with ``z = clip(r, -mu, mu)``
meets every optimality condition except one scalar equation in ``mu``, which
is solved by a safeguarded search. If that fails to certify, the
diagonally preconditioned primal-dual (Chambolle-Pock) iteration on
``F(Hx + z) + G(z)`` with ``F(v) = ||y - v||_1`` takes over, polished by
active-set steps. A solution is reported ``converged`` only when its KKT
certificate is below tolerance.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog, lsq_linear

from .errors import ParseError, RankDeficientError

__all__ = [
    "DecodeProblem",
    "DecodeSolution",
    "SparseErrorSpec",
    "kkt_certificate",
    "min_singular_value",
    "objective_value",
    "read_problem",
    "solve",
    "theorem1_bound",
    "write_problem",
    "write_solution",
]

Mode = Literal["constrained", "lagrangian"]
MODES = ("constrained", "lagrangian")

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SparseErrorSpec:
    """Gross errors on a small index set."""

    support: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.values):
            raise ValueError("support and values differ in length")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support indices must be distinct")

    @property
    def k(self) -> int:
        return len(self.support)

    def dense(self, n: int) -> np.ndarray:
        if self.k >= n:
            raise ValueError("need k < n")
        if any(i < 0 or i >= n for i in self.support):
            raise ValueError("support index out of range")
        e = np.zeros(n)
        e[list(self.support)] = self.values
        return e


@dataclass
class DecodeProblem:
    """Observations ``y`` (length n), matrix ``H`` (n x m) and the mode.

    ``param`` is epsilon in constrained mode and lambda in lagrangian mode.
    """

    y: np.ndarray
    H: np.ndarray
    mode: Mode
    param: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n, m = self.H.shape
        if self.y.shape[0] != n:
            raise ValueError(f"y has length {self.y.shape[0]} but H has {n} rows")
        if not n > m >= 1:
            raise ValueError(f"need n > m >= 1, got n={n}, m={m}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.param = float(self.param)
        if not self.param >= 0 or not math.isfinite(self.param):
            raise ValueError("epsilon/lambda must be a finite nonnegative number")

    @classmethod
    def constrained(cls, y, H, epsilon) -> "DecodeProblem":
        return cls(y, H, "constrained", epsilon)

    @classmethod
    def lagrangian(cls, y, H, lam) -> "DecodeProblem":
        return cls(y, H, "lagrangian", lam)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[1]

    def check_rank(self):
        sv = np.linalg.svd(self.H, compute_uv=False)
        if sv[-1] <= RANK_RTOL * sv[0]:
            raise RankDeficientError(
                f"smallest singular value {sv[-1]:.3e} vs largest {sv[0]:.3e}"
            )


@dataclass
class DecodeSolution:
    x_hat: np.ndarray
    z_hat: np.ndarray
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    certificate_gap: float
    # multiplier of the l1 term; optional, only used to tighten the certificate
    dual: np.ndarray | None = field(default=None, repr=False)

    def residual(self, problem: DecodeProblem) -> np.ndarray:
        """The part of ``y`` attributed to bad data, ``y - H x_hat - z_hat``."""
        return problem.y - problem.H @ self.x_hat - self.z_hat


def objective_value(problem: DecodeProblem, x, z) -> float:
    t = problem.y - problem.H @ x - z
    val = float(np.abs(t).sum())
    if problem.mode == "lagrangian":
        val += problem.param * float(np.linalg.norm(z))
    return val


def _violation(H, y, mode, param, x, z, s) -> float:
    """Largest KKT violation of the primal-dual pair ``(x, z), s``.

    Each term is a nonnegative continuous measure that vanishes exactly at
    optimality, so together they bound the duality gap. Terms that scale
    with the data are divided by ``max|y|``, so the certificate does not
    change when ``y`` (and ``eps``) are rescaled.
    """
    c = _y_scale(y)
    t = y - H @ x - z
    nz = float(np.linalg.norm(z))
    ns = float(np.linalg.norm(s))
    terms = [
        np.max(np.abs(t) - s * t, initial=0.0) / c,  # s in subdifferential of |t|
        np.max(np.abs(s) - 1.0, initial=0.0),
        np.max(np.abs(H.T @ s), initial=0.0),  # stationarity in x
    ]
    if mode == "lagrangian":
        terms += [max(0.0, ns - param), abs(param * nz - float(s @ z)) / c]
    else:
        terms += [
            max(0.0, nz - param) / c,
            abs(ns * nz - float(s @ z)) / c,  # s parallel to z
            ns * max(0.0, param - nz) / c,  # s vanishes off the boundary
        ]
    return float(max(terms))


def _y_scale(y):
    c = float(np.max(np.abs(y), initial=0.0))
    return c if c > 0 else 1.0


def _zero_threshold(y):
    return 1e-9 * _y_scale(y)


def _construct_dual(problem: DecodeProblem, x, z) -> np.ndarray:
    H, y, lam = problem.H, problem.y, problem.param
    t = y - H @ x - z
    thr = _zero_threshold(y)
    nz = float(np.linalg.norm(z))
    if nz > thr:
        if problem.mode == "lagrangian":
            return lam * z / nz
        big = np.abs(t) > thr
        denom = float(z[big] @ z[big])
        mu = float(z[big] @ np.sign(t[big])) / denom if denom > 0 else 0.0
        return max(mu, 0.0) * z
    free = np.abs(t) <= thr
    cands = [_l1_dual(H, t, free)]
    if free.any():
        cands.append(_l1_dual_bvls(H, t, free))
    return min(cands, key=lambda s: _violation(H, y, problem.mode, problem.param, x, z, s))


def _l1_dual(H, t, free):
    """Dual for ``z = 0``: ``sign(t)`` off ``free``, fitted to ``H^T s = 0`` on it.

    Aims at the smallest ``||s||_2`` (the lagrangian condition is
    ``||s||_2 <= lam``): the minimum-norm fit is computed, entries beyond
    [-1, 1] are pinned at their sign and the rest refitted, until the fit
    stays in the box.
    """
    s = np.sign(t)
    s[free] = 0.0
    F = free.copy()
    for _ in range(20):
        if not F.any():
            break
        rhs = -H[~F].T @ s[~F]
        fit = np.linalg.lstsq(H[F].T, rhs, rcond=None)[0]
        idx = np.flatnonzero(F)
        s[idx] = fit
        over = np.abs(fit) > 1.0
        if not over.any():
            break
        s[idx[over]] = np.sign(fit[over])
        F[idx[over]] = False
    return s


def _l1_dual_bvls(H, t, free):
    """Dual for ``z = 0`` by bounded least squares on ``free``."""
    s = np.sign(t)
    s[free] = 0.0
    rhs = -H[~free].T @ s[~free]
    s[free] = lsq_linear(H[free].T, rhs, bounds=(-1.0, 1.0), method="bvls").x
    return s


def kkt_certificate(problem: DecodeProblem, solution: DecodeSolution) -> float:
    """Maximum violation of the optimality conditions at ``solution``.

    A dual vector ``s`` for the l1 term is built from the residual
    ``t = y - H x_hat - z_hat``: ``s_i = sign(t_i)`` on the nonzero residuals,
    ``s = lam z/||z||`` when ``z_hat != 0`` in lagrangian mode (or a
    nonnegative multiple of ``z_hat`` in constrained mode), and the remaining
    entries fitted to ``H^T s = 0`` within ``[-1, 1]``. The solver's own dual
    estimate is also tried; any dual vector gives a valid certificate, so the
    smaller violation is reported.
    """
    x = np.asarray(solution.x_hat, dtype=float)
    z = np.asarray(solution.z_hat, dtype=float)
    if x.shape != (problem.m,) or z.shape != (problem.n,):
        raise ValueError("solution dimensions do not match problem")
    args = (problem.H, problem.y, problem.mode, problem.param, x, z)
    best = _violation(*args, _construct_dual(problem, x, z))
    if solution.dual is not None:
        best = min(best, _violation(*args, np.asarray(solution.dual, dtype=float)))
    return best


def min_singular_value(H) -> float:
    """Smallest singular value of ``H`` (LAPACK bidiagonalization)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if not np.any(H):
        raise ValueError("H must be nonzero")
    return float(np.linalg.svd(H, compute_uv=False)[-1])


def theorem1_bound(sigma_min: float, alpha: float, c: float, epsilon: float) -> float:
    """Worst-case ``||x - x_hat||_2`` for constrained decoding.

    Valid when the column space of ``H`` is ``alpha``-almost Euclidean and
    ``C``-balanced for the bad-data support size and ``||v||_2 <= epsilon``.
    """
    if not c > 1:
        raise ValueError("c must exceed 1")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if not sigma_min > 0:
        raise ValueError("sigma_min must be positive")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return 2.0 * (c + 1.0) / (sigma_min * alpha * (c - 1.0)) * epsilon


# -- solver -----------------------------------------------------------------


def _least_squares_solution(problem: DecodeProblem):
    """Exact optimum when least squares already solves the program.

    In lagrangian mode with ``lam <= 1``, ``||t||_1 + lam||z||_2 >= lam||t + z||_2``
    so putting the whole LS residual into ``z`` is optimal. In constrained
    mode the same holds when the LS residual fits inside the ball.
    """
    H, y, p = problem.H, problem.y, problem.param
    x = np.linalg.lstsq(H, y, rcond=None)[0]
    r = y - H @ x
    nr = float(np.linalg.norm(r))
    if problem.mode == "lagrangian":
        if p > 1.0:
            return None
        s = p * r / nr if nr > 0 else np.zeros_like(r)
        if nr > 0:
            # H^T r = 0 only up to rounding, which 1/||r|| amplifies
            s = _project_dual(H, s, np.ones(r.size, dtype=bool))
    else:
        if nr > p:
            return None
        s = np.zeros_like(r)
    return x, r, s


def _l1_candidate(H, y):
    """Least absolute deviations fit with ``z = 0``, dual from the LP."""
    n, m = H.shape
    eye = sparse.identity(n, format="csr")
    A = sparse.hstack([sparse.csr_matrix(H), eye, -eye], format="csr")
    c = np.concatenate([np.zeros(m), np.ones(2 * n)])
    bounds = [(None, None)] * m + [(0, None)] * (2 * n)
    res = linprog(
        c,
        A_eq=A,
        b_eq=y,
        bounds=bounds,
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        return []
    return [(res.x[:m], np.zeros(n), np.clip(res.eqlin.marginals, -1.0, 1.0))]


def _ball_candidates(H, y, mode, p, Z, t, refine=30):
    """Active-set candidates with ``z != 0``.

    On the zero-residual set ``Z`` we have ``z_Z = y_Z - H_Z x``; elsewhere
    ``z_i = c sign(t_i)`` for a common scale ``c > 0``. Stationarity
    ``H^T z = 0`` makes ``x`` affine in ``c`` and the norm condition on ``z``
    gives a scalar quadratic. The multiplier on ``Z`` is ``z_Z / c``. After
    each solve the worst offender is moved: an entry of ``Z`` whose
    multiplier leaves [-1, 1] goes off ``Z`` with that sign, or an entry off
    ``Z`` whose residual has the wrong sign goes onto it. This repeats up to
    ``refine`` times.
    """
    m = H.shape[1]
    sign = np.sign(t)
    Z = Z.copy()
    out = []
    for _ in range(refine + 1):
        if Z.sum() < m:
            break
        cands = _ball_solve(H, y, mode, p, Z, sign)
        if not cands:
            break
        out.extend(cands)
        x, z, s = min(cands, key=lambda cand: _violation(H, y, mode, p, *cand))
        over = np.where(Z, np.abs(s) - 1.0, 0.0)
        wrong = np.where(Z, 0.0, -sign * (y - H @ x - z) / (np.linalg.norm(z) + 1e-300))
        i, j = int(np.argmax(over)), int(np.argmax(wrong))
        if max(over[i], wrong[j]) <= 0:
            break
        if over[i] >= wrong[j]:
            sign[i] = np.sign(s[i])
            Z[i] = False
        else:
            Z[j] = True
    return out


def _ball_system(H, y, mode, p, Z, sign):
    """Reduced optimality system for zero set ``Z``: returns ``(x0, x1, a, b,
    roots)`` with ``x = x0 + c x1`` and ``z_Z = a - c b``, or None."""
    O = ~Z
    HZ, HO = H[Z], H[O]
    G = HZ.T @ HZ
    try:
        x0 = np.linalg.solve(G, HZ.T @ y[Z])
        x1 = np.linalg.solve(G, HO.T @ sign[O])
    except np.linalg.LinAlgError:
        return None
    a = y[Z] - HZ @ x0
    b = HZ @ x1
    k = float(O.sum())
    if mode == "lagrangian":
        qa, qb, qc = b @ b + k - p * p, -2.0 * (a @ b), a @ a
    else:
        qa, qb, qc = b @ b + k, -2.0 * (a @ b), a @ a - p * p
    if abs(qa) < 1e-14:
        roots = [-qc / qb] if qb != 0 else []
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0:
            roots = []
        else:
            sq = math.sqrt(disc)
            roots = [(-qb + sq) / (2 * qa), (-qb - sq) / (2 * qa)]
    return x0, x1, a, b, sorted(c for c in roots if c > 0)


def _ball_roots(H, y, mode, p, Z, sign):
    sysm = _ball_system(H, y, mode, p, Z, sign)
    return [] if sysm is None else sysm[4]


def _ball_solve(H, y, mode, p, Z, sign):
    sysm = _ball_system(H, y, mode, p, Z, sign)
    if sysm is None:
        return []
    x0, x1, a, b, roots = sysm
    n = H.shape[0]
    out = []
    for c in roots:
        z = np.empty(n)
        z[Z] = a - c * b
        z[~Z] = c * sign[~Z]
        x = x0 + c * x1
        if mode == "constrained":
            nz = np.linalg.norm(z)
            if nz > p:
                z *= p / nz
        out.append((x, z, z / c))
    return out


def _vertex_candidates(H, y, x):
    """Active-set candidates with ``z = 0``: l1 regression fits through the
    residuals that vanish at ``x``.

    The zero set is taken as the ``m`` smallest residuals and, when more
    than ``m`` residuals are near zero (a degenerate vertex), as each of a few
    cutoffs for "near zero"; ``x`` is refitted by least squares on each set.
    """
    n, m = H.shape
    r = np.abs(y - H @ x)
    scale = _y_scale(y)
    Zm = np.zeros(n, dtype=bool)
    Zm[np.argsort(r, kind="stable")[:m]] = True
    sets = [Zm]
    for rel in (1e-12, 1e-9, 1e-6):
        Z = r <= rel * scale
        if Z.sum() > m and not any(np.array_equal(Z, S) for S in sets):
            sets.append(Z)
    out = []
    zero = np.zeros(n)
    for Z in sets:
        xv, _, rank, _ = np.linalg.lstsq(H[Z], y[Z], rcond=None)
        if rank < m:
            continue
        t = y - H @ xv
        free = Z | (np.abs(t) <= 1e-12 * scale)
        out.append((xv, zero, _l1_dual(H, t, free)))
        if free.sum() > m:
            out.append((xv, zero, _l1_dual_bvls(H, t, free)))
    return out


def _zero_set_guesses(t, m, scale, jumps=3):
    """Candidate zero-residual sets: fixed relative thresholds, plus cuts at
    the largest jumps in the sorted ``|t|`` at rank ``m`` or beyond."""
    a = np.abs(t)
    out = [a <= rel * scale for rel in (1e-3, 1e-4, 1e-5)]
    srt = np.sort(a)
    if srt.size > m:
        tiny = 1e-14 * scale
        ratio = (srt[m:] + tiny) / (srt[m - 1 : -1] + tiny)
        for j in np.argsort(-ratio, kind="stable")[:jumps]:
            out.append(a <= srt[m - 1 + j])
    seen, uniq = set(), []
    for Z in out:
        key = Z.tobytes()
        if key not in seen:
            seen.add(key)
            uniq.append(Z)
    return uniq


def _polish(problem, x, z, best):
    H, y, mode, p = problem.H, problem.y, problem.mode, problem.param
    t = y - H @ x - z
    scale = _y_scale(y)
    cands = []
    if mode == "lagrangian" or p > 0:
        for Z in _zero_set_guesses(t, H.shape[1], scale):
            cands.extend(_ball_candidates(H, y, mode, p, Z, t))
    if mode == "lagrangian" or p == 0:
        cands.extend(_vertex_candidates(H, y, x))
    for cand in cands:
        gap = _violation(H, y, mode, p, *cand)
        if gap < best[0]:
            best = (gap, cand)
    return best


def _huber_step_length(r, v, mu):
    """Exact minimizer over ``t >= 0`` of ``sum_i huber_mu(r_i - t v_i)``.

    The derivative in ``t`` is piecewise linear and nondecreasing, so it is
    evaluated at the breakpoints and interpolated on the bracketing piece.
    """
    nz = v != 0
    rv, vv = r[nz], v[nz]
    bp = np.concatenate(((rv - mu) / vv, (rv + mu) / vv))
    bp = np.unique(bp[bp > 0])

    def deriv(t):
        return -(np.clip(rv[None, :] - np.atleast_1d(t)[:, None] * vv[None, :], -mu, mu) @ vv)

    d0 = float(deriv(0.0)[0])
    if d0 >= 0:
        return 0.0
    if bp.size == 0:
        return 1.0
    d = deriv(bp)
    k = int(np.searchsorted(d >= 0, True))
    if k == bp.size:
        # past the last breakpoint the derivative is linear; its slope is sum v^2 over
        # residuals still inside the quadratic zone
        inside = np.abs(rv - (bp[-1] + 1.0) * vv) <= mu
        slope = float(vv[inside] @ vv[inside])
        return float(bp[-1] - d[-1] / slope) if slope > 0 else float(bp[-1])
    tl, dl = (0.0, d0) if k == 0 else (bp[k - 1], d[k - 1])
    tr, dr = bp[k], d[k]
    return float(tl + (tr - tl) * (-dl) / (dr - dl)) if dr > dl else float(tr)


def _huber_fit(H, y, mu, x, max_iter=200):
    """Huber regression ``min_x sum_i huber_mu(y - Hx)`` by Newton steps with an
    exact line search; terminates once the quadratic set stops changing."""
    m = H.shape[1]
    ridge = 1e-12 * max(1.0, float(np.einsum("ij,ij->", H, H)) / m)
    Q_old = None
    for _ in range(max_iter):
        r = y - H @ x
        Q = np.abs(r) <= mu
        sg = np.sign(r)
        if Q_old is not None and np.array_equal(Q, Q_old[0]) and np.array_equal(sg[~Q], Q_old[1][~Q]):
            break
        Q_old = (Q, sg)
        g = H.T @ np.clip(r, -mu, mu)
        HQ = H[Q]
        dx = np.linalg.solve(HQ.T @ HQ + ridge * np.eye(m), g)
        x = x + _huber_step_length(r, H @ dx, mu) * dx
    return x


def _project_dual(H, s, free):
    """Min-norm change to ``s`` on ``free`` that restores ``H^T s = 0``.

    ``s = z / mu`` carries rounding amplified by ``1 / mu``; for small
    thresholds that alone can dominate the stationarity term.
    """
    s = s.copy()
    s[free] -= np.linalg.lstsq(H[free].T, H.T @ s, rcond=None)[0]
    return s


def _huber_path(problem, x, tol, max_steps=60):
    """Solve either program as a Huber fit with a tuned threshold.

    For a threshold ``mu`` the Huber fit gives ``z = clip(r, -mu, mu)`` and
    multiplier ``s = z / mu``, which satisfy every optimality condition
    except the one tying ``z`` to ``lam`` (``||s||_2 = lam``) or to ``eps``
    (``||z||_2 = eps``). That scalar condition is monotone in ``mu`` and is
    solved by bracketing; each step proposes the exact root for the current
    quadratic set (the same reduced system as the polish). Returns the best
    ``(gap, (x, z, s))`` seen.
    """
    H, y, mode, p = problem.H, problem.y, problem.mode, problem.param
    n = H.shape[0]
    r = y - H @ x
    mu = float(np.max(np.abs(r))) if mode == "lagrangian" else p / math.sqrt(n)
    mu = mu if mu > 0 else 1.0
    lo, hi = 0.0, math.inf
    best = (math.inf, None)
    for _ in range(max_steps):
        x = _huber_fit(H, y, mu, x)
        r = y - H @ x
        z = np.clip(r, -mu, mu)
        Q = np.abs(r) <= mu
        cands = [(x, z, z / mu), (x, z, _project_dual(H, z / mu, Q))]
        cands += _ball_solve(H, y, mode, p, Q, np.sign(r))
        for cand in cands:
            gap = _violation(H, y, mode, p, *cand)
            if gap < best[0]:
                best = (gap, cand)
        if best[0] <= tol:
            break
        too_small = np.linalg.norm(z / mu) > p if mode == "lagrangian" else np.linalg.norm(z) < p
        if too_small:
            lo = mu
        else:
            hi = mu
        roots = [cand_mu for cand_mu in _ball_roots(H, y, mode, p, Q, np.sign(r)) if lo < cand_mu < hi]
        if roots:
            mu = roots[0]
        elif math.isinf(hi):
            mu = 4.0 * mu
        elif lo == 0.0:
            mu = mu / 4.0
        else:
            mu = math.sqrt(lo * hi)
        if math.isfinite(hi) and hi - lo <= 1e-15 * hi:
            break
    return best


def solve(
    problem: DecodeProblem,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    *,
    warm_start: DecodeSolution | None = None,
    check_every: int = 50,
    primal_weight: float = 0.1,
) -> DecodeSolution:
    """Solve the robust decoding program.

    Parameters
    ----------
    problem : DecodeProblem
    tol : float
        Target KKT certificate. The solution is ``converged`` once the
        certificate is at most ``tol``.
    max_iter : int
        Cap on primal-dual iterations. When reached, the iterate with the
        smallest certificate is returned with ``converged=False``.
    warm_start : DecodeSolution, optional
        Starting point, e.g. the solution at a neighbouring lambda.
    check_every : int
        Iterations between residual checks and polish attempts.
    primal_weight : float
        Multiplies the primal steps and divides the dual steps.

    Raises
    ------
    RankDeficientError
        If ``H`` does not have full column rank.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    problem.check_rank()
    H, y, mode, p = problem.H, problem.y, problem.mode, problem.param
    n, m = H.shape

    c = _y_scale(y)
    if c != 1.0:
        # solve with max|y| = 1; x, z and eps scale with y, the dual does not
        scaled = DecodeProblem(y / c, H, mode, p if mode == "lagrangian" else p / c)
        warm = None
        if warm_start is not None:
            warm = replace(warm_start, x_hat=warm_start.x_hat / c, z_hat=warm_start.z_hat / c)
        sol = _solve_unit(scaled, tol, max_iter, warm, check_every, primal_weight)
        x, z = sol.x_hat * c, sol.z_hat * c
        if mode == "constrained":
            nz = float(np.linalg.norm(z))
            if nz > p:
                z = z * (p / nz)
        return replace(
            sol,
            x_hat=x,
            z_hat=z,
            objective=objective_value(problem, x, z),
            primal_residual=sol.primal_residual * c,
            dual_residual=sol.dual_residual * c,
        )
    return _solve_unit(problem, tol, max_iter, warm_start, check_every, primal_weight)


def _solve_unit(problem, tol, max_iter, warm_start, check_every, primal_weight):
    H, y, mode, p = problem.H, problem.y, problem.mode, problem.param
    n, m = H.shape

    def finish(x, z, s, it, pres, dres, gap):
        if mode == "constrained":
            nz = np.linalg.norm(z)
            if nz > p:
                z = z * (p / nz) if p > 0 else np.zeros_like(z)
        return DecodeSolution(
            x_hat=x,
            z_hat=z,
            objective=objective_value(problem, x, z),
            iterations=it,
            primal_residual=pres,
            dual_residual=dres,
            converged=gap <= tol,
            certificate_gap=gap,
            dual=s,
        )

    ls = _least_squares_solution(problem)
    if ls is not None:
        x, z, s = ls
        return finish(x, z, s, 0, 0.0, 0.0, _violation(H, y, mode, p, x, z, s))

    if mode == "lagrangian" or p == 0:
        lads = _l1_candidate(H, y)
        if lads:
            # the LP is solved to ~1e-7; the exact vertex through it sharpens that
            lads += _vertex_candidates(H, y, lads[0][0])
        for lad in lads:
            gap = _violation(H, y, mode, p, *lad)
            if gap <= tol:
                return finish(*lad, 0, 0.0, 0.0, gap)

    if mode == "lagrangian" or p > 0:
        x0 = warm_start.x_hat if warm_start is not None else np.linalg.lstsq(H, y, rcond=None)[0]
        gap, cand = _huber_path(problem, np.array(x0, dtype=float), tol)
        if gap <= tol:
            return finish(*cand, 0, 0.0, 0.0, gap)

    # diagonal steps for K = [H I]: tau_j = 1/sum_i |K_ij|, sigma_i = 1/sum_j |K_ij|
    absH = np.abs(H)
    col = absH.sum(axis=0)
    tau = np.where(col > 0, 1.0 / np.where(col > 0, col, 1.0), 1.0)
    tau = tau * primal_weight
    tau_z = primal_weight
    sigma = 1.0 / (absH.sum(axis=1) + 1.0) / primal_weight

    if warm_start is not None:
        x = np.array(warm_start.x_hat, dtype=float)
        z = np.array(warm_start.z_hat, dtype=float)
        s = (
            np.clip(np.array(warm_start.dual, dtype=float), -1, 1)
            if warm_start.dual is not None
            else np.zeros(n)
        )
    else:
        x, z, s = np.zeros(m), np.zeros(n), np.zeros(n)
    xb, zb = x.copy(), z.copy()

    best = (math.inf, (x, z, s))
    pres = dres = math.inf
    it = 0
    if warm_start is not None:
        # a nearby problem usually shares the active set: try it before iterating
        best = _polish(problem, x, z, best)
        if best[0] <= tol:
            gap, (bx, bz, bs) = best
            return finish(bx, bz, bs, 0, pres, dres, gap)
    for it in range(1, max_iter + 1):
        s_old = s
        # prox of sigma*F^*, F^*(s) = <s, y> + indicator(|s|_inf <= 1)
        s = np.clip(s + sigma * (H @ xb + zb - y), -1.0, 1.0)
        x_old, z_old = x, z
        x = x - tau * (H.T @ s)
        v = z - tau_z * s
        nv = float(np.linalg.norm(v))
        if mode == "lagrangian":
            z = v * max(0.0, 1.0 - tau_z * p / nv) if nv > 0 else v
        else:
            z = v if nv <= p else v * (p / nv)
        xb = 2.0 * x - x_old
        zb = 2.0 * z - z_old

        if it % check_every == 0 or it == max_iter:
            ds = s_old - s
            dx, dz = x_old - x, z_old - z
            pres = float(
                math.hypot(
                    np.linalg.norm(dx / tau - H.T @ ds), np.linalg.norm(dz / tau_z - ds)
                )
            )
            dres = float(np.linalg.norm(ds / sigma - (H @ dx + dz)))
            gap = _violation(H, y, mode, p, x, z, s)
            if gap < best[0]:
                best = (gap, (x, z, s))
            best = _polish(problem, x, z, best)
            if best[0] <= tol:
                break

    gap, (bx, bz, bs) = best
    return finish(bx, bz, bs, it, pres, dres, gap)


# -- CSV I/O ----------------------------------------------------------------


def _data_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line:
            yield lineno, line


def read_problem(text: str, mode: str | None = None, param: float | None = None):
    """Parse a problem CSV.

    Layout: a header row ``# n,m,mode,param`` (mode and param may be left
    empty when supplied by the caller), ``n`` rows of ``m`` values for ``H``,
    then ``n`` rows holding one value each for ``y``.
    """
    lines = list(_data_lines(text))
    if not lines:
        raise ParseError(1, "empty problem file")
    lineno, header = lines[0]
    if not header.startswith("#"):
        raise ParseError(lineno, "expected header row '# n,m,mode,param'")
    fields = [f.strip() for f in header[1:].split(",")]
    while len(fields) < 4:
        fields.append("")
    try:
        n, m = int(fields[0]), int(fields[1])
    except ValueError:
        raise ParseError(lineno, "n and m must be integers") from None
    file_mode = fields[2] or None
    file_param = None
    if fields[3]:
        try:
            file_param = float(fields[3])
        except ValueError:
            raise ParseError(lineno, f"bad parameter {fields[3]!r}") from None
    mode = mode or file_mode
    param = param if param is not None else file_param
    if mode not in MODES:
        raise ParseError(lineno, f"mode must be one of {MODES}, got {mode!r}")
    if param is None:
        raise ParseError(lineno, "missing epsilon/lambda")

    body = lines[1:]
    if len(body) != 2 * n:
        raise ParseError(lineno, f"expected {2 * n} data rows, found {len(body)}")
    H = np.empty((n, m))
    y = np.empty(n)
    for r, (ln, line) in enumerate(body):
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError:
            raise ParseError(ln, "non-numeric value") from None
        if r < n:
            if len(vals) != m:
                raise ParseError(ln, f"expected {m} columns, found {len(vals)}")
            H[r] = vals
        else:
            if len(vals) != 1:
                raise ParseError(ln, "y rows hold exactly one value")
            y[r - n] = vals[0]
    try:
        return DecodeProblem(y, H, mode, param)
    except ValueError as exc:
        raise ParseError(lineno, str(exc)) from None


def write_problem(problem: DecodeProblem) -> str:
    buf = io.StringIO()
    buf.write(f"# {problem.n},{problem.m},{problem.mode},{problem.param!r}\n")
    for row in problem.H:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    for v in problem.y:
        buf.write(f"{float(v)!r}\n")
    return buf.getvalue()


def _section(buf, name: str, values: Sequence[float]):
    buf.write(f"index,{name}\n")
    for i, v in enumerate(values):
        buf.write(f"{i},{float(v)!r}\n")


def write_solution(solution: DecodeSolution) -> str:
    buf = io.StringIO()
    _section(buf, "x_hat", solution.x_hat)
    _section(buf, "z_hat", solution.z_hat)
    return buf.getvalue()
