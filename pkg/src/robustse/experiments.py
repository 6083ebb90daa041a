"""Seeded harnesses for the Gaussian and power-network experiments.

Every trial draws from its own stream ``RngStream(seed, trial)``, so a trial
sees the same matrix, signal, noise pattern and bad-data pattern at every
sweep point (common random numbers) and the output does not depend on how
trials are scheduled across worker processes.

Per-trial draw order
--------------------
Gaussian experiment: ``H`` (n*m normals, row-major), ``x'`` (m normals),
base noise (n normals, scaled by sigma), a random permutation of the
measurements whose first entries are the bad ones, and n normals for the
gross errors (only entries on the bad set are used).

Power-network experiment: magnitudes (k uniforms mapped to [0.95, 1.05]),
non-reference angles (k - 1 uniforms mapped to [-0.2, 0.2] rad), base noise
(n normals), then for random bad data a permutation and n normals as above.

lambda*
-------
For each run, lambda* is the grid value with the smallest error among the
converged solves, ties (within ``TIE_TOL``) going to the largest lambda; the
reported lambda* for a sweep point is the mean over runs that had at least one
converged solve. ``mean_error`` is the mean of those per-run minimal errors.
For rho sweeps the grid is a handful of fixed lambdas, and lambda* is the
grid value with the smallest mean error.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import decoder
from .errors import RobustSEError
from .estimator import EstimatorConfig, estimate
from .powerflow import Measurement, MeasurementPlan, PowerNetwork, StateVector, evaluate_h
from .rng import RngStream, gaussian_sample

__all__ = [
    "ExperimentResult",
    "Exp1Config",
    "Exp2Config",
    "FixedBadData",
    "RandomBadData",
    "SummaryRow",
    "TrialRecord",
    "default_bad_data",
    "gaussian_sample",
    "mean_errors",
    "run_exp1_lambda_sweep",
    "run_exp1_rho_sweep",
    "run_exp2",
    "run_exp2_rho_sweep",
    "summary_csv",
    "trials_csv",
    "true_state",
]

TRIAL_FIELDS = ("experiment", "seed", "trial", "n", "m", "sigma", "rho", "lambda", "error", "converged", "iterations")
SUMMARY_FIELDS = ("experiment", "seed", "sweep_var", "sweep_value", "lambda_star", "mean_error")

TIE_TOL = 1e-9
MAG_RANGE = (0.95, 1.05)
ANGLE_RANGE = (-0.2, 0.2)


def _grid(start, stop, step):
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 12) for i in range(count))


@dataclass(frozen=True)
class TrialRecord:
    experiment: str
    seed: int
    trial: int
    n: int
    m: int
    sigma: float
    rho: float
    lam: float
    error: float
    converged: bool
    iterations: int

    def as_row(self):
        return (
            self.experiment,
            self.seed,
            self.trial,
            self.n,
            self.m,
            repr(self.sigma),
            repr(self.rho),
            repr(self.lam),
            repr(self.error),
            int(self.converged),
            self.iterations,
        )


@dataclass(frozen=True)
class SummaryRow:
    experiment: str
    seed: int
    sweep_var: str
    sweep_value: float
    lambda_star: float
    mean_error: float

    def as_row(self):
        return (
            self.experiment,
            self.seed,
            self.sweep_var,
            repr(self.sweep_value),
            repr(self.lambda_star),
            repr(self.mean_error),
        )


@dataclass
class ExperimentResult:
    records: list[TrialRecord]
    summary: list[SummaryRow] = field(default_factory=list)


def trials_csv(records: Sequence[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_FIELDS)
    w.writerows(r.as_row() for r in records)
    return buf.getvalue()


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    w.writerows(r.as_row() for r in rows)
    return buf.getvalue()


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class Exp1Config:
    """Gaussian-measurement experiment.

    ``bad_count`` fixes the number of corrupted measurements for the lambda
    sweep; the rho sweep instead corrupts ``round(rho * n)`` measurements for
    each ``rho`` in ``rhos``. ``error_model`` is ``"sign_flip"`` or
    ``"gaussian"`` (additive N(0, error_std^2) on the bad set).
    """

    n: int = 150
    m: int = 60
    bad_count: int = 12
    sigmas: tuple[float, ...] = _grid(0.0, 1.0, 0.1)
    rhos: tuple[float, ...] = ()
    lambda_grid: tuple[float, ...] = _grid(0.0, 13.0, 0.5)
    runs: int = 50
    error_model: str = "sign_flip"
    error_std: float = 5.0
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.m <= self.n:
            raise ValueError("need 0 < m <= n")
        if not 0 <= self.bad_count <= self.n:
            raise ValueError("bad_count out of range")
        if self.error_model not in ("sign_flip", "gaussian"):
            raise ValueError(f"unknown error model {self.error_model!r}")
        if any(s < 0 for s in self.sigmas) or any(not 0 <= r <= 1 for r in self.rhos):
            raise ValueError("sigmas must be >= 0 and rhos in [0, 1]")
        if not self.lambda_grid or any(v < 0 for v in self.lambda_grid):
            raise ValueError("lambda_grid must be nonempty and nonnegative")
        if self.runs < 1 or self.workers < 1:
            raise ValueError("runs and workers must be positive")

    @classmethod
    def rho_sweep(cls, **overrides) -> "Exp1Config":
        """Defaults for the error-fraction sweep: noise 0.5, errors N(0, 5^2)."""
        base = dict(
            sigmas=(0.5,),
            rhos=_grid(0.0, 0.3, 0.02),
            lambda_grid=(0.05, 8.0, 15.0),
            error_model="gaussian",
            error_std=5.0,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class FixedBadData:
    """Sign-flip a fixed list of measurements."""

    descriptors: tuple[Measurement, ...]


@dataclass(frozen=True)
class RandomBadData:
    """Corrupt ``round(rho * n)`` random measurements with N(0, error_std^2)."""

    rho: float
    error_std: float = 0.7

    def __post_init__(self):
        if not 0 <= self.rho <= 1 or self.error_std < 0:
            raise ValueError("need rho in [0, 1] and error_std >= 0")


@dataclass(frozen=True)
class Exp2Config:
    net: PowerNetwork
    plan: MeasurementPlan
    sigmas: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2)
    bad_spec: FixedBadData | RandomBadData = FixedBadData(())
    lambda_grid: tuple[float, ...] = _grid(0.5, 12.0, 0.5)
    runs: int = 50
    max_outer_iter: int = 30
    workers: int = 1

    def __post_init__(self):
        self.plan.validate(self.net)
        if isinstance(self.bad_spec, FixedBadData):
            for d in self.bad_spec.descriptors:
                self.plan.index(d.kind, d.i, d.j)  # raises KeyError if absent
        if any(s < 0 for s in self.sigmas):
            raise ValueError("sigmas must be nonnegative")
        if not self.lambda_grid or any(v < 0 for v in self.lambda_grid):
            raise ValueError("lambda_grid must be nonempty and nonnegative")
        if self.runs < 1 or self.workers < 1:
            raise ValueError("runs and workers must be positive")

    def bad_indices(self) -> list[int]:
        if not isinstance(self.bad_spec, FixedBadData):
            raise TypeError("bad data is random")
        return [self.plan.index(d.kind, d.i, d.j) for d in self.bad_spec.descriptors]


# P injection at buses 2, 3, 5, 12, 14 and Q injection at bus 14 (bus ids)
DEFAULT_BAD = (("PI", 2), ("PI", 3), ("PI", 5), ("PI", 12), ("PI", 14), ("QI", 14))


def default_bad_data(net: PowerNetwork, plan: MeasurementPlan) -> tuple[Measurement, ...]:
    """The sign-flip pattern used for the noise sweep, on buses present in ``net``."""
    out = []
    for kind, bus in DEFAULT_BAD:
        if bus in net.bus_ids:
            out.append(Measurement(kind, net.index_of(bus)))
    return tuple(out)


# -- shared helpers ---------------------------------------------------------


def _map(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _best_lambda(rows: Sequence[TrialRecord]):
    ok = [r for r in rows if r.converged and math.isfinite(r.error)]
    if not ok:
        return None
    emin = min(r.error for r in ok)
    lam = max(r.lam for r in ok if r.error <= emin + TIE_TOL)
    return lam, emin


def _lambda_star_summary(name, seed, sweep_var, points, records):
    out = []
    for value in points:
        per_run: dict[int, list[TrialRecord]] = {}
        for r in records:
            key = r.sigma if sweep_var == "sigma" else r.rho
            if key == value:
                per_run.setdefault(r.trial, []).append(r)
        best = [b for b in (_best_lambda(v) for _, v in sorted(per_run.items())) if b is not None]
        lam = float(np.mean([b[0] for b in best])) if best else math.nan
        err = float(np.mean([b[1] for b in best])) if best else math.nan
        out.append(SummaryRow(name, seed, sweep_var, value, lam, err))
    return out


def mean_errors(records: Sequence[TrialRecord], sweep_var: str = "rho") -> dict[tuple[float, float], float]:
    """Mean converged error per ``(sweep value, lambda)``."""
    acc: dict[tuple[float, float], list[float]] = {}
    for r in records:
        if r.converged and math.isfinite(r.error):
            key = (r.sigma if sweep_var == "sigma" else r.rho, r.lam)
            acc.setdefault(key, []).append(r.error)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def _rho_summary(name, seed, rhos, lambdas, records):
    means = mean_errors(records, "rho")
    out = []
    for rho in rhos:
        vals = [(means[(rho, lam)], lam) for lam in lambdas if (rho, lam) in means]
        if vals:
            err, lam = min(vals, key=lambda v: (v[0], -v[1]))
        else:
            err, lam = math.nan, math.nan
        out.append(SummaryRow(name, seed, "rho", rho, lam, err))
    return out


# -- Gaussian experiment ----------------------------------------------------


@dataclass(frozen=True)
class _Exp1Draw:
    H: np.ndarray
    x: np.ndarray
    noise: np.ndarray
    order: np.ndarray
    gross: np.ndarray


def _exp1_draw(cfg: Exp1Config, seed: int, trial: int) -> _Exp1Draw:
    rs = RngStream(seed, trial)
    H = gaussian_sample(rs, cfg.n * cfg.m).reshape(cfg.n, cfg.m)
    x = gaussian_sample(rs, cfg.m)
    x /= np.linalg.norm(x)
    noise = gaussian_sample(rs, cfg.n)
    order = rs.permutation(cfg.n)
    gross = gaussian_sample(rs, cfg.n)
    return _Exp1Draw(H, x, noise, order, gross)


def _exp1_observe(cfg: Exp1Config, d: _Exp1Draw, sigma: float, bad: int) -> np.ndarray:
    y = d.H @ d.x
    idx = d.order[:bad]
    if cfg.error_model == "sign_flip":
        y[idx] = -y[idx]
    else:
        y[idx] += cfg.error_std * d.gross[idx]
    return y + sigma * d.noise


def _exp1_solve(name, cfg, seed, trial, d, y, sigma, rho):
    rows = []
    for lam in cfg.lambda_grid:
        try:
            sol = decoder.solve(decoder.DecodeProblem.lagrangian(y, d.H, lam))
            err = float(np.linalg.norm(sol.x_hat - d.x))
            ok, its = sol.converged, sol.iterations
        except RobustSEError:
            err, ok, its = math.nan, False, 0
        rows.append(TrialRecord(name, seed, trial, cfg.n, cfg.m, sigma, rho, lam, err, ok, its))
    return rows


def _exp1_lambda_trial(job):
    cfg, seed, trial = job
    d = _exp1_draw(cfg, seed, trial)
    rho = cfg.bad_count / cfg.n
    out = {}
    for sigma in cfg.sigmas:
        y = _exp1_observe(cfg, d, sigma, cfg.bad_count)
        out[sigma] = _exp1_solve("exp1-lambda", cfg, seed, trial, d, y, sigma, rho)
    return out


def _exp1_rho_trial(job):
    cfg, seed, trial = job
    d = _exp1_draw(cfg, seed, trial)
    sigma = cfg.sigmas[0]
    out = {}
    for rho in cfg.rhos:
        y = _exp1_observe(cfg, d, sigma, int(round(rho * cfg.n)))
        out[rho] = _exp1_solve("exp1-rho", cfg, seed, trial, d, y, sigma, rho)
    return out


def _collect(per_trial, points):
    # order rows by (sweep point, trial, lambda)
    return [r for p in points for trial_rows in per_trial for r in trial_rows[p]]


def run_exp1_lambda_sweep(cfg: Exp1Config, seed: int) -> ExperimentResult:
    """Error versus lambda at each noise level, with lambda* per level."""
    jobs = [(cfg, seed, t) for t in range(cfg.runs)]
    records = _collect(_map(_exp1_lambda_trial, jobs, cfg.workers), cfg.sigmas)
    return ExperimentResult(records, _lambda_star_summary("exp1-lambda", seed, "sigma", cfg.sigmas, records))


def run_exp1_rho_sweep(cfg: Exp1Config, seed: int) -> ExperimentResult:
    """Error versus the fraction of corrupted measurements, per lambda.

    The noise level is ``cfg.sigmas[0]``; ``round(rho * n)`` measurements are
    corrupted at each ``rho`` (nested sets across ``rho`` within a trial).
    """
    if len(cfg.sigmas) != 1 or not cfg.rhos:
        raise ValueError("rho sweep needs exactly one sigma and at least one rho")
    jobs = [(cfg, seed, t) for t in range(cfg.runs)]
    records = _collect(_map(_exp1_rho_trial, jobs, cfg.workers), cfg.rhos)
    return ExperimentResult(records, _rho_summary("exp1-rho", seed, cfg.rhos, cfg.lambda_grid, records))


# -- power-network experiment -----------------------------------------------


def true_state(net: PowerNetwork, stream: RngStream) -> StateVector:
    """Flat start plus a bounded uniform perturbation."""
    k = net.bus_count
    mags = stream.uniform(k, *MAG_RANGE)
    angles = stream.uniform(k - 1, *ANGLE_RANGE)
    return StateVector(mags, angles, net.reference)


def _exp2_estimates(name, cfg, seed, trial, x_true, y, sigma, rho):
    rows = []
    n, m = len(cfg.plan), cfg.net.state_dim
    xt = x_true.to_array()
    for lam in cfg.lambda_grid:
        try:
            res = estimate(cfg.net, cfg.plan, y, EstimatorConfig(lam, max_outer_iter=cfg.max_outer_iter))
            err = float(np.linalg.norm(res.x_hat.to_array() - xt))
            ok = res.converged and res.inner_converged and math.isfinite(err)
            its = res.outer_iterations
        except RobustSEError:
            err, ok, its = math.nan, False, 0
        rows.append(TrialRecord(name, seed, trial, n, m, sigma, rho, lam, err, ok, its))
    return rows


def _exp2_trial(job):
    cfg, seed, trial, rhos = job
    rs = RngStream(seed, trial)
    x_true = true_state(cfg.net, rs)
    h = evaluate_h(cfg.net, cfg.plan, x_true)
    n = h.size
    noise = gaussian_sample(rs, n)
    out = {}
    if isinstance(cfg.bad_spec, FixedBadData):
        bad = cfg.bad_indices()
        rho = len(bad) / n
        for sigma in cfg.sigmas:
            y = h.copy()
            y[bad] = -y[bad]
            out[sigma] = _exp2_estimates("exp2-sigma", cfg, seed, trial, x_true, y + sigma * noise, sigma, rho)
    else:
        order = rs.permutation(n)
        gross = gaussian_sample(rs, n)
        sigma = cfg.sigmas[0]
        for rho in rhos:
            idx = order[: int(round(rho * n))]
            y = h + sigma * noise
            y[idx] += cfg.bad_spec.error_std * gross[idx]
            out[rho] = _exp2_estimates("exp2-rho", cfg, seed, trial, x_true, y, sigma, rho)
    return out


def run_exp2(cfg: Exp2Config, seed: int) -> ExperimentResult:
    """Estimation error versus lambda at each noise level.

    With :class:`FixedBadData` the listed measurements are sign-flipped and
    lambda* is reported per noise level. With :class:`RandomBadData` this is a
    one-point rho sweep; see :func:`run_exp2_rho_sweep`.
    """
    if isinstance(cfg.bad_spec, RandomBadData):
        return run_exp2_rho_sweep(cfg, (cfg.bad_spec.rho,), seed)
    jobs = [(cfg, seed, t, ()) for t in range(cfg.runs)]
    records = _collect(_map(_exp2_trial, jobs, cfg.workers), cfg.sigmas)
    return ExperimentResult(records, _lambda_star_summary("exp2-sigma", seed, "sigma", cfg.sigmas, records))


def run_exp2_rho_sweep(cfg: Exp2Config, rhos: Sequence[float], seed: int) -> ExperimentResult:
    """Estimation error versus the fraction of corrupted measurements.

    Uses the noise level ``cfg.sigmas[0]`` and the error spread of
    ``cfg.bad_spec`` (a :class:`RandomBadData`).
    """
    if not isinstance(cfg.bad_spec, RandomBadData):
        raise TypeError("rho sweep needs RandomBadData")
    rhos = tuple(float(r) for r in rhos)
    if not rhos or any(not 0 <= r <= 1 for r in rhos):
        raise ValueError("rhos must be nonempty and in [0, 1]")
    jobs = [(cfg, seed, t, rhos) for t in range(cfg.runs)]
    records = _collect(_map(_exp2_trial, jobs, cfg.workers), rhos)
    return ExperimentResult(records, _rho_summary("exp2-rho", seed, rhos, cfg.lambda_grid, records))
