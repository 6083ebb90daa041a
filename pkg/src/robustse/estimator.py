"""Iterative linearized estimation for the nonlinear measurement model.

Starting from the flat start, each outer iteration linearizes ``h`` at the
current state and solves the robust decoding problem for the increment::

    min_{dx, z} ||(y - h(x)) - J(x) dx - z||_1 + lam ||z||_2
    x <- x + dx

until ``||dx||_2`` falls below ``outer_tol``. No damping or line search is
applied; divergence shows up as ``converged=False``. The inner solver
tolerance is ``inner_tol * min(1, last step norm)``, floored at 1e-12.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import decoder
from .powerflow import MeasurementPlan, PowerNetwork, StateVector, evaluate_h, flat_start, jacobian

__all__ = ["EstimateResult", "EstimatorConfig", "estimate", "iterated_least_squares"]

# the inner tolerance tightens with the last step but stops where double
# precision certificates bottom out
INNER_TOL_FLOOR = 1e-12


@dataclasses.dataclass(frozen=True)
class EstimatorConfig:
    lam: float
    inner_tol: float = 1e-8
    outer_tol: float = 1e-8
    max_outer_iter: int = 50
    inner_max_iter: int = 100_000

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be nonnegative")
        if not (self.inner_tol > 0 and self.outer_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_outer_iter < 1:
            raise ValueError("max_outer_iter must be at least 1")


@dataclasses.dataclass
class EstimateResult:
    x_hat: StateVector
    outer_iterations: int
    converged: bool
    per_iteration_step_norms: list[float] = dataclasses.field(default_factory=list)
    final_objective: float = math.nan
    inner_converged: bool = True


def _objective(y, hx, lam, z):
    # z is the noise split from the last linearization
    return float(np.abs(y - hx - z).sum() + lam * np.linalg.norm(z))


def estimate(
    net: PowerNetwork,
    plan: MeasurementPlan,
    y,
    cfg: EstimatorConfig,
    x0: StateVector | None = None,
) -> EstimateResult:
    """Estimate the network state from measurements ``y``.

    Raises
    ------
    RankDeficientError
        If the Jacobian loses column rank at some iterate.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size != len(plan):
        raise ValueError(f"y has {y.size} entries, plan has {len(plan)}")
    x = (x0 or flat_start(net)).to_array()
    ref = net.reference
    steps: list[float] = []
    inner_ok = True
    z = np.zeros_like(y)
    warm = None
    last_step = math.inf
    converged = False
    k = 0
    for k in range(1, cfg.max_outer_iter + 1):
        state = StateVector.from_array(x, ref)
        dy = y - evaluate_h(net, plan, state)
        H = jacobian(net, plan, state)
        sol = decoder.solve(
            decoder.DecodeProblem.lagrangian(dy, H, cfg.lam),
            tol=max(cfg.inner_tol * min(1.0, last_step), INNER_TOL_FLOOR),
            max_iter=cfg.inner_max_iter,
            warm_start=warm,
        )
        # the next increment is small: keep the split and dual, restart dx at 0
        warm = dataclasses.replace(sol, x_hat=np.zeros_like(sol.x_hat))
        inner_ok &= sol.converged
        z = sol.z_hat
        x = x + sol.x_hat
        last_step = float(np.linalg.norm(sol.x_hat))
        steps.append(last_step)
        if not np.all(np.isfinite(x)):
            break
        if last_step <= cfg.outer_tol:
            converged = True
            break
    x_hat = StateVector.from_array(x, ref)
    final = _objective(y, evaluate_h(net, plan, x_hat), cfg.lam, z) if np.all(np.isfinite(x)) else math.nan
    return EstimateResult(x_hat, k, converged, steps, final, inner_ok)


def iterated_least_squares(net, plan, y, tol=1e-10, max_iter=50) -> StateVector:
    """Plain Gauss-Newton least squares, for comparison with :func:`estimate`."""
    y = np.asarray(y, dtype=float)
    x = flat_start(net).to_array()
    for _ in range(max_iter):
        state = StateVector.from_array(x, net.reference)
        dx = np.linalg.lstsq(jacobian(net, plan, state), y - evaluate_h(net, plan, state), rcond=None)[0]
        x = x + dx
        if np.linalg.norm(dx) <= tol:
            break
    return StateVector.from_array(x, net.reference)
