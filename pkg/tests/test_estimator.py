import numpy as np
import pytest

from robustse.cases import load_bundled, synthetic_case
from robustse.estimator import EstimatorConfig, estimate, iterated_least_squares
from robustse.powerflow import StateVector, evaluate_h, flat_start

# states near the flat start on the bundled 4-bus case (angles within 0.2 rad)
FOUR_BUS_STATES = [
    ([1.02, 0.99, 1.01, 0.98], [-0.05, -0.08, -0.11]),
    ([1.0, 0.97, 1.03, 0.96], [-0.1, -0.04, -0.15]),
    ([1.04, 1.0, 0.99, 1.01], [0.06, -0.03, 0.02]),
]


@pytest.fixture(scope="module")
def four_bus():
    return load_bundled("four_bus")


def error(res, xt):
    return float(np.linalg.norm(res.x_hat.to_array() - xt.to_array()))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(lam=-1.0), dict(lam=1.0, inner_tol=0.0), dict(lam=1.0, outer_tol=-1e-3), dict(lam=1.0, max_outer_iter=0)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            EstimatorConfig(**kwargs)

    def test_defaults(self):
        cfg = EstimatorConfig(7.0)
        assert cfg.outer_tol == 1e-8 and cfg.max_outer_iter == 50

    def test_length_checked(self, four_bus):
        net, plan = four_bus
        with pytest.raises(ValueError):
            estimate(net, plan, np.zeros(len(plan) - 1), EstimatorConfig(7.0))


class TestEstimate:
    def test_flat_start_fixed_point(self, four_bus):
        net, plan = four_bus
        x0 = flat_start(net)
        res = estimate(net, plan, evaluate_h(net, plan, x0), EstimatorConfig(7.0))
        assert res.converged and res.outer_iterations == 1
        assert np.array_equal(res.x_hat.to_array(), x0.to_array())
        assert res.final_objective == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("mags, angles", FOUR_BUS_STATES)
    def test_exact_recovery(self, four_bus, mags, angles):
        net, plan = four_bus
        xt = StateVector(np.array(mags), np.array(angles))
        res = estimate(net, plan, evaluate_h(net, plan, xt), EstimatorConfig(7.0))
        assert res.converged and res.outer_iterations <= 10
        assert error(res, xt) <= 1e-6
        assert res.per_iteration_step_norms[-1] <= 1e-8
        assert len(res.per_iteration_step_norms) == res.outer_iterations

    @pytest.mark.parametrize("bad", [0, 5, 9, 13, 20, 27])
    def test_single_flip_rejected(self, four_bus, bad):
        net, plan = four_bus
        xt = StateVector(*map(np.array, FOUR_BUS_STATES[0]))
        y = evaluate_h(net, plan, xt)
        y[bad] = -y[bad]
        res = estimate(net, plan, y, EstimatorConfig(7.0))
        assert res.converged
        assert error(res, xt) <= 1e-3
        # the flipped measurement is the only sizeable residual
        resid = np.abs(y - evaluate_h(net, plan, res.x_hat))
        assert np.argmax(resid) == bad

    def test_large_lambda_matches_least_squares(self, four_bus):
        net, plan = four_bus
        xt = StateVector(*map(np.array, FOUR_BUS_STATES[1]))
        y = evaluate_h(net, plan, xt)
        res = estimate(net, plan, y, EstimatorConfig(1e4))
        ls = iterated_least_squares(net, plan, y)
        assert np.linalg.norm(res.x_hat.to_array() - ls.to_array()) <= 1e-4

    def test_small_lambda_is_gauss_newton(self, four_bus):
        # with lam <= 1 each subproblem is least squares, so the iterates coincide
        net, plan = four_bus
        xt = StateVector(*map(np.array, FOUR_BUS_STATES[2]))
        y = evaluate_h(net, plan, xt) + 0.01 * np.cos(np.arange(len(plan)))
        res = estimate(net, plan, y, EstimatorConfig(0.5))
        ls = iterated_least_squares(net, plan, y)
        assert np.allclose(res.x_hat.to_array(), ls.to_array(), atol=1e-9)

    def test_cap_reports_nonconvergence(self, four_bus):
        net, plan = four_bus
        xt = StateVector(*map(np.array, FOUR_BUS_STATES[0]))
        res = estimate(net, plan, evaluate_h(net, plan, xt), EstimatorConfig(7.0, max_outer_iter=2))
        assert not res.converged
        assert res.outer_iterations == 2
        assert res.per_iteration_step_norms[-1] > 1e-8

    def test_custom_start(self, four_bus):
        net, plan = four_bus
        xt = StateVector(*map(np.array, FOUR_BUS_STATES[0]))
        res = estimate(net, plan, evaluate_h(net, plan, xt), EstimatorConfig(7.0), x0=xt)
        assert res.outer_iterations == 1 and error(res, xt) == 0.0

    def test_ring14_with_flips(self):
        net, plan = load_bundled("ring14")
        mags = 1 + 0.03 * np.sin(np.arange(14))
        xt = StateVector(mags, 0.1 * np.cos(np.arange(13)))
        y = evaluate_h(net, plan, xt)
        y[[3, 40, 77]] = -y[[3, 40, 77]]
        res = estimate(net, plan, y, EstimatorConfig(8.0))
        assert res.converged and error(res, xt) <= 1e-6


def test_iterated_least_squares_recovers(four_bus):
    net, plan = four_bus
    xt = StateVector(*map(np.array, FOUR_BUS_STATES[0]))
    ls = iterated_least_squares(net, plan, evaluate_h(net, plan, xt))
    assert np.linalg.norm(ls.to_array() - xt.to_array()) <= 1e-10


def test_synthetic_case_identifiable():
    net, plan = synthetic_case(10, 4, 7)
    xt = StateVector(1 + 0.02 * np.cos(np.arange(10)), 0.05 * np.sin(np.arange(9)))
    res = estimate(net, plan, evaluate_h(net, plan, xt), EstimatorConfig(8.0))
    assert res.converged and error(res, xt) <= 1e-8
