import numpy as np
import pytest

from mvbsde import monotone_ops as mo
from mvbsde import presets as P
from mvbsde.errors import GridTooCoarse, ValidationError
from mvbsde.forward_mvsde import InitialLaw, TimeGrid
from mvbsde.pvi import (
    FDGrid,
    Model,
    compare_probabilistic_vs_fd,
    evaluate_u,
    fd_check_resolution,
    fd_doubling_errors,
    fd_solve_penalized_pde,
)
from mvbsde.regression import RegressionBasis

BM = P.forward_from_config({"s0": 1.0})
ZERO = P.driver_from_config({"preset": "zero"})
SQUARE = P.terminal_from_config({"preset": "square"})


def heat_model(n=20000, n_steps=100, seed=3):
    return Model(BM, InitialLaw(), mo.Zero(), ZERO, SQUARE, RegressionBasis(degree=2), TimeGrid(0, 1, n_steps),
                 n, seed, 0.1)


def test_terminal_time_is_exact():
    est = evaluate_u(heat_model(n=100), 1.0, 1.5)
    assert est.value[0] == 2.25 and est.std_error[0] == 0.0


def test_time_snaps_to_grid():
    est = evaluate_u(heat_model(n=2000, n_steps=10), 0.52, 0.0)
    assert est.t == pytest.approx(0.5) and est.snapped


def test_heat_moment_probabilistic():
    est = evaluate_u(heat_model(), 0.0, 0.0)
    assert abs(est.value[0] - 1.0) <= max(3 * est.std_error[0], 5e-2)
    assert est.std_error[0] > 0


def test_heat_moment_finite_differences():
    fd = fd_solve_penalized_pde(0.1, BM, ZERO, mo.Zero(), SQUARE, FDGrid(n_x=401), TimeGrid(0, 1, 400))
    assert abs(fd.value_at(0.0, 0.0) - 1.0) <= 2e-3
    np.testing.assert_allclose(fd.value_at(0.5, [0.0, 1.0]), [0.5, 1.5], atol=2e-3)


def test_constant_driver_is_exact_in_time():
    c = 0.7
    grid = TimeGrid(0, 1, 40)
    fd = fd_solve_penalized_pde(0.1, BM, P.driver_from_config({"preset": "constant", "c": c}), mo.Zero(),
                                P.terminal_from_config({"preset": "constant", "value": 0.0}), FDGrid(n_x=101), grid)
    expected = c * (grid.T - grid.times)[:, None]
    np.testing.assert_allclose(fd.u, np.broadcast_to(expected, fd.u.shape), atol=1e-13)


def test_doubling_errors_shrink():
    errs = fd_doubling_errors(0.1, BM, ZERO, mo.Zero(), SQUARE, FDGrid(n_x=61), TimeGrid(0, 1, 20), 0.0,
                              np.linspace(-2, 2, 5), levels=4)
    assert all(a / b >= 1.5 for a, b in zip(errs, errs[1:]))


def test_coarse_grid_reported():
    kink = P.terminal_from_config({"preset": "positive_part"})
    with pytest.raises(GridTooCoarse):
        fd_check_resolution(0.1, BM, ZERO, mo.Zero(), kink, FDGrid(n_x=17), TimeGrid(0, 1, 4), 0.0, [0.0], 1e-4)
    # x^2 is exact in the interior; only the frozen boundary value leaks in
    assert fd_check_resolution(0.1, BM, ZERO, mo.Zero(), SQUARE, FDGrid(n_x=17), TimeGrid(0, 1, 4), 0.0, [0.0], 1e-4) < 1e-4


def test_fd_requires_measure_independent_data():
    with pytest.raises(ValidationError):
        fd_solve_penalized_pde(0.1, BM, P.driver_from_config(P.SHIPPED_DRIVERS["mean_field"]), mo.Zero(), SQUARE,
                               FDGrid(), TimeGrid(0, 1, 10))


@pytest.mark.parametrize("boundary", ["dirichlet-from-terminal", "one-sided-extrapolation"])
def test_boundary_choices_agree_in_the_interior(boundary):
    grid = TimeGrid(0, 1, 100)
    fd = fd_solve_penalized_pde(0.025, BM, P.driver_from_config({"preset": "constant", "c": -1.0}),
                                mo.NormalConeInterval(0, "inf"), P.terminal_from_config({"preset": "positive_part"}),
                                FDGrid(boundary=boundary), grid)
    ref = fd_solve_penalized_pde(0.025, BM, P.driver_from_config({"preset": "constant", "c": -1.0}),
                                 mo.NormalConeInterval(0, "inf"), P.terminal_from_config({"preset": "positive_part"}),
                                 FDGrid(x_lo=-10, x_hi=10, n_x=667), grid)
    np.testing.assert_allclose(fd.value_at(0.0, np.linspace(-2, 2, 11)), ref.value_at(0.0, np.linspace(-2, 2, 11)),
                               atol=2e-3)


def test_constrained_compare_small_sample():
    model = Model(BM, InitialLaw(), mo.NormalConeInterval(0, "inf"), P.driver_from_config({"preset": "constant", "c": -1.0}),
                  P.terminal_from_config({"preset": "positive_part"}), RegressionBasis(degree=4), TimeGrid(0, 1, 50),
                  20000, 7, 0.025)
    out = compare_probabilistic_vs_fd(model, 0.025, np.linspace(-2, 2, 5))
    assert out["sup_error"] <= 5e-2
    assert len(out["table"]) == 5 and out["discretization_budget"] < 1e-2


def test_identity_terminal_on_half_line_agrees():
    """The unprojected terminal x with the half-line cone: both routes penalize the same way."""
    model = Model(BM, InitialLaw(), mo.NormalConeInterval(0, "inf"), ZERO, P.terminal_from_config({"preset": "identity"}),
                  RegressionBasis(degree=4), TimeGrid(0, 1, 50), 20000, 2, 0.025)
    out = compare_probabilistic_vs_fd(model, 0.025, [-1.0, 0.0, 1.0])
    assert out["sup_error"] <= 5e-2


def test_lipschitz_in_state_and_law():
    coeffs = P.forward_from_config({"c1": -0.5, "c2": 0.5, "s0": 1.0})
    law = InitialLaw("gaussian", {"std": 1.0})
    model = Model(coeffs, law, mo.NormalConeInterval(0, "inf"), P.driver_from_config(P.SHIPPED_DRIVERS["lipschitz_mix"]),
                  P.terminal_from_config({"preset": "positive_part"}), RegressionBasis(degree=3), TimeGrid(0, 1, 20),
                  5000, 4, 0.05, threads=1)
    base = evaluate_u(model, 0.0, 0.3).value[0]
    consts = []
    for s in (0.1, 0.01):
        moved = evaluate_u(model, 0.0, 0.3 + s, initial=law.shifted(s)).value[0]
        # the shifted Gaussian is at distance s from the original in W2
        consts.append(abs(moved - base) / (s + s))
    assert consts[0] > 0 and abs(consts[0] - consts[1]) / max(consts) < 0.5


def test_value_depends_on_law_only_through_the_law():
    coeffs = P.forward_from_config({"c2": 0.5, "s0": 1.0})
    model = Model(coeffs, InitialLaw("constant", {"value": 1.0}), mo.Zero(), ZERO, SQUARE, RegressionBasis(degree=2),
                  TimeGrid(0, 1, 20), 4000, 1, 0.1)
    # the Euler mean of the law flow is m_k = (1 + h/2)^k, and X_T = h/2 sum_k m_k + W_T from x = 0
    est = evaluate_u(model, 0.0, 0.0)
    h = 1 / 20
    shift = 0.5 * h * sum((1 + 0.5 * h) ** k for k in range(20))
    assert est.value[0] == pytest.approx(shift**2 + 1.0, abs=3 * est.std_error[0] + 2e-2)
