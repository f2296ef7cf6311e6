import numpy as np
import pytest

from app.dp import simulate_panel, solve_stationary
from app.errors import InvalidConfigError, PeriodError
from app.estimators import (
    REGISTRY,
    AMEstimator,
    FD2Estimator,
    FDBiasCorrectedEstimator,
    HMEstimator,
    create_estimator,
)


def test_registry_and_factory(entry):
    assert set(REGISTRY) == {"FD", "FD2", "HM", "AM", "FD_BC"}
    estimator = create_estimator("FD2", entry, rho=3)
    assert isinstance(estimator, FD2Estimator)
    assert estimator.lookahead == 2
    with pytest.raises(InvalidConfigError):
        create_estimator("GMM", entry)
    with pytest.raises(InvalidConfigError):
        create_estimator("FD", entry, rho=0)


def test_estimation_periods(entry, nonstationary):
    assert create_estimator("FD", entry, rho=3).estimation_periods(40) == [1]
    assert create_estimator("FD", nonstationary).estimation_periods() == [1, 2, 3]
    assert create_estimator("FD2", nonstationary).estimation_periods() == [1, 2]
    assert create_estimator("FD2", nonstationary).estimation_periods(3) == [1]
    assert create_estimator("FD", nonstationary, rho=4).estimation_periods() == []


def test_hm_is_stationary_only(nonstationary):
    with pytest.raises(InvalidConfigError):
        HMEstimator(nonstationary)


def test_weights_are_prepared_once(entry_dynamic):
    estimator = create_estimator("FD", entry_dynamic, rho=2)
    first = estimator.prepare()
    assert first > 0.0
    plan = estimator.plans()[1]
    assert estimator.prepare() == first
    assert estimator.plans()[1] is plan
    assert len(estimator.residuals()) == 2


def test_value_differences_record_timings(entry_dynamic, entry_dynamic_solution):
    for name in ("FD", "HM"):
        timings = {}
        lins = create_estimator(name, entry_dynamic).value_differences(
            entry_dynamic_solution.ccp, timings=timings
        )
        assert set(lins) == {1}
        assert {"weights_or_inv", "assembly"} <= set(timings)


def test_state_only_weights_are_exact_for_renewal(renewal):
    solution = solve_stationary(renewal)
    estimator = AMEstimator(renewal)
    assert estimator.residuals()[0] <= 1e-10
    lin = estimator.value_differences(solution.ccp)[1]
    np.testing.assert_allclose(lin.vtilde(renewal.theta), solution.vtilde.at(), atol=1e-8)


def test_bias_correction_needs_solution(entry_dynamic, entry_dynamic_solution):
    panel = simulate_panel(entry_dynamic_solution, entry_dynamic, N=20, T=10, seed=1)
    estimator = FDBiasCorrectedEstimator(entry_dynamic)
    with pytest.raises(InvalidConfigError):
        estimator.estimate(panel, entry_dynamic_solution.ccp)

    lin = estimator.value_differences(entry_dynamic_solution.ccp, entry_dynamic_solution)[1]
    np.testing.assert_allclose(
        lin.vtilde(entry_dynamic.theta), entry_dynamic_solution.vtilde.at(), atol=1e-8
    )


def test_nonstationary_bias_correction_is_exact(nonstationary, nonstationary_solution):
    estimator = FDBiasCorrectedEstimator(nonstationary)
    lins = estimator.value_differences(nonstationary_solution.ccp, nonstationary_solution)
    assert sorted(lins) == [1, 2, 3]
    for t, lin in lins.items():
        np.testing.assert_allclose(
            lin.vtilde(nonstationary.theta), nonstationary_solution.vtilde.at(t), atol=1e-8
        )


def test_estimate_report(entry_dynamic, entry_dynamic_solution):
    panel = simulate_panel(entry_dynamic_solution, entry_dynamic, N=200, T=20, seed=2)
    report = create_estimator("FD2", entry_dynamic).estimate(panel, entry_dynamic_solution.ccp)
    assert report.converged
    assert report.n_obs == 200 * 20
    assert set(report.timings) == {"weights_or_inv", "assembly", "optimize", "total"}
    assert report.timings["total"] == pytest.approx(
        sum(v for k, v in report.timings.items() if k != "total")
    )
    payload = report.to_dict()
    assert list(payload["theta"]) == list(entry_dynamic.utility.names)
    assert payload["residuals"][1] <= 1e-10


def test_nonstationary_estimate_uses_available_periods(nonstationary, nonstationary_solution):
    panel = simulate_panel(nonstationary_solution, nonstationary, N=300, T=4, seed=5)
    report = create_estimator("FD2", nonstationary).estimate(panel, nonstationary_solution.ccp)
    assert report.n_obs == 300 * 2

    short = simulate_panel(nonstationary_solution, nonstationary, N=10, T=2, seed=5)
    with pytest.raises(PeriodError):
        create_estimator("FD2", nonstationary).estimate(short, nonstationary_solution.ccp)
