import numpy as np
import pytest

from app.ccp import CcpTable
from app.config import EntryModelConfig
from app.dp import Panel, solve_stationary
from app.errors import DimensionError, InvalidConfigError, PeriodError
from app.estimate import (
    LinearValueDiff,
    assemble_linear,
    design,
    estimate_ccp,
    fd_loglik,
    logit_loglik,
    newton_maximize,
)
from app.estimators import create_estimator
from app.markov import diff_transition, entry_model
from app.weights import solve_plan, solve_sequential


def small_panel(x, d, N, T):
    return Panel(
        i=np.repeat(np.arange(N), T),
        t=np.tile(np.arange(1, T + 1), N),
        x=np.asarray(x),
        d=np.asarray(d),
        N=N,
        T=T,
        seed=0,
    )


def test_one_period_representation_is_exact(entry, entry_solution):
    plan = solve_plan(entry.transitions, 1)
    lin = assemble_linear(plan, entry.transitions, entry.utility, entry_solution.ccp, entry.beta)
    np.testing.assert_allclose(lin.vtilde(entry.theta), entry_solution.vtilde.at(), rtol=1e-6, atol=1e-8)


def test_optimal_two_period_representation_is_exact(entry_dynamic, entry_dynamic_solution):
    ts = entry_dynamic.transitions
    p = entry_dynamic_solution.ccp
    truth = entry_dynamic_solution.vtilde.at()

    optimal = solve_plan(ts, 2, "optimal")
    lin = assemble_linear(optimal, ts, entry_dynamic.utility, p, entry_dynamic.beta)
    np.testing.assert_allclose(lin.vtilde(entry_dynamic.theta), truth, rtol=1e-6, atol=1e-8)

    one = solve_plan(ts, 1)
    biased = assemble_linear(one, ts, entry_dynamic.utility, p, entry_dynamic.beta)
    assert np.abs(biased.vtilde(entry_dynamic.theta) - truth).max() > 1e-4

    corrected = assemble_linear(
        one, ts, entry_dynamic.utility, p, entry_dynamic.beta, V=entry_dynamic_solution.value()
    )
    np.testing.assert_allclose(corrected.vtilde(entry_dynamic.theta), truth, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("gamma_a", [0.0, 0.5])
def test_oracle_representation_holds_with_saturated_choices(gamma_a):
    model = entry_model(EntryModelConfig(K_z=4, K_o=2, gamma_a=gamma_a))
    assert model.state_count == 1024
    solution = solve_stationary(model)
    truth = solution.vtilde.at()
    # 部分状态的选择概率极接近 0 或 1
    assert np.abs(truth).max() > 20.0

    plan = solve_plan(model.transitions, 2, "optimal")
    lin = assemble_linear(plan, model.transitions, model.utility, solution.ccp, model.beta)
    np.testing.assert_allclose(lin.vtilde(model.theta), truth, rtol=1e-6, atol=1e-6)


def test_nonstationary_representations(nonstationary, nonstationary_solution):
    ts = nonstationary.transitions
    p = nonstationary_solution.ccp
    for t in (1, 2):
        plan = solve_plan(ts, 2, "optimal", t=t)
        lin = assemble_linear(plan, ts, nonstationary.utility, p, nonstationary.beta)
        assert lin.t == t
        np.testing.assert_allclose(
            lin.vtilde(nonstationary.theta), nonstationary_solution.vtilde.at(t), rtol=1e-6, atol=1e-8
        )

    # 最后一期之后价值为零，t = T−1 的一期表示是精确的
    last = ts.horizon - 1
    plan = solve_plan(ts, 1, t=last)
    lin = assemble_linear(plan, ts, nonstationary.utility, p, nonstationary.beta)
    np.testing.assert_allclose(
        lin.vtilde(nonstationary.theta), nonstationary_solution.vtilde.at(last), rtol=1e-6, atol=1e-8
    )

    with pytest.raises(PeriodError):
        assemble_linear(solve_plan(ts, 2, t=3), ts, nonstationary.utility, p, nonstationary.beta)


def test_zero_discount_collapses_to_static_logit(entry_dynamic, entry_dynamic_solution):
    ts = entry_dynamic.transitions
    plan = solve_plan(ts, 2, "optimal")
    lin = assemble_linear(plan, ts, entry_dynamic.utility, entry_dynamic_solution.ccp, 0.0)
    utility = entry_dynamic.utility
    np.testing.assert_allclose(lin.H, utility.phi1 - utility.phi0)
    np.testing.assert_allclose(lin.h, 0.0)


def test_assembly_checks_dimensions(entry_dynamic, renewal):
    plan = solve_sequential(diff_transition(renewal.transitions), renewal.transitions.F(0), 1)
    p = CcpTable.from_probabilities(np.full(entry_dynamic.state_count, 0.5))
    with pytest.raises(DimensionError):
        assemble_linear(plan, entry_dynamic.transitions, entry_dynamic.utility, p, 0.9)
    with pytest.raises(InvalidConfigError):
        assemble_linear(plan, renewal.transitions, renewal.utility, p, 0.9, rho=2)


def test_coin_flip_likelihood(rng):
    H = rng.normal(size=(40, 3))
    d = rng.integers(0, 2, size=40).astype(float)
    value, grad = logit_loglik(np.zeros(3), H, np.zeros(40), d)
    assert value == pytest.approx(-40 * np.log(2.0))
    np.testing.assert_allclose(grad, H.T @ (d - 0.5))


def test_gradient_matches_finite_differences(rng):
    H = rng.normal(size=(30, 4))
    h = rng.normal(size=30)
    d = rng.integers(0, 2, size=30).astype(float)
    theta = rng.normal(size=4)
    _, grad = logit_loglik(theta, H, h, d)
    eps = 1e-6
    numeric = np.array([
        (logit_loglik(theta + eps * e, H, h, d)[0] - logit_loglik(theta - eps * e, H, h, d)[0]) / (2 * eps)
        for e in np.eye(4)
    ])
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-6)


def test_likelihood_is_concave(rng):
    H = rng.normal(size=(25, 3))
    h = rng.normal(size=25)
    d = rng.integers(0, 2, size=25).astype(float)
    for _ in range(20):
        a, b = rng.normal(size=(2, 3)) * 3.0
        mid = logit_loglik((a + b) / 2, H, h, d)[0]
        ends = (logit_loglik(a, H, h, d)[0] + logit_loglik(b, H, h, d)[0]) / 2
        assert mid >= ends - 1e-10


def test_likelihood_rejects_non_finite_theta():
    with pytest.raises(InvalidConfigError):
        logit_loglik([np.nan], np.ones((2, 1)), np.zeros(2), np.zeros(2))


def test_newton_reaches_stationary_point(rng):
    H = rng.normal(size=(500, 3))
    theta_true = np.array([0.5, -1.0, 0.25])
    d = (rng.random(500) < 1.0 / (1.0 + np.exp(-H @ theta_true))).astype(float)
    theta, value, grad, iterations, converged = newton_maximize(H, np.zeros(500), d)
    assert converged
    assert np.abs(grad).max() <= 1e-8
    assert iterations < 30
    assert value >= logit_loglik(theta_true, H, np.zeros(500), d)[0]


def test_frequency_ccp():
    # 状态 0 出现 10 次且全部 d = 1，状态 1 出现 10 次全部 d = 0，状态 2 从未出现
    x = np.array([0] * 10 + [1] * 10)
    d = np.array([1] * 10 + [0] * 10)
    panel = small_panel(x, d, N=2, T=10)
    ccp = estimate_ccp(panel, 3, mode="frequency")
    assert ccp.stationary
    np.testing.assert_allclose(ccp.p(1), [10.5 / 11, 0.5 / 11, 0.5])

    by_period = estimate_ccp(panel, 3, T=2, mode="frequency")
    assert by_period.periods == 2
    np.testing.assert_allclose(by_period.p(1, 1), [1.5 / 2, 0.5 / 2, 0.5])

    with pytest.raises(DimensionError):
        estimate_ccp(panel, 1, mode="frequency")


def test_oracle_ccp(entry_solution):
    panel = small_panel([0, 1], [0, 1], N=1, T=2)
    assert estimate_ccp(panel, 64, mode="oracle", solution=entry_solution) is entry_solution.ccp
    with pytest.raises(InvalidConfigError):
        estimate_ccp(panel, 64, mode="oracle")
    with pytest.raises(InvalidConfigError):
        estimate_ccp(panel, 64, mode="bootstrap")


@pytest.mark.parametrize(
    "name, model_fixture, solution_fixture",
    [
        ("FD", "entry", "entry_solution"),
        ("FD2", "entry_dynamic", "entry_dynamic_solution"),
        ("HM", "entry_dynamic", "entry_dynamic_solution"),
    ],
)
def test_population_likelihood_recovers_truth(request, name, model_fixture, solution_fixture):
    model = request.getfixturevalue(model_fixture)
    solution = request.getfixturevalue(solution_fixture)
    estimator = create_estimator(name, model)
    lin = estimator.value_differences(solution.ccp)[1]
    theta, _, _, _, _ = newton_maximize(lin.H, lin.offset(), solution.ccp.p(1))
    np.testing.assert_allclose(theta, model.theta, atol=1e-4)


def test_exact_estimators_share_the_likelihood(entry_dynamic, entry_dynamic_solution):
    rng = np.random.default_rng(1)
    X = entry_dynamic.state_count
    panel = small_panel(rng.integers(0, X, size=60), rng.integers(0, 2, size=60), N=6, T=10)
    p = entry_dynamic_solution.ccp
    values = []
    for name in ("FD2", "HM"):
        lins = create_estimator(name, entry_dynamic).value_differences(p)
        values.append(fd_loglik(entry_dynamic.theta, lins, panel)[0])
    assert values[0] == pytest.approx(values[1], rel=1e-6)


def test_design_uses_each_period(nonstationary):
    X = nonstationary.state_count
    lins = {
        t: LinearValueDiff(H=np.full((X, 1), float(t)), h=np.zeros(X), t=t) for t in (1, 2)
    }
    panel = small_panel(np.zeros(6, dtype=int), np.ones(6, dtype=int), N=2, T=3)
    H, h, d = design(lins, panel, stationary=False)
    assert H.shape == (4, 1)
    np.testing.assert_array_equal(np.sort(H[:, 0]), [1.0, 1.0, 2.0, 2.0])
    with pytest.raises(PeriodError):
        design({}, panel, stationary=False)
