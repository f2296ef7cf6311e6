import numpy as np
import pytest

from app.ccp import EULER_GAMMA, CcpTable, ValueDiffTable, lambda_
from app.dp import (
    Panel,
    Solution,
    bellman_update,
    hm_solution,
    initial_distribution,
    policy_transition,
    read_panel,
    simulate_panel,
    solve_finite_horizon,
    solve_stationary,
    stationary_distribution,
    write_panel,
)
from app.errors import ConvergenceError, DimensionError, InvalidConfigError

from .conftest import renewal_model


def test_bellman_is_a_contraction(renewal, rng):
    V, W = rng.normal(size=(2, renewal.state_count)) * 5.0
    gap = np.abs(bellman_update(V, renewal) - bellman_update(W, renewal)).max()
    assert gap <= renewal.beta * np.abs(V - W).max() + 1e-12


def test_value_iteration_matches_linear_solution(entry_dynamic, entry_dynamic_solution):
    solution = entry_dynamic_solution
    assert solution.residual <= 1e-10
    linear = hm_solution(solution.ccp, entry_dynamic)
    np.testing.assert_allclose(linear.value(), solution.value(), atol=1e-7)
    np.testing.assert_allclose(linear.vtilde.at(), solution.vtilde.at(), atol=1e-7)

    p1 = solution.ccp.p(1)
    np.testing.assert_allclose(np.log(p1 / (1.0 - p1)), solution.vtilde.at(), atol=1e-9)


def test_fixed_point_includes_euler_constant(renewal):
    solution = solve_stationary(renewal)
    v0 = renewal.u(0) + renewal.beta * renewal.transitions.F(0) @ solution.value()
    v1 = renewal.u(1) + renewal.beta * renewal.transitions.F(1) @ solution.value()
    np.testing.assert_allclose(
        solution.value(), EULER_GAMMA + np.logaddexp(v0, v1), atol=1e-9
    )


def test_value_iteration_reports_non_convergence(renewal):
    with pytest.raises(ConvergenceError) as info:
        solve_stationary(renewal, max_iter=3)
    assert info.value.iterations == 3


def test_stationary_solver_rejects_bad_inputs(renewal, nonstationary):
    with pytest.raises(InvalidConfigError):
        solve_stationary(nonstationary)
    with pytest.raises(InvalidConfigError):
        solve_finite_horizon(renewal)
    with pytest.raises(DimensionError):
        solve_finite_horizon(renewal, 3, terminal=np.zeros(2))


def test_finite_horizon_last_period_is_static(nonstationary, nonstationary_solution):
    T = nonstationary_solution.horizon
    assert T == nonstationary.transitions.horizon
    np.testing.assert_allclose(
        nonstationary_solution.vtilde.at(T), nonstationary.u(1) - nonstationary.u(0), atol=1e-12
    )


def test_long_finite_horizon_approaches_stationary(renewal):
    stationary = solve_stationary(renewal)
    finite = solve_finite_horizon(renewal, 400)
    np.testing.assert_allclose(finite.value(1), stationary.value(), atol=1e-8)
    np.testing.assert_allclose(finite.vtilde.at(1), stationary.vtilde.at(), atol=1e-8)


def test_stationary_distribution(entry_dynamic, entry_dynamic_solution):
    P = policy_transition(entry_dynamic_solution.ccp, entry_dynamic)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    mu = stationary_distribution(P)
    assert mu.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(mu @ P, mu, atol=1e-9)


def test_nonstationary_initial_distribution_is_uniform(nonstationary, nonstationary_solution):
    mu = initial_distribution(nonstationary_solution, nonstationary)
    np.testing.assert_allclose(mu, 1.0 / nonstationary.state_count)


def test_simulation_is_reproducible(entry_dynamic, entry_dynamic_solution):
    a = simulate_panel(entry_dynamic_solution, entry_dynamic, N=6, T=15, seed=3, replication=2)
    b = simulate_panel(entry_dynamic_solution, entry_dynamic, N=6, T=15, seed=3, replication=2)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.d, b.d)

    other = simulate_panel(entry_dynamic_solution, entry_dynamic, N=6, T=15, seed=3, replication=3)
    assert not np.array_equal(a.x, other.x)

    # 每个个体的随机流独立于 N
    wider = simulate_panel(entry_dynamic_solution, entry_dynamic, N=10, T=15, seed=3, replication=2)
    np.testing.assert_array_equal(wider.x[: 6 * 15], a.x)


def test_simulated_transitions_follow_the_model(entry_dynamic, entry_dynamic_solution):
    panel = simulate_panel(entry_dynamic_solution, entry_dynamic, N=50, T=20, seed=11)
    assert panel.x.max() < entry_dynamic.state_count
    x = panel.x.reshape(panel.N, panel.T)
    d = panel.d.reshape(panel.N, panel.T)
    half = entry_dynamic.state_count // 2
    # 进入/退出模型中 y' = d
    np.testing.assert_array_equal(x[:, 1:] >= half, d[:, :-1] == 1)

    F = entry_dynamic.transitions
    support = [F.F(d[n, t])[x[n, t], x[n, t + 1]] > 0 for n in range(panel.N) for t in range(panel.T - 1)]
    assert all(support)


def test_simulation_rejects_bad_sizes(nonstationary, nonstationary_solution):
    with pytest.raises(InvalidConfigError):
        simulate_panel(nonstationary_solution, nonstationary, N=0, T=2, seed=0)
    with pytest.raises(InvalidConfigError):
        simulate_panel(nonstationary_solution, nonstationary, N=2, T=9, seed=0)
    panel = simulate_panel(nonstationary_solution, nonstationary, N=3, T=4, seed=0)
    assert panel.t.max() == 4


def test_panel_validation():
    with pytest.raises(DimensionError):
        Panel(i=np.zeros(2), t=np.ones(2), x=np.zeros(2), d=np.array([0, 2]), N=1, T=2, seed=0)
    with pytest.raises(DimensionError):
        Panel(i=np.zeros(3), t=np.ones(3), x=np.zeros(3), d=np.zeros(3), N=1, T=2, seed=0)


def test_panel_round_trip(tmp_path, entry_dynamic, entry_dynamic_solution):
    panel = simulate_panel(entry_dynamic_solution, entry_dynamic, N=4, T=5, seed=9, replication=1)
    write_panel(panel, tmp_path, config_hash="abc12345")
    loaded = read_panel(tmp_path)
    for name in ("i", "t", "x", "d"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(panel, name))
    assert (loaded.N, loaded.T, loaded.seed, loaded.replication) == (4, 5, 9, 1)
    assert loaded.truth["theta"] == pytest.approx(list(entry_dynamic.theta))


def test_static_bellman_step_with_zero_utility(renewal, rng):
    zero = np.zeros(2)
    V = rng.normal(size=renewal.state_count)
    np.testing.assert_allclose(
        bellman_update(V, renewal, beta=0.0, theta=zero), EULER_GAMMA + np.log(2.0), atol=1e-15
    )


def test_linear_solution_with_coin_flip_choices():
    model = renewal_model(X=6, beta=0.9)
    p = CcpTable.from_probabilities(np.full(6, 0.5))
    linear = hm_solution(p, model, theta=np.zeros(2))
    np.testing.assert_allclose(linear.value(), (EULER_GAMMA + np.log(2.0)) / 0.1, rtol=1e-12)
    np.testing.assert_allclose(linear.vtilde.at(), 0.0, atol=1e-10)


def test_certain_choice_simulates_all_ones(renewal):
    vtilde = ValueDiffTable(np.full(renewal.state_count, 800.0))
    ccp = lambda_(vtilde)
    assert np.all(ccp.p(1) == 1.0)
    solution = Solution(V=np.zeros((1, renewal.state_count)), ccp=ccp, vtilde=vtilde)
    panel = simulate_panel(solution, renewal, N=40, T=6, seed=3)
    assert np.all(panel.d == 1)
