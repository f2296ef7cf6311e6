"""测试公共夹具"""

import numpy as np
import pytest

from app.config import EntryModelConfig, NONSTATIONARY_INTERCEPTS
from app.dp import solve_finite_horizon, solve_stationary
from app.markov import Model, TransitionSet, UtilityModel, entry_model, stationary_transitions


def random_stochastic(rng: np.random.Generator, rows: int, cols: int = None) -> np.ndarray:
    M = rng.random((rows, cols or rows)) + 0.05
    return M / M.sum(axis=1, keepdims=True)


def renewal_transitions(X: int = 5, advance: float = 0.6) -> TransitionSet:
    """d = 0 里程前进一格（封顶），d = 1 先归零再前进"""
    F0 = np.zeros((X, X))
    for x in range(X):
        F0[x, min(x + 1, X - 1)] += advance
        F0[x, x] += 1.0 - advance
    F1 = np.tile(F0[0], (X, 1))
    return stationary_transitions(F0, F1)


def renewal_model(X: int = 5, beta: float = 0.9) -> Model:
    ts = renewal_transitions(X)
    mileage = np.arange(X, dtype=np.float64)
    phi0 = np.column_stack([-mileage, np.zeros(X)])
    phi1 = np.column_stack([np.zeros(X), -np.ones(X)])
    utility = UtilityModel(phi0=phi0, phi1=phi1, names=("maintain", "replace"))
    return Model(transitions=ts, utility=utility, beta=beta, theta=np.array([0.3, 2.0]))


def entry_like_transitions(rng: np.random.Generator, K: int) -> TransitionSet:
    """(y, ω) 状态：y' = d，ω' 按动作相关的随机矩阵 Q_d 转移"""
    mats = []
    for d in (0, 1):
        Q = random_stochastic(rng, K)
        block = np.zeros((2 * K, 2 * K))
        block[:, d * K:(d + 1) * K] = np.vstack([Q, Q])
        mats.append(block)
    return stationary_transitions(*mats)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture
def renewal():
    return renewal_model()


@pytest.fixture(scope="session")
def entry_cfg():
    return EntryModelConfig(K_z=2, K_o=2, gamma_a=0.0)


@pytest.fixture(scope="session")
def entry_cfg_dynamic():
    return EntryModelConfig(K_z=2, K_o=2, gamma_a=0.5)


@pytest.fixture(scope="session")
def entry(entry_cfg):
    return entry_model(entry_cfg)


@pytest.fixture(scope="session")
def entry_dynamic(entry_cfg_dynamic):
    return entry_model(entry_cfg_dynamic)


@pytest.fixture(scope="session")
def entry_solution(entry):
    return solve_stationary(entry)


@pytest.fixture(scope="session")
def entry_dynamic_solution(entry_dynamic):
    return solve_stationary(entry_dynamic)


@pytest.fixture(scope="session")
def nonstationary_cfg():
    return EntryModelConfig(K_z=2, K_o=2, gamma_a=0.5, intercepts=NONSTATIONARY_INTERCEPTS)


@pytest.fixture(scope="session")
def nonstationary(nonstationary_cfg):
    return entry_model(nonstationary_cfg)


@pytest.fixture(scope="session")
def nonstationary_solution(nonstationary):
    return solve_finite_horizon(nonstationary)
