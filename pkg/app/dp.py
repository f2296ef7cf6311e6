"""动态规划基准解与面板模拟

积分价值函数包含欧拉常数 γ_E（T1EV 下的精确期望最大值）。
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd
import scipy.linalg
from loguru import logger

from .ccp import EULER_GAMMA, CcpTable, ValueDiffTable, expected_shock, lambda_
from .config import MAX_ITER, SOLVER_TOL
from .errors import ConvergenceError, DimensionError, InvalidConfigError, SingularSystemError
from .markov import Model
from .utils import read_frame_csv, read_json, write_frame_csv, write_json


@dataclass(frozen=True)
class Solution:
    """V[t-1] 为第 t 期积分价值；平稳解只有一行"""

    V: np.ndarray
    ccp: CcpTable
    vtilde: ValueDiffTable
    stationary: bool = True
    iterations: int = 0
    residual: float = 0.0

    @property
    def horizon(self) -> Optional[int]:
        return None if self.stationary else self.V.shape[0]

    def value(self, t: int = 1) -> np.ndarray:
        return self.V[0] if self.stationary else self.V[t - 1]


def _choice_values(V_next: np.ndarray, model: Model, beta: float, t: int, theta=None):
    ts = model.transitions
    v0 = model.u(0, theta) + beta * (ts.F(0, t) @ V_next)
    v1 = model.u(1, theta) + beta * (ts.F(1, t) @ V_next)
    return v0, v1


def bellman_update(V, model: Model, beta: Optional[float] = None, t: int = 1, theta=None) -> np.ndarray:
    """V'(x) = γ_E + ln Σ_d exp(u(x,d) + β·F_d V)"""
    beta = model.beta if beta is None else beta
    v0, v1 = _choice_values(np.asarray(V, dtype=np.float64), model, beta, t, theta)
    return EULER_GAMMA + np.logaddexp(v0, v1)


def _finish(V_rows, vtilde_rows, stationary, iterations=0, residual=0.0) -> Solution:
    vtilde = ValueDiffTable(values=np.asarray(vtilde_rows), stationary=stationary)
    return Solution(
        V=np.asarray(V_rows),
        ccp=lambda_(vtilde),
        vtilde=vtilde,
        stationary=stationary,
        iterations=iterations,
        residual=residual,
    )


def solve_stationary(
    model: Model,
    tol: float = SOLVER_TOL,
    max_iter: int = MAX_ITER,
    V0=None,
    theta=None,
) -> Solution:
    """值函数迭代求不动点，sup 范数残差 ≤ tol"""
    if not model.stationary:
        raise InvalidConfigError(["model: solve_stationary 需要平稳转移"])
    if not 0 < model.beta < 1:
        raise InvalidConfigError([f"model.beta: 需要 0 < beta < 1，当前 {model.beta}"])

    V = np.zeros(model.state_count) if V0 is None else np.asarray(V0, dtype=np.float64)
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        V_new = bellman_update(V, model, theta=theta)
        residual = float(np.max(np.abs(V_new - V)))
        V = V_new
        if residual <= tol:
            break
    else:
        raise ConvergenceError("值函数迭代未收敛", iterations=max_iter, residual=residual)

    v0, v1 = _choice_values(V, model, model.beta, 1, theta)
    logger.debug(f"值函数迭代收敛: X={model.state_count}, 迭代 {iteration} 次, 残差 {residual:.2e}")
    return _finish(V[None, :], (v1 - v0)[None, :], True, iteration, residual)


def solve_finite_horizon(
    model: Model, T_total: Optional[int] = None, terminal=None, theta=None
) -> Solution:
    """逆向归纳 t = T..1，终端价值 V_{T+1} 默认为零"""
    ts = model.transitions
    if T_total is None:
        if ts.stationary:
            raise InvalidConfigError(["T_total: 平稳转移需要显式给出期数"])
        T_total = ts.horizon
    if T_total < 1:
        raise InvalidConfigError([f"T_total: 需要 >= 1，当前 {T_total}"])

    X = model.state_count
    V_next = np.zeros(X) if terminal is None else np.asarray(terminal, dtype=np.float64)
    if V_next.shape != (X,):
        raise DimensionError(f"终端价值维度应为 {(X,)}，当前 {V_next.shape}")

    V_rows = np.empty((T_total, X))
    vtilde_rows = np.empty((T_total, X))
    for t in range(T_total, 0, -1):
        v0, v1 = _choice_values(V_next, model, model.beta, t, theta)
        V_rows[t - 1] = EULER_GAMMA + np.logaddexp(v0, v1)
        vtilde_rows[t - 1] = v1 - v0
        V_next = V_rows[t - 1]
    return _finish(V_rows, vtilde_rows, False)


def policy_transition(p: CcpTable, model: Model, t: int = 1) -> np.ndarray:
    """Fᴾ[x,·] = p(1,x)F₁[x,·] + p(0,x)F₀[x,·]"""
    ts = model.transitions
    return p.p(1, t)[:, None] * ts.F(1, t) + p.p(0, t)[:, None] * ts.F(0, t)


def hm_system(p: CcpTable, model: Model, beta: Optional[float] = None):
    """I − βFᴾ 的 LU 分解"""
    beta = model.beta if beta is None else beta
    A = np.eye(model.state_count) - beta * policy_transition(p, model)
    try:
        return scipy.linalg.lu_factor(A, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularSystemError(f"I − βFᴾ 奇异: {e}") from e


def hm_solution(p: CcpTable, model: Model, beta: Optional[float] = None, theta=None) -> Solution:
    """Hotz–Miller 线性解 V = (I − βFᴾ)⁻¹(uᴾ + eᴾ)"""
    if not p.stationary or not model.stationary:
        raise InvalidConfigError(["hm_solution: 只适用于平稳模型"])
    beta = model.beta if beta is None else beta
    uP = p.p(1) * model.u(1, theta) + p.p(0) * model.u(0, theta)
    V = scipy.linalg.lu_solve(hm_system(p, model, beta), uP + expected_shock(p))
    if not np.all(np.isfinite(V)):
        raise SingularSystemError("Hotz–Miller 解含有非有限值")
    v0, v1 = _choice_values(V, model, beta, 1, theta)
    return _finish(V[None, :], (v1 - v0)[None, :], True)


def stationary_distribution(P: np.ndarray, tol: float = 1e-10, max_iter: int = MAX_ITER) -> np.ndarray:
    """幂迭代求行随机矩阵的平稳分布"""
    X = P.shape[0]
    mu = np.full(X, 1.0 / X)
    for iteration in range(1, max_iter + 1):
        nxt = mu @ P
        gap = float(np.abs(nxt - mu).sum())
        mu = nxt
        if gap <= tol:
            logger.debug(f"平稳分布幂迭代收敛: 迭代 {iteration} 次")
            return mu / mu.sum()
    raise ConvergenceError("平稳分布幂迭代未收敛", iterations=max_iter, residual=gap)


def initial_distribution(solution: Solution, model: Model) -> np.ndarray:
    if solution.stationary:
        return stationary_distribution(policy_transition(solution.ccp, model))
    return np.full(model.state_count, 1.0 / model.state_count)


@dataclass(frozen=True)
class Panel:
    """按 (i, t) 排序的观测；t 从 1 开始"""

    i: np.ndarray
    t: np.ndarray
    x: np.ndarray
    d: np.ndarray
    N: int
    T: int
    seed: int
    replication: int = 0
    truth: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = self.N * self.T
        for name in ("i", "t", "x", "d"):
            if getattr(self, name).shape != (n,):
                raise DimensionError(f"面板列 {name} 长度应为 {n}")
        if np.any((self.d != 0) & (self.d != 1)):
            raise DimensionError("面板动作只能为 0 或 1")
        if np.any(self.x < 0):
            raise DimensionError("面板状态下标不能为负")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"i": self.i, "t": self.t, "x": self.x, "d": self.d})

    def periods(self, t_max: int) -> np.ndarray:
        """t ≤ t_max 的观测掩码"""
        return self.t <= t_max


def _unit_uniforms(seed: int, replication: int, unit: int, T: int) -> np.ndarray:
    # 每个 (seed, replication, unit) 一条 Philox 计数器流，第 t 行供第 t 期使用
    stream = np.random.SeedSequence([seed, replication, unit])
    return np.random.Generator(np.random.Philox(stream)).random((T, 3))


def simulate_panel(
    solution: Solution,
    model: Model,
    N: int,
    T: int,
    seed: int,
    replication: int = 0,
    initial: Optional[np.ndarray] = None,
    truth: Optional[Dict[str, Any]] = None,
) -> Panel:
    """按解的 CCP 模拟 N 个个体 T 期的面板"""
    if N < 1 or T < 1:
        raise InvalidConfigError([f"N/T: 需要 >= 1，当前 N={N}, T={T}"])
    if not solution.stationary and T > solution.horizon:
        raise InvalidConfigError([f"T: 超出解的期数 {solution.horizon}"])

    X = model.state_count
    mu = initial_distribution(solution, model) if initial is None else initial
    draws = np.stack([_unit_uniforms(seed, replication, unit, T) for unit in range(N)])

    cum_cache = {}

    def cumulative(d: int, t: int) -> np.ndarray:
        key = (d, 1 if model.stationary else t)
        if key not in cum_cache:
            cum_cache[key] = np.cumsum(model.transitions.F(d, t), axis=1)
        return cum_cache[key]

    x = np.empty((N, T), dtype=np.int64)
    d = np.empty((N, T), dtype=np.int64)
    x[:, 0] = np.minimum(np.searchsorted(np.cumsum(mu), draws[:, 0, 0], side="right"), X - 1)
    for t in range(1, T + 1):
        col = t - 1
        p1 = solution.ccp.p(1, t)
        d[:, col] = (draws[:, col, 1] < p1[x[:, col]]).astype(np.int64)
        if t == T:
            break
        for action in (0, 1):
            rows = d[:, col] == action
            if not rows.any():
                continue
            cdf = cumulative(action, t)[x[rows, col]]
            nxt = (cdf <= draws[rows, col, 2][:, None]).sum(axis=1)
            x[rows, col + 1] = np.minimum(nxt, X - 1)

    return Panel(
        i=np.repeat(np.arange(N), T),
        t=np.tile(np.arange(1, T + 1), N),
        x=x.ravel(),
        d=d.ravel(),
        N=N,
        T=T,
        seed=seed,
        replication=replication,
        truth=dict(truth or {"theta": model.theta.tolist()}),
    )


def write_panel(panel: Panel, directory: Union[str, Path], config_hash: Optional[str] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_frame_csv(directory / "panel.csv", panel.to_frame())
    write_json(directory / "manifest.json", {
        "N": panel.N,
        "T": panel.T,
        "seed": panel.seed,
        "replication": panel.replication,
        "truth": panel.truth,
        "config_hash": config_hash,
    })
    logger.info(f"面板已写出: {directory} (N={panel.N}, T={panel.T})")
    return directory


def read_panel(directory: Union[str, Path]) -> Panel:
    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    frame = read_frame_csv(directory / "panel.csv", dtype=np.int64)
    return Panel(
        i=frame["i"].to_numpy(),
        t=frame["t"].to_numpy(),
        x=frame["x"].to_numpy(),
        d=frame["d"].to_numpy(),
        N=int(manifest["N"]),
        T=int(manifest["T"]),
        seed=int(manifest["seed"]),
        replication=int(manifest.get("replication", 0)),
        truth=manifest.get("truth", {}),
    )
