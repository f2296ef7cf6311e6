"""转移矩阵构造：Tauchen 离散化、进入/退出模型与转移差 F̃

状态下标布局固定为 (y, ω, z1, z2, z3, z4)，y 变化最慢、z4 最快，0 起始。
"""

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.stats import norm

from .config import THETA_NAMES, EntryModelConfig
from .errors import DimensionError, InvalidConfigError, PeriodError
from .linalg import as_matrix, kron, kron_all
from .utils import read_json, read_matrix_csv, write_json, write_matrix_csv

ROW_SUM_TOL = 1e-12
STATE_LAYOUT = "(y, omega, z1, z2, z3, z4); y slowest, z4 fastest; 0-based"


@dataclass(frozen=True)
class TransitionSet:
    """按动作、按时期保存的行随机转移矩阵；平稳模型只有一个时期"""

    F0: Tuple[np.ndarray, ...]
    F1: Tuple[np.ndarray, ...]
    stationary: bool = True

    def __post_init__(self):
        if len(self.F0) != len(self.F1) or not self.F0:
            raise DimensionError("F0 与 F1 的时期数必须相同且不为空")
        if self.stationary and len(self.F0) != 1:
            raise DimensionError("平稳模型只能包含一个时期的转移矩阵")

        X = np.asarray(self.F0[0]).shape[0]
        checked = {}
        for d, mats in ((0, self.F0), (1, self.F1)):
            out = []
            for t, M in enumerate(mats, 1):
                M = as_matrix(M, f"F_{d}_{t}")
                if M.shape != (X, X):
                    raise DimensionError(f"F_{d}_{t} 维度应为 {(X, X)}，当前 {M.shape}")
                if M.min() < 0:
                    raise DimensionError(f"F_{d}_{t} 含有负概率 {M.min()}")
                dev = np.abs(M.sum(axis=1) - 1.0).max()
                if dev > ROW_SUM_TOL:
                    raise DimensionError(f"F_{d}_{t} 行和偏离 1 达 {dev:.3e}")
                out.append(M)
            checked[d] = tuple(out)
        object.__setattr__(self, "F0", checked[0])
        object.__setattr__(self, "F1", checked[1])

    @property
    def state_count(self) -> int:
        return self.F0[0].shape[0]

    @property
    def horizon(self) -> Optional[int]:
        return None if self.stationary else len(self.F0)

    def _index(self, t: int) -> int:
        if self.stationary:
            if t < 1:
                raise PeriodError(f"时期必须 >= 1，当前 {t}")
            return 0
        if not 1 <= t <= len(self.F0):
            raise PeriodError(f"时期 {t} 超出范围 1..{len(self.F0)}")
        return t - 1

    def F(self, d: int, t: int = 1) -> np.ndarray:
        if d not in (0, 1):
            raise InvalidConfigError([f"action: 只支持二元选择，当前 {d}"])
        mats = self.F1 if d == 1 else self.F0
        return mats[self._index(t)]


def diff_transition(ts: TransitionSet, t: int = 1) -> np.ndarray:
    """F̃ₜ = F₁,ₜ − F₀,ₜ"""
    return ts.F(1, t) - ts.F(0, t)


def stationary_transitions(F0, F1) -> TransitionSet:
    return TransitionSet(F0=(F0,), F1=(F1,), stationary=True)


def tauchen(
    K: int,
    gamma0: float,
    gamma1: float,
    sigma: float,
    shift: float = 0.0,
    bounds: Optional[Tuple[float, float]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """AR(1) 离散化：网格取平稳分布的 (k−0.5)/K 分位点，区间切点取相邻格点中点

    bounds 给定时把网格仿射缩放到 [lo, hi]；shift 只进入转移概率，不移动网格。
    """
    problems = []
    if K < 1:
        problems.append(f"K: 需要 K >= 1，当前 {K}")
    if not abs(gamma1) < 1:
        problems.append(f"gamma1: 需要 |gamma1| < 1，当前 {gamma1}")
    if not sigma > 0:
        problems.append(f"sigma: 需要 sigma > 0，当前 {sigma}")
    if problems:
        raise InvalidConfigError(problems)

    mean = gamma0 / (1.0 - gamma1)
    sd = sigma / np.sqrt(1.0 - gamma1**2)

    if K == 1:
        grid = np.array([mean])
        if bounds is not None:
            grid = np.clip(grid, *bounds)
        return grid, np.ones((1, 1))

    ranks = (np.arange(K) + 0.5) / K
    grid = norm.ppf(ranks, loc=mean, scale=sd)
    if bounds is not None:
        lo, hi = bounds
        grid = lo + (grid - grid[0]) * (hi - lo) / (grid[-1] - grid[0])

    cuts = 0.5 * (grid[:-1] + grid[1:])
    cdf = norm.cdf((cuts[None, :] - gamma0 - shift - gamma1 * grid[:, None]) / sigma)
    F = np.empty((K, K))
    F[:, :-1] = np.diff(cdf, axis=1, prepend=0.0)
    F[:, -1] = 1.0 - F[:, :-1].sum(axis=1)
    np.clip(F, 0.0, None, out=F)
    return grid, F


@dataclass(frozen=True)
class KronFactors:
    """F_d,t = F_ω,d,t ⊗ F_z；F_z 为四个冲击链的 Kronecker 积，与动作无关"""

    omega_blocks: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    z_chains: Tuple[np.ndarray, ...]
    stationary: bool = True

    def __post_init__(self):
        n = self.omega_blocks[0][0].shape[0]
        for t, pair in enumerate(self.omega_blocks, 1):
            for d, block in enumerate(pair):
                if block.shape != (n, n):
                    raise DimensionError(f"F_omega_{d}_{t} 维度不一致: {block.shape}")
        for k, chain in enumerate(self.z_chains):
            if chain.ndim != 2 or chain.shape[0] != chain.shape[1]:
                raise DimensionError(f"z 链 {k} 必须是方阵，当前 {chain.shape}")

    @property
    def endogenous_size(self) -> int:
        return self.omega_blocks[0][0].shape[0]

    @property
    def exogenous_size(self) -> int:
        return int(np.prod([c.shape[0] for c in self.z_chains]))

    @property
    def state_count(self) -> int:
        return self.endogenous_size * self.exogenous_size

    def F_omega(self, d: int, t: int = 1) -> np.ndarray:
        idx = 0 if self.stationary else t - 1
        if not 0 <= idx < len(self.omega_blocks):
            raise PeriodError(f"时期 {t} 超出范围 1..{len(self.omega_blocks)}")
        return self.omega_blocks[idx][d]

    @cached_property
    def F_z(self) -> np.ndarray:
        return kron_all(self.z_chains)

    def dense(self, d: int, t: int = 1, max_entries: Optional[int] = None) -> np.ndarray:
        return kron(self.F_omega(d, t), self.F_z, max_entries)

    def to_transition_set(self, max_entries: Optional[int] = None) -> TransitionSet:
        periods = range(1, len(self.omega_blocks) + 1)
        return TransitionSet(
            F0=tuple(self.dense(0, t, max_entries) for t in periods),
            F1=tuple(self.dense(1, t, max_entries) for t in periods),
            stationary=self.stationary,
        )


@dataclass(frozen=True)
class UtilityModel:
    """线性效用 u(x,d;θ) = φ(x,d)ᵀθ，按行保存 φ(·,0) 与 φ(·,1)"""

    phi0: np.ndarray
    phi1: np.ndarray
    names: Tuple[str, ...] = THETA_NAMES

    def __post_init__(self):
        if self.phi0.shape != self.phi1.shape:
            raise DimensionError(f"φ(·,0) 与 φ(·,1) 维度不一致: {self.phi0.shape} vs {self.phi1.shape}")
        if self.phi1.shape[1] != len(self.names):
            raise DimensionError(f"参数名数量 {len(self.names)} 与特征维度 {self.phi1.shape[1]} 不一致")

    @property
    def K(self) -> int:
        return self.phi1.shape[1]

    @property
    def state_count(self) -> int:
        return self.phi1.shape[0]

    def phi(self, d: int) -> np.ndarray:
        return self.phi1 if d == 1 else self.phi0

    def u(self, theta, d: int) -> np.ndarray:
        return self.phi(d) @ np.asarray(theta, dtype=np.float64)


@dataclass(frozen=True)
class StateTable:
    """各状态下标对应的变量取值"""

    y: np.ndarray
    omega: np.ndarray
    z: np.ndarray
    omega_grid: np.ndarray
    z_grids: Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class Model:
    """动态离散选择模型：转移、效用、折现因子与真实参数"""

    transitions: TransitionSet
    utility: UtilityModel
    beta: float
    theta: np.ndarray
    factors: Optional[KronFactors] = None
    states: Optional[StateTable] = None

    @property
    def state_count(self) -> int:
        return self.transitions.state_count

    @property
    def stationary(self) -> bool:
        return self.transitions.stationary

    def u(self, d: int, theta=None) -> np.ndarray:
        return self.utility.u(self.theta if theta is None else theta, d)


def _omega_block(Q: np.ndarray, d: int) -> np.ndarray:
    """(y, ω) → (y', ω') 的转移：y' = d，ω' 按 Q 转移，与 y 无关"""
    K = Q.shape[0]
    block = np.zeros((2 * K, 2 * K))
    block[:, d * K:(d + 1) * K] = np.vstack([Q, Q])
    return block


def build_entry_factors(cfg: EntryModelConfig) -> Tuple[KronFactors, UtilityModel, StateTable]:
    """只构造分解形式，不展开稠密转移矩阵"""
    problems = cfg.problems()
    if problems:
        raise InvalidConfigError(problems)

    z_grids, z_chains = [], []
    for params in cfg.z:
        grid, F = tauchen(cfg.K_z, params.gamma0, params.gamma1, params.sigma)
        z_grids.append(grid)
        z_chains.append(F)

    om = cfg.omega
    blocks = []
    if cfg.nonstationary:
        for intercept in cfg.intercepts:
            pair = []
            for d in (0, 1):
                omega_grid, Q = tauchen(
                    cfg.K_o, 0.0, om.gamma1, om.sigma,
                    shift=intercept + cfg.gamma_a * d, bounds=(-1.0, 1.0),
                )
                pair.append(_omega_block(Q, d))
            blocks.append(tuple(pair))
    else:
        pair = []
        for d in (0, 1):
            omega_grid, Q = tauchen(cfg.K_o, om.gamma0, om.gamma1, om.sigma, shift=cfg.gamma_a * d)
            pair.append(_omega_block(Q, d))
        blocks.append(tuple(pair))

    factors = KronFactors(
        omega_blocks=tuple(blocks), z_chains=tuple(z_chains), stationary=not cfg.nonstationary
    )

    idx = np.indices((2, cfg.K_o) + (cfg.K_z,) * 4).reshape(6, -1)
    y = idx[0].astype(np.float64)
    omega = omega_grid[idx[1]]
    z = np.column_stack([z_grids[k][idx[2 + k]] for k in range(4)])
    states = StateTable(y=y, omega=omega, z=z, omega_grid=omega_grid, z_grids=tuple(z_grids))

    scale = np.exp(omega)
    phi1 = np.column_stack([
        scale,
        scale * z[:, 0],
        scale * z[:, 1],
        -np.ones_like(y),
        -z[:, 2],
        -(1.0 - y),
        -(1.0 - y) * z[:, 3],
    ])
    utility = UtilityModel(phi0=np.zeros_like(phi1), phi1=phi1)

    logger.debug(
        f"进入模型分解构造完成: X={cfg.state_count}, 内生块={factors.endogenous_size}, "
        f"外生块={factors.exogenous_size}, 非平稳={cfg.nonstationary}"
    )
    return factors, utility, states


def build_entry_model(
    cfg: EntryModelConfig, max_entries: Optional[int] = None
) -> Tuple[TransitionSet, KronFactors, UtilityModel]:
    """构造进入/退出模型的稠密转移、Kronecker 因子与效用"""
    factors, utility, _ = build_entry_factors(cfg)
    return factors.to_transition_set(max_entries), factors, utility


def entry_model(cfg: EntryModelConfig, max_entries: Optional[int] = None) -> Model:
    factors, utility, states = build_entry_factors(cfg)
    return Model(
        transitions=factors.to_transition_set(max_entries),
        utility=utility,
        beta=cfg.beta,
        theta=np.asarray(cfg.theta, dtype=np.float64),
        factors=factors,
        states=states,
    )


def resolve_grid(states: Union[int, Sequence[int]], max_kz: int = 8) -> Tuple[int, int]:
    """把状态数 X 解析为 (K_z, K_o)，取满足 X = 2·K_z⁴·K_o 的最大 K_z"""
    if not isinstance(states, (int, np.integer)):
        K_z, K_o = (int(v) for v in states)
        return K_z, K_o
    X = int(states)
    for K_z in range(max_kz, 1, -1):
        unit = 2 * K_z**4
        if X % unit == 0 and X >= unit:
            return K_z, X // unit
    raise InvalidConfigError([f"bench.states: {X} 无法写成 2·K_z⁴·K_o (K_z ∈ [2, {max_kz}])"])


def write_transition_set(ts: TransitionSet, directory: Union[str, Path]) -> Path:
    """写出 F_{d}_{t}.csv 与 manifest.json"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    periods = len(ts.F0)
    for t in range(1, periods + 1):
        for d in (0, 1):
            write_matrix_csv(directory / f"F_{d}_{t}.csv", ts.F(d, t))
    write_json(directory / "manifest.json", {
        "X": ts.state_count,
        "T": periods,
        "stationary": ts.stationary,
        "actions": [0, 1],
        "layout": STATE_LAYOUT,
    })
    logger.info(f"转移矩阵已写出: {directory} (X={ts.state_count}, 时期={periods})")
    return directory


def read_transition_set(directory: Union[str, Path]) -> TransitionSet:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise InvalidConfigError([f"transitions: {manifest_path} 不存在"])
    manifest = read_json(manifest_path)
    periods = int(manifest["T"])
    F0 = tuple(read_matrix_csv(directory / f"F_0_{t}.csv") for t in range(1, periods + 1))
    F1 = tuple(read_matrix_csv(directory / f"F_1_{t}.csv") for t in range(1, periods + 1))
    ts = TransitionSet(F0=F0, F1=F1, stationary=bool(manifest.get("stationary", periods == 1)))
    if ts.state_count != int(manifest["X"]):
        raise DimensionError(f"manifest 声明 X={manifest['X']}，矩阵实际为 {ts.state_count}")
    return ts
