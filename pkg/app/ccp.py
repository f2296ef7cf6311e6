"""T1EV 条件选择概率层：Λ 映射、Hotz–Miller 反演、ψ 修正与 κ 传播"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.special import logit

from .errors import DimensionError, PeriodError
from .markov import TransitionSet, diff_transition
from .utils import read_frame_csv, write_frame_csv
from .weights import WeightPlan

EULER_GAMMA = float(np.euler_gamma)
CLAMP = 1e-12


def _as_table(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"{name} 必须是 (时期, 状态) 二维数组，当前维度 {arr.ndim}")
    return arr


def _period_row(rows: np.ndarray, stationary: bool, t: int) -> np.ndarray:
    if stationary:
        return rows[0]
    if not 1 <= t <= rows.shape[0]:
        raise PeriodError(f"时期 {t} 超出范围 1..{rows.shape[0]}")
    return rows[t - 1]


@dataclass(frozen=True)
class CcpTable:
    """p₁[t-1, x] = pₜ(1, x)；平稳表只有一行

    由价值差构造时同时保存 ln p₁ 与 ln p₀，ψ 直接取对数值，不经过截断。
    """

    p1: np.ndarray
    stationary: bool = True
    clamped: int = 0
    log_p1: Optional[np.ndarray] = field(default=None, repr=False)
    log_p0: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_probabilities(cls, p1, stationary: bool = True) -> "CcpTable":
        arr = _as_table(p1, "p1")
        if not np.all(np.isfinite(arr)):
            raise DimensionError("CCP 含有 NaN 或 Inf")
        if stationary and arr.shape[0] != 1:
            raise DimensionError(f"平稳 CCP 表只能有一行，当前 {arr.shape[0]}")
        outside = (arr < CLAMP) | (arr > 1.0 - CLAMP)
        clamped = int(outside.sum())
        if clamped:
            logger.warning(f"CCP 有 {clamped} 个值被截断到 [{CLAMP}, 1-{CLAMP}]")
        return cls(p1=np.clip(arr, CLAMP, 1.0 - CLAMP), stationary=stationary, clamped=clamped)

    @classmethod
    def from_value_differences(cls, vtilde, stationary: bool = True) -> "CcpTable":
        """ln p₁ = −ln(1 + e^{−ṽ})，ln p₀ = −ln(1 + e^{ṽ})"""
        v = _as_table(vtilde, "vtilde")
        log_p1 = -np.logaddexp(0.0, -v)
        log_p0 = -np.logaddexp(0.0, v)
        return cls(p1=np.exp(log_p1), stationary=stationary, log_p1=log_p1, log_p0=log_p0)

    @property
    def state_count(self) -> int:
        return self.p1.shape[1]

    @property
    def periods(self) -> int:
        return self.p1.shape[0]

    @property
    def exact(self) -> bool:
        return self.log_p1 is not None

    def p(self, d: int, t: int = 1) -> np.ndarray:
        if d == 0 and self.exact:
            return np.exp(_period_row(self.log_p0, self.stationary, t))
        row = _period_row(self.p1, self.stationary, t)
        return row if d == 1 else 1.0 - row

    def log_p(self, d: int, t: int = 1) -> np.ndarray:
        if self.exact:
            return _period_row(self.log_p1 if d == 1 else self.log_p0, self.stationary, t)
        return np.log(self.p(d, t))

    def to_frame(self) -> pd.DataFrame:
        T, X = self.p1.shape
        return pd.DataFrame({
            "t": np.repeat(np.arange(1, T + 1), X),
            "x": np.tile(np.arange(X), T),
            "p1": self.p1.ravel(),
        })


@dataclass(frozen=True)
class ValueDiffTable:
    """ṽₜ(x) = vₜ(x,1) − vₜ(x,0)"""

    values: np.ndarray
    stationary: bool = True
    boundary: int = 0

    def __post_init__(self):
        arr = _as_table(self.values, "values")
        if not np.all(np.isfinite(arr)):
            raise DimensionError("价值差含有 NaN 或 Inf")
        object.__setattr__(self, "values", arr)

    def at(self, t: int = 1) -> np.ndarray:
        return _period_row(self.values, self.stationary, t)


def lambda_(vtilde: ValueDiffTable) -> CcpTable:
    """Λ(ṽ) = exp(ṽ)/(1 + exp(ṽ))"""
    return CcpTable.from_value_differences(vtilde.values, stationary=vtilde.stationary)


def lambda_inv(p: CcpTable) -> ValueDiffTable:
    """Hotz–Miller 反演 ṽ = ln p − ln(1 − p)"""
    if p.exact:
        return ValueDiffTable(values=p.log_p1 - p.log_p0, stationary=p.stationary)
    if p.clamped:
        logger.warning(f"反演使用了 {p.clamped} 个截断边界上的概率")
    return ValueDiffTable(values=logit(p.p1), stationary=p.stationary, boundary=p.clamped)


def psi(p: Union[CcpTable, np.ndarray], d: int, t: int = 1) -> np.ndarray:
    """ψ_d(p(x)) = γ_E − ln p(d, x)"""
    if isinstance(p, CcpTable):
        return EULER_GAMMA - p.log_p(d, t)
    p1 = np.asarray(p, dtype=np.float64)
    prob = p1 if d == 1 else 1.0 - p1
    return EULER_GAMMA - np.log(prob)


def expected_shock(p: CcpTable, t: int = 1) -> np.ndarray:
    """eᴾ(x) = Σ_d p(d,x)·ψ_d(p(x))"""
    return p.p(1, t) * psi(p, 1, t) + p.p(0, t) * psi(p, 0, t)


def weighted_aggregates(
    w_row, u1, u0, p: Union[CcpTable, np.ndarray], t: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """ū = w·u(·,1) + (1−w)·u(·,0)，ψ̄ = w·ψ₁ + (1−w)·ψ₀"""
    w = np.asarray(w_row, dtype=np.float64)
    u_bar = w * np.asarray(u1, dtype=np.float64) + (1.0 - w) * np.asarray(u0, dtype=np.float64)
    psi_bar = w * psi(p, 1, t) + (1.0 - w) * psi(p, 0, t)
    return u_bar, psi_bar


def kappa_propagate(plan: WeightPlan, ts: TransitionSet) -> List[np.ndarray]:
    """κ̃⁽⁰⁾..κ̃⁽ᵖ⁻¹⁾，κ̃⁽⁰⁾ = F̃ₜ，其后为权重递推给出的 F̃⁽ˢ⁾"""
    dense = plan.dense()
    if dense.kappa0.shape != (ts.state_count, ts.state_count):
        raise DimensionError(
            f"权重计划维度 {dense.kappa0.shape} 与转移矩阵 X={ts.state_count} 不一致"
        )
    expected = diff_transition(ts, plan.start)
    if not np.allclose(dense.kappa0, expected, rtol=0.0, atol=1e-12):
        raise DimensionError(f"权重计划的起始转移差与第 {plan.start} 期 F̃ 不一致")
    return [dense.kappa(s) for s in range(plan.rho)]


def write_ccp_table(p: CcpTable, file_path: Union[str, Path]) -> None:
    write_frame_csv(file_path, p.to_frame())


def read_ccp_table(file_path: Union[str, Path], stationary: Optional[bool] = None) -> CcpTable:
    frame = read_frame_csv(file_path)
    T = int(frame["t"].max())
    X = int(frame["x"].max()) + 1
    p1 = np.full((T, X), np.nan)
    p1[frame["t"].to_numpy() - 1, frame["x"].to_numpy()] = frame["p1"].to_numpy()
    return CcpTable.from_probabilities(p1, stationary=(T == 1) if stationary is None else stationary)
