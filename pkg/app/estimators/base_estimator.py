"""两步估计器基类"""

import time
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from ..ccp import CcpTable
from ..config import RANK_TOL
from ..dp import Panel, Solution
from ..errors import InvalidConfigError, PeriodError
from ..estimate import (
    GRAD_TOL,
    NEWTON_MAX_ITER,
    EstimationReport,
    LinearValueDiff,
    assemble_linear,
    design,
    newton_maximize,
)
from ..markov import Model
from ..utils import stopwatch
from ..weights import WeightPlan


class BaseEstimator(ABC):
    """估计器基类，定义通用接口

    子类给出各估计时期的线性价值差 ṽₜ = Hₜθ + hₜ；似然最大化与计时在这里统一完成。
    """

    name = "base"
    needs_solution = False

    def __init__(self, model: Model, rho: int = 1, tol: float = RANK_TOL):
        if rho < 1:
            raise InvalidConfigError([f"solver.rho: 需要 rho >= 1，当前 {rho}"])
        self.model = model
        self.rho = rho
        self.tol = tol
        logger.debug(f"初始化估计器: {self.name}, rho={rho}, X={model.state_count}")

    @property
    def lookahead(self) -> int:
        """每个估计时期所需的前瞻期数"""
        return self.rho

    def estimation_periods(self, T: Optional[int] = None) -> List[int]:
        """平稳模型只有第 1 期；非平稳模型要求 t + 前瞻期数不超过数据与转移的期数"""
        if self.model.stationary:
            return [1]
        last = self.model.transitions.horizon
        if T is not None:
            last = min(last, T)
        return list(range(1, last - self.lookahead + 1))

    def prepare(self, T: Optional[int] = None) -> float:
        """预先完成与 CCP 无关的计算，返回累计耗时（秒）"""
        return 0.0

    def residuals(self, T: Optional[int] = None) -> Tuple[float, ...]:
        return ()

    @abstractmethod
    def value_differences(
        self,
        ccp: CcpTable,
        solution: Optional[Solution] = None,
        T: Optional[int] = None,
        timings: Optional[Dict[str, float]] = None,
    ) -> Dict[int, LinearValueDiff]:
        """各估计时期的线性价值差，timings 记录 weights_or_inv 与 assembly 耗时"""

    def estimate(
        self,
        panel: Panel,
        ccp: CcpTable,
        solution: Optional[Solution] = None,
        tol: float = GRAD_TOL,
        max_iter: int = NEWTON_MAX_ITER,
    ) -> EstimationReport:
        if self.needs_solution and solution is None:
            raise InvalidConfigError([f"estimation.estimators: {self.name} 需要数据生成解"])

        timings: Dict[str, float] = {}
        lins = self.value_differences(ccp, solution, panel.T, timings)
        if not lins:
            raise PeriodError(f"{self.name}: 数据期数 {panel.T} 不足以构造价值差表示")

        with stopwatch(timings, "optimize"):
            H, h, d = design(lins, panel, self.model.stationary)
            theta, value, grad, iterations, converged = newton_maximize(
                H, h, d, tol=tol, max_iter=max_iter
            )
        timings["total"] = sum(timings.values())

        grad_norm = float(np.max(np.abs(grad)))
        if converged:
            logger.debug(f"{self.name}: 牛顿法 {iterations} 次迭代收敛, ℓ={value:.6f}")
        else:
            logger.warning(f"{self.name}: 牛顿法未收敛, 梯度范数 {grad_norm:.3e}")

        return EstimationReport(
            estimator=self.name,
            theta=theta,
            names=self.model.utility.names,
            loglik=value,
            grad_norm=grad_norm,
            iterations=iterations,
            converged=converged,
            n_obs=int(d.size),
            timings=timings,
            residuals=self.residuals(panel.T),
        )


class WeightEstimator(BaseEstimator):
    """基于决策权重的估计器：权重只依赖转移矩阵，按起始期缓存"""

    def __init__(self, model: Model, rho: int = 1, tol: float = RANK_TOL):
        super().__init__(model, rho, tol)
        self._plans: Dict[int, WeightPlan] = {}
        self.prepare_time = 0.0

    @abstractmethod
    def build_plan(self, t: int) -> WeightPlan:
        """求解起始期 t 的权重计划"""

    def prepare(self, T: Optional[int] = None) -> float:
        missing = [t for t in self.estimation_periods(T) if t not in self._plans]
        if missing:
            start = time.perf_counter()
            for t in missing:
                self._plans[t] = self.build_plan(t)
            self.prepare_time += time.perf_counter() - start
            logger.debug(f"{self.name}: 权重求解 {len(missing)} 期, 耗时 {self.prepare_time:.4f}s")
        return self.prepare_time

    def plans(self, T: Optional[int] = None) -> Dict[int, WeightPlan]:
        self.prepare(T)
        return {t: self._plans[t] for t in self.estimation_periods(T)}

    def residuals(self, T: Optional[int] = None) -> Tuple[float, ...]:
        plans = self.plans(T)
        return plans[min(plans)].residuals if plans else ()

    def bias_values(self, t: int, solution: Optional[Solution]) -> Optional[np.ndarray]:
        return None

    def value_differences(self, ccp, solution=None, T=None, timings=None):
        timings = {} if timings is None else timings
        timings["weights_or_inv"] = self.prepare(T)
        lins = {}
        with stopwatch(timings, "assembly"):
            for t, plan in self.plans(T).items():
                lins[t] = assemble_linear(
                    plan,
                    self.model.transitions,
                    self.model.utility,
                    ccp,
                    self.model.beta,
                    V=self.bias_values(t, solution),
                )
        return lins
