"""有限依赖估计器：FD（逐期权重）、FD2（两期最优权重）、AM（只依赖下一期状态的权重）与 FD_BC"""

from typing import Optional

import numpy as np

from ..config import VEC_LSQ_MAX_ENTRIES
from ..dp import Solution
from ..markov import diff_transition
from ..weights import WeightPlan, solve_plan, state_weight_plan, vec_lsq_solve
from .base_estimator import WeightEstimator


class FDEstimator(WeightEstimator):
    """ρ 期逐期权重"""

    name = "FD"

    def build_plan(self, t: int) -> WeightPlan:
        return solve_plan(self.model.transitions, self.rho, "sequential", t, self.tol)


class FD2Estimator(WeightEstimator):
    """两期最优权重；非平稳模型使用 t+1、t+2 期的转移"""

    name = "FD2"

    @property
    def lookahead(self) -> int:
        return 2

    def build_plan(self, t: int) -> WeightPlan:
        return solve_plan(self.model.transitions, 2, "optimal", t, self.tol)


class AMEstimator(WeightEstimator):
    """权重 w(x') 与起始状态无关，按 vec 最小二乘求解，ρ = 1"""

    name = "AM"

    @property
    def lookahead(self) -> int:
        return 1

    def build_plan(self, t: int) -> WeightPlan:
        ts = self.model.transitions
        X = ts.state_count
        Ft = diff_transition(ts, t)
        F0_next = ts.F(0, t + 1)
        Ftilde_next = diff_transition(ts, t + 1)
        method = "explicit" if X**3 <= VEC_LSQ_MAX_ENTRIES else "normal"
        w, _ = vec_lsq_solve(Ftilde_next, F0_next, Ft=Ft, method=method, tol=self.tol)
        return state_weight_plan(w, Ft, F0_next, Ftilde_next, start=t)


class FDBiasCorrectedEstimator(FDEstimator):
    """FD 加上偏差项 β^{ρ+1}F̃⁽ᵖ⁾V，V 取自数据生成解"""

    name = "FD_BC"
    needs_solution = True

    def bias_values(self, t: int, solution: Optional[Solution]) -> Optional[np.ndarray]:
        if solution.stationary:
            return solution.value()
        k = t + self.rho + 1
        if k > solution.horizon:
            return np.zeros(self.model.state_count)
        return solution.value(k)
