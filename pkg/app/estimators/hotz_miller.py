"""Hotz–Miller 反演估计器"""

import numpy as np
import scipy.linalg

from ..ccp import expected_shock
from ..config import RANK_TOL
from ..dp import hm_system
from ..errors import InvalidConfigError, SingularSystemError
from ..estimate import LinearValueDiff
from ..markov import diff_transition
from ..utils import stopwatch
from .base_estimator import BaseEstimator


class HMEstimator(BaseEstimator):
    """H = Φ̃ + βF̃(I − βFᴾ)⁻¹Φᴾ，h = βF̃(I − βFᴾ)⁻¹eᴾ；只适用于平稳模型"""

    name = "HM"

    def __init__(self, model, rho: int = 1, tol: float = RANK_TOL):
        if not model.stationary:
            raise InvalidConfigError(["estimation.estimators: HM 只适用于平稳模型"])
        super().__init__(model, rho, tol)

    @property
    def lookahead(self) -> int:
        return 0

    def value_differences(self, ccp, solution=None, T=None, timings=None):
        timings = {} if timings is None else timings
        model = self.model
        utility = model.utility

        with stopwatch(timings, "weights_or_inv"):
            phi_P = ccp.p(1)[:, None] * utility.phi1 + ccp.p(0)[:, None] * utility.phi0
            rhs = np.column_stack([phi_P, expected_shock(ccp)])
            solved = scipy.linalg.lu_solve(hm_system(ccp, model), rhs, check_finite=False)
            if not np.all(np.isfinite(solved)):
                raise SingularSystemError("Hotz–Miller 线性方程组的解含有非有限值")

        with stopwatch(timings, "assembly"):
            continuation = model.beta * (diff_transition(model.transitions) @ solved)
            H = utility.phi1 - utility.phi0 + continuation[:, :-1]
            h = continuation[:, -1]
        return {1: LinearValueDiff(H=H, h=h, t=1)}
