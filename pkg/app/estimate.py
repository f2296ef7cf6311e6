"""两步估计核心：一阶段 CCP、线性价值差 H·θ + h 组装、logit 似然与阻尼牛顿法"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg
from loguru import logger
from scipy.special import expit

from .ccp import EULER_GAMMA, CcpTable
from .dp import Panel, Solution
from .errors import DimensionError, InvalidConfigError, PeriodError
from .markov import TransitionSet, UtilityModel
from .weights import WeightPlan

GRAD_TOL = 1e-8
NEWTON_MAX_ITER = 200
MAX_HALVINGS = 40


@dataclass(frozen=True)
class LinearValueDiff:
    """ṽ(x;θ) = H(x)ᵀθ + h(x) (+ b(x))，对应某个起始时期 t"""

    H: np.ndarray
    h: np.ndarray
    b: Optional[np.ndarray] = None
    t: int = 1

    def offset(self) -> np.ndarray:
        return self.h if self.b is None else self.h + self.b

    def vtilde(self, theta) -> np.ndarray:
        return self.H @ np.asarray(theta, dtype=np.float64) + self.offset()


@dataclass
class EstimationReport:
    estimator: str
    theta: np.ndarray
    names: Tuple[str, ...]
    loglik: float
    grad_norm: float
    iterations: int
    converged: bool
    n_obs: int
    timings: Dict[str, float] = field(default_factory=dict)
    residuals: Tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "theta": dict(zip(self.names, self.theta.tolist())),
            "loglik": self.loglik,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "n_obs": self.n_obs,
            "timings": self.timings,
            "residuals": list(self.residuals),
        }


def estimate_ccp(
    panel: Panel,
    X: int,
    T: Optional[int] = None,
    mode: str = "oracle",
    solution: Optional[Solution] = None,
) -> CcpTable:
    """一阶段 CCP

    frequency 模式按 (n₁ + 0.5)/(n + 1) 平滑；T 为 None 时按平稳模型合并所有时期。
    oracle 模式直接复制数据生成解的 CCP。
    """
    if mode == "oracle":
        if solution is None:
            raise InvalidConfigError(["estimation.ccp_mode: oracle 模式需要数据生成解"])
        return solution.ccp
    if mode != "frequency":
        raise InvalidConfigError([f"estimation.ccp_mode: 未知模式 {mode!r}"])

    if np.any(panel.x >= X):
        raise DimensionError(f"面板状态下标超出 [0, {X})")
    if T is None:
        n = np.bincount(panel.x, minlength=X)
        n1 = np.bincount(panel.x, weights=panel.d, minlength=X)
        return CcpTable.from_probabilities((n1 + 0.5) / (n + 1.0), stationary=True)

    cells = (panel.t - 1) * X + panel.x
    keep = panel.t <= T
    n = np.bincount(cells[keep], minlength=T * X).reshape(T, X)
    n1 = np.bincount(cells[keep], weights=panel.d[keep], minlength=T * X).reshape(T, X)
    return CcpTable.from_probabilities((n1 + 0.5) / (n + 1.0), stationary=False)


def _check_plan(plan: WeightPlan, ts: TransitionSet, utility: UtilityModel, p: CcpTable, rho):
    rho = plan.rho if rho is None else rho
    if not 1 <= rho <= plan.rho:
        raise InvalidConfigError([f"rho: 需要 1 <= rho <= {plan.rho}，当前 {rho}"])
    X = ts.state_count
    if plan.kappa0.shape != (X, X) or utility.state_count != X or p.state_count != X:
        raise DimensionError("权重计划、转移、效用与 CCP 的状态数不一致")

    t = plan.start
    if not ts.stationary and t + rho > ts.horizon:
        raise PeriodError(f"起始期 {t} 加 rho={rho} 超出转移期数 {ts.horizon}")
    if not p.stationary and t + rho > p.periods:
        raise PeriodError(f"起始期 {t} 加 rho={rho} 超出 CCP 期数 {p.periods}")
    return rho


def assemble_H(plan: WeightPlan, utility: UtilityModel, beta: float, rho: int) -> np.ndarray:
    """H = Φ̃ + Σₛ βˢ[w̌ₜ₊ₛΦ̃ + κ̃⁽ˢ⁻¹⁾Φ₀]"""
    phi_diff = utility.phi1 - utility.phi0
    H = phi_diff.copy()
    for s in range(1, rho + 1):
        H += beta**s * (plan.w_check[s - 1] @ phi_diff + plan.kappa(s - 1) @ utility.phi0)
    return H


def assemble_h(plan: WeightPlan, p: CcpTable, beta: float, rho: int) -> np.ndarray:
    """h = Σₛ βˢ[w̌ₜ₊ₛẽₜ₊ₛ + κ̃⁽ˢ⁻¹⁾e₀,ₜ₊ₛ]"""
    h = np.zeros(p.state_count)
    for s in range(1, rho + 1):
        log_p1 = p.log_p(1, plan.start + s)
        log_p0 = p.log_p(0, plan.start + s)
        e_diff = log_p0 - log_p1
        e0 = EULER_GAMMA - log_p0
        h += beta**s * (plan.w_check[s - 1] @ e_diff + plan.kappa(s - 1) @ e0)
    return h


def assemble_linear(
    plan: WeightPlan,
    ts: TransitionSet,
    utility: UtilityModel,
    p: CcpTable,
    beta: float,
    rho: Optional[int] = None,
    V: Optional[np.ndarray] = None,
) -> LinearValueDiff:
    """ρ 期有限依赖表示

    ṽₜ = ũₜ + Σₛ βˢ[w̌ₜ₊ₛ(Ũ + ẽ)ₜ₊ₛ + κ̃⁽ˢ⁻¹⁾(U₀ + e₀)ₜ₊ₛ] (+ β^{ρ+1}F̃⁽ᵖ⁾V)，
    其中 ẽ = ln(p₀/p₁)，e₀ = γ_E − ln p₀。
    """
    rho = _check_plan(plan, ts, utility, p, rho)
    H = assemble_H(plan, utility, beta, rho)
    h = assemble_h(plan, p, beta, rho)

    b = None
    if V is not None:
        V = np.asarray(V, dtype=np.float64)
        if V.shape != (ts.state_count,):
            raise DimensionError(f"V 维度应为 {(ts.state_count,)}，当前 {V.shape}")
        b = beta ** (rho + 1) * (plan.residual_matrices[rho - 1] @ V)
    return LinearValueDiff(H=H, h=h, b=b, t=plan.start)


def design(
    lins: Dict[int, LinearValueDiff], panel: Panel, stationary: bool
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """把各期的 (H, h) 映射到面板观测；非平稳时只保留有表示的时期"""
    if stationary:
        lin = lins[1]
        return lin.H[panel.x], lin.offset()[panel.x], panel.d.astype(np.float64)

    rows_H, rows_h, rows_d = [], [], []
    for t, lin in sorted(lins.items()):
        mask = panel.t == t
        rows_H.append(lin.H[panel.x[mask]])
        rows_h.append(lin.offset()[panel.x[mask]])
        rows_d.append(panel.d[mask].astype(np.float64))
    if not rows_H:
        raise PeriodError("没有可用于估计的时期")
    return np.vstack(rows_H), np.concatenate(rows_h), np.concatenate(rows_d)


def logit_loglik(theta, H: np.ndarray, h: np.ndarray, d: np.ndarray) -> Tuple[float, np.ndarray]:
    """ℓ(θ) = Σ d·v − ln(1 + eᵛ)，v = Hθ + h"""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise InvalidConfigError(["theta: 含有非有限值"])
    v = H @ theta + h
    value = float(np.sum(d * v - np.logaddexp(0.0, v)))
    grad = H.T @ (d - expit(v))
    return value, grad


def fd_loglik(
    theta, lins: Dict[int, LinearValueDiff], panel: Panel, stationary: bool = True
) -> Tuple[float, np.ndarray]:
    return logit_loglik(theta, *design(lins, panel, stationary))


def newton_maximize(
    H: np.ndarray,
    h: np.ndarray,
    d: np.ndarray,
    theta0=None,
    tol: float = GRAD_TOL,
    max_iter: int = NEWTON_MAX_ITER,
):
    """凹 logit 似然的阻尼牛顿法，Hessian = −Σ Λ(1−Λ)HHᵀ；步长减半保证单调上升"""
    K = H.shape[1]
    theta = np.zeros(K) if theta0 is None else np.asarray(theta0, dtype=np.float64).copy()
    value, grad = logit_loglik(theta, H, h, d)

    for iteration in range(1, max_iter + 1):
        if np.max(np.abs(grad)) <= tol:
            return theta, value, grad, iteration - 1, True

        lam = expit(H @ theta + h)
        info = (H * (lam * (1.0 - lam))[:, None]).T @ H
        try:
            step = scipy.linalg.solve(info, grad, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError):
            step = scipy.linalg.lstsq(info, grad)[0]

        scale = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = theta + scale * step
            cand_value, cand_grad = logit_loglik(candidate, H, h, d)
            if cand_value >= value - 1e-12 * (1.0 + abs(value)):
                break
            scale *= 0.5
        else:
            logger.warning(f"牛顿步长减半 {MAX_HALVINGS} 次仍未上升，停止于第 {iteration} 次迭代")
            return theta, value, grad, iteration, False

        theta, value, grad = candidate, cand_value, cand_grad

    converged = bool(np.max(np.abs(grad)) <= tol)
    return theta, value, grad, max_iter, converged
