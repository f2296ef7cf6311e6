"""有限依赖决策权重求解

变换权重 w̌ = f̃ ⊙ w 作为自由变量，按伪逆闭式求解；残差 F̃⁽ˢ⁾ 度量 t+s+1 期
价值函数对当前价值差的剩余影响。
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from loguru import logger

from .config import RANK_TOL, VEC_LSQ_MAX_ENTRIES
from .errors import DimensionError, InvalidConfigError
from .linalg import KronProduct, as_matrix, kron_all, spectral_norm, svd
from .markov import KronFactors, TransitionSet, diff_transition

MatrixLike = Union[np.ndarray, KronProduct]

ONE_PERIOD = "OnePeriodFD"
TWO_PERIOD = "TwoPeriodFD"
NOT_DETECTED = "NotDetected"


def _norms(M: MatrixLike) -> Tuple[float, float]:
    if isinstance(M, KronProduct):
        return M.spectral_norm(), M.frobenius_norm()
    return spectral_norm(M), float(np.linalg.norm(M))


@dataclass(frozen=True)
class WeightPlan:
    """ρ 期权重及偏差修正残差

    w_check[s-1] 为 w̌ₜ₊ₛ（行为 xₜ，列为 xₜ₊ₛ），residual_matrices[s-1] 为 F̃⁽ˢ⁾，
    kappa0 为起始期的 F̃ₜ。分解路径下三者均为 KronProduct。
    """

    rho: int
    w_check: Tuple[MatrixLike, ...]
    residual_matrices: Tuple[MatrixLike, ...]
    residuals: Tuple[float, ...]
    frobenius: Tuple[float, ...]
    kappa0: MatrixLike
    method: str = "sequential"
    start: int = 1
    unrealizable: Optional[Tuple[np.ndarray, ...]] = None

    @property
    def F_tilde_rho(self) -> MatrixLike:
        return self.residual_matrices[-1]

    @property
    def factored(self) -> bool:
        return isinstance(self.kappa0, KronProduct)

    def kappa(self, s: int) -> MatrixLike:
        """κ̃⁽ˢ⁾：s = 0 为 F̃ₜ，其余为 F̃⁽ˢ⁾"""
        return self.kappa0 if s == 0 else self.residual_matrices[s - 1]

    def dense(self, max_entries: Optional[int] = None) -> "WeightPlan":
        if not self.factored:
            return self

        def expand(M):
            return M.to_dense(max_entries) if isinstance(M, KronProduct) else M

        return WeightPlan(
            rho=self.rho,
            w_check=tuple(expand(W) for W in self.w_check),
            residual_matrices=tuple(expand(R) for R in self.residual_matrices),
            residuals=self.residuals,
            frobenius=self.frobenius,
            kappa0=expand(self.kappa0),
            method=self.method,
            start=self.start,
        )

    def summary(self) -> dict:
        return {
            "rho": self.rho,
            "method": self.method,
            "start": self.start,
            "residuals": {str(s): r for s, r in enumerate(self.residuals, 1)},
            "frobenius": {str(s): r for s, r in enumerate(self.frobenius, 1)},
            "unrealizable": None
            if self.unrealizable is None
            else {str(s): int(m.sum()) for s, m in enumerate(self.unrealizable, 1)},
        }


def _make_plan(
    w_check: Sequence[MatrixLike],
    residual_matrices: Sequence[MatrixLike],
    kappa0: MatrixLike,
    method: str,
    start: int = 1,
) -> WeightPlan:
    norms = [_norms(R) for R in residual_matrices]
    flags = None
    if not isinstance(kappa0, KronProduct):
        # w̌ₜ₊ₛ = κ̃⁽ˢ⁻¹⁾ ⊙ wₜ₊ₛ
        previous = [kappa0] + list(residual_matrices[:-1])
        flags = tuple(extract_w(W, K)[1] for W, K in zip(w_check, previous))
    return WeightPlan(
        rho=len(w_check),
        w_check=tuple(w_check),
        residual_matrices=tuple(residual_matrices),
        residuals=tuple(n[0] for n in norms),
        frobenius=tuple(n[1] for n in norms),
        kappa0=kappa0,
        method=method,
        start=start,
        unrealizable=flags,
    )


def _check_square(mats: Sequence[Tuple[str, np.ndarray]]) -> int:
    X = mats[0][1].shape[0]
    for name, M in mats:
        if M.shape != (X, X):
            raise DimensionError(f"{name} 维度应为 {(X, X)}，当前 {M.shape}")
    return X


def solve_one_period(Ft, F0_next, Ftilde_next, tol: float = RANK_TOL):
    """W̌ = −Fₜ·F₀,ₜ₊₁·F̃ₜ₊₁⁺，返回 (W̌, 残差 W̌F̃ₜ₊₁ + F̃ₜF₀,ₜ₊₁)"""
    Ft = as_matrix(Ft, "Ft")
    F0_next = as_matrix(F0_next, "F0_next")
    Ftilde_next = as_matrix(Ftilde_next, "Ftilde_next")
    _check_square([("Ft", Ft), ("F0_next", F0_next), ("Ftilde_next", Ftilde_next)])

    B = Ft @ F0_next
    W = -B @ svd(Ftilde_next, tol).pinv()
    return W, W @ Ftilde_next + B


def _sequential_chain(
    Ft: np.ndarray,
    F0s: Sequence[np.ndarray],
    diffs: Sequence[np.ndarray],
    tol: float,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """逐期求解：w̌ₜ₊ₛ = −R₍ₛ₋₁₎F₀,ₜ₊ₛF̃ₜ₊ₛ⁺，R₍ₛ₎ = w̌ₜ₊ₛF̃ₜ₊ₛ + R₍ₛ₋₁₎F₀,ₜ₊ₛ"""
    cache = {}
    W_list, R_list = [], []
    R = Ft
    for F0, D in zip(F0s, diffs):
        key = id(D)
        if key not in cache:
            cache[key] = svd(D, tol).pinv()
        B = R @ F0
        W = -B @ cache[key]
        R = W @ D + B
        W_list.append(W)
        R_list.append(R)
    return W_list, R_list


def solve_sequential(Ftilde, F0, rho: int, tol: float = RANK_TOL) -> WeightPlan:
    """平稳模型的 ρ 期逐期权重"""
    if rho < 1:
        raise InvalidConfigError([f"rho: 需要 rho >= 1，当前 {rho}"])
    Ftilde = as_matrix(Ftilde, "Ftilde")
    F0 = as_matrix(F0, "F0")
    _check_square([("Ftilde", Ftilde), ("F0", F0)])

    W_list, R_list = _sequential_chain(Ftilde, [F0] * rho, [Ftilde] * rho, tol)
    plan = _make_plan(W_list, R_list, Ftilde, "sequential")
    logger.debug(f"逐期权重求解完成: rho={rho}, 残差={['%.3e' % r for r in plan.residuals]}")
    return plan


def solve_nonstationary_sequential(
    ts: TransitionSet, t: int, rho: int, tol: float = RANK_TOL
) -> WeightPlan:
    """非平稳逐期权重，使用 t+1..t+ρ 期的转移"""
    if rho < 1:
        raise InvalidConfigError([f"rho: 需要 rho >= 1，当前 {rho}"])
    Ft = diff_transition(ts, t)
    steps = range(t + 1, t + rho + 1)
    diffs = [diff_transition(ts, k) for k in steps]
    F0s = [ts.F(0, k) for k in steps]
    W_list, R_list = _sequential_chain(Ft, F0s, diffs, tol)
    return _make_plan(W_list, R_list, Ft, "sequential", start=t)


def bias_correction_closed_form(Ftilde, F0, rho: int, tol: float = RANK_TOL) -> np.ndarray:
    """F̃⁽ᵖ⁾ = (w̌ₜ₊₁F̃ + F̃F₀)(F₀(I − F̃⁺F̃))^(ρ−1)"""
    Ftilde = as_matrix(Ftilde, "Ftilde")
    F0 = as_matrix(F0, "F0")
    factors = svd(Ftilde, tol)
    W1 = -Ftilde @ F0 @ factors.pinv()
    step = F0 @ factors.null_projector()
    return (W1 @ Ftilde + Ftilde @ F0) @ np.linalg.matrix_power(step, rho - 1)


def solve_two_period_optimal(Ftilde, F0, tol: float = RANK_TOL) -> WeightPlan:
    """两期最优权重：第一期权重选择使 F̃⁽²⁾ 最小

    返回的计划中 w_check[0] = w̌₁*，w_check[1] = w̌₂，residual_matrices[1] = F̃⁽²⁾。
    """
    Ftilde = as_matrix(Ftilde, "Ftilde")
    F0 = as_matrix(F0, "F0")
    _check_square([("Ftilde", Ftilde), ("F0", F0)])
    return _two_period(Ftilde, F0, Ftilde, F0, Ftilde, tol, start=1, method="optimal")


def solve_nonstationary_two_period(
    Ft, F0_t1, Ftilde_t1, F0_t2, Ftilde_t2, tol: float = RANK_TOL, start: int = 1
) -> WeightPlan:
    """非平稳两期权重：𝓔₀ = F₀,ₜ₊₂(I − F̃ₜ₊₂⁺F̃ₜ₊₂)"""
    mats = [
        ("Ft", as_matrix(Ft, "Ft")),
        ("F0_t1", as_matrix(F0_t1, "F0_t1")),
        ("Ftilde_t1", as_matrix(Ftilde_t1, "Ftilde_t1")),
        ("F0_t2", as_matrix(F0_t2, "F0_t2")),
        ("Ftilde_t2", as_matrix(Ftilde_t2, "Ftilde_t2")),
    ]
    _check_square(mats)
    return _two_period(*(M for _, M in mats), tol, start=start, method="optimal")


def _two_period(Ft, F0_t1, D1, F0_t2, D2, tol, start, method) -> WeightPlan:
    f2 = svd(D2, tol)
    E0 = F0_t2 @ f2.null_projector()
    M = D1 @ E0
    B = Ft @ F0_t1 @ E0
    fm = svd(M, tol)

    W1 = -B @ fm.pinv()
    R1 = W1 @ D1 + Ft @ F0_t1
    W2 = -R1 @ F0_t2 @ f2.pinv()
    R2 = B @ fm.null_projector()
    return _make_plan([W1, W2], [R1, R2], Ft, method, start=start)


def nonstationary_two_period_plan(ts: TransitionSet, t: int, tol: float = RANK_TOL) -> WeightPlan:
    return solve_nonstationary_two_period(
        diff_transition(ts, t),
        ts.F(0, t + 1),
        diff_transition(ts, t + 1),
        ts.F(0, t + 2),
        diff_transition(ts, t + 2),
        tol,
        start=t,
    )


@dataclass(frozen=True)
class FdDiagnosis:
    rank_Ftilde: int
    nullity: int
    norm_S01: float
    norm_S01_S11_proj: float
    verdict: str
    tol: float

    def to_dict(self) -> dict:
        return {
            "rank_Ftilde": self.rank_Ftilde,
            "nullity": self.nullity,
            "norm_S01": self.norm_S01,
            "norm_S01_S11_proj": self.norm_S01_S11_proj,
            "verdict": self.verdict,
            "tol": self.tol,
        }


def diagnose_finite_dependence(Ftilde, F0, tol: float = RANK_TOL) -> FdDiagnosis:
    """按 F̃ 的右奇异向量对 S₀ = VᵀF₀V 分块，判断 1 期或 2 期有限依赖"""
    Ftilde = as_matrix(Ftilde, "Ftilde")
    F0 = as_matrix(F0, "F0")
    _check_square([("Ftilde", Ftilde), ("F0", F0)])

    factors = svd(Ftilde, tol)
    r = factors.rank
    V = factors.V
    S0 = V.T @ F0 @ V
    S01 = S0[:r, r:]
    S11 = S0[r:, r:]

    norm_S01 = spectral_norm(S01)
    if S01.size:
        proj = svd(S01, tol).null_projector()
        norm_two = spectral_norm(S01 @ S11 @ proj)
    else:
        norm_two = 0.0

    if norm_S01 <= tol:
        verdict = ONE_PERIOD
    elif norm_two <= tol:
        verdict = TWO_PERIOD
    else:
        verdict = NOT_DETECTED

    logger.debug(
        f"有限依赖诊断: rank={r}, nullity={factors.nullity}, "
        f"|S01|={norm_S01:.3e}, |S01·S11·P|={norm_two:.3e} -> {verdict}"
    )
    return FdDiagnosis(
        rank_Ftilde=r,
        nullity=factors.nullity,
        norm_S01=norm_S01,
        norm_S01_S11_proj=norm_two,
        verdict=verdict,
        tol=tol,
    )


def kron_solve(kf: KronFactors, rho: int, tol: float = RANK_TOL) -> WeightPlan:
    """分解路径：只在内生块 (y, ω) 上求权重

    A₀ = F̃_ω，w̌_ω,ₛ = −Aₛ₋₁F_ω,₀F̃_ω⁺，Aₛ = w̌_ω,ₛF̃_ω + Aₛ₋₁F_ω,₀；
    完整权重 w̌ₛ = w̌_ω,ₛ ⊗ (F_z^{s+1}F_z⁺)，残差 F̃⁽ˢ⁾ = Aₛ ⊗ F_z^{s+1}。
    """
    if rho < 1:
        raise InvalidConfigError([f"rho: 需要 rho >= 1，当前 {rho}"])
    if not kf.stationary:
        raise InvalidConfigError(["kron_solve: 只支持平稳模型"])

    F_w0 = kf.F_omega(0)
    D = kf.F_omega(1) - F_w0
    D_pinv = svd(D, tol).pinv()
    chain_pinvs = [svd(f, tol).pinv() for f in kf.z_chains]

    W_list, R_list = [], []
    A = D
    for s in range(1, rho + 1):
        B = A @ F_w0
        W = -B @ D_pinv
        A = W @ D + B
        powers = [np.linalg.matrix_power(f, s + 1) for f in kf.z_chains]
        right_w = kron_all([P @ Q for P, Q in zip(powers, chain_pinvs)])
        W_list.append(KronProduct(W, right_w))
        R_list.append(KronProduct(A, kron_all(powers)))

    plan = _make_plan(W_list, R_list, KronProduct(D, kf.F_z), "kron")
    logger.debug(
        f"分解路径求解完成: 内生块={kf.endogenous_size}, 外生块={kf.exogenous_size}, "
        f"残差={['%.3e' % r for r in plan.residuals]}"
    )
    return plan


def vec_lsq_solve(
    Ftilde,
    F0,
    Ft=None,
    method: str = "explicit",
    tol: float = RANK_TOL,
    max_entries: Optional[int] = None,
) -> Tuple[np.ndarray, float]:
    """只依赖 xₜ₊₁ 的权重 w：min ‖Fₜ(diag(w)F̃ + F₀)‖_F

    G = (F̃ᵀ ⊗ Fₜ)·L 的第 i 列为 vec(Fₜ[:, i]·F̃[i, :])；method="normal" 用
    GᵀG = (FₜᵀFₜ) ∘ (F̃F̃ᵀ) 直接构造法方程，不生成 X²×X 中间量。
    """
    Ftilde = as_matrix(Ftilde, "Ftilde")
    F0 = as_matrix(F0, "F0")
    Ft = Ftilde if Ft is None else as_matrix(Ft, "Ft")
    X = _check_square([("Ftilde", Ftilde), ("F0", F0), ("Ft", Ft)])
    target = Ft @ F0

    if method == "explicit":
        cap = VEC_LSQ_MAX_ENTRIES if max_entries is None else max_entries
        if X**3 > cap:
            raise DimensionError(
                f"vec-LSQ 中间矩阵 {X * X}x{X} 超出上限 {cap} 个元素，"
                "请使用 method='normal' 或 dense/kron 路径"
            )
        # 列主序 vec：行下标为 b·X + a
        G = np.einsum("ai,ib->bai", Ft, Ftilde).reshape(X * X, X)
        g = -target.ravel(order="F")
        w = scipy.linalg.lstsq(G, g, cond=tol)[0]
    elif method == "normal":
        gram = (Ft.T @ Ft) * (Ftilde @ Ftilde.T)
        rhs = -np.einsum("ai,ab,ib->i", Ft, target, Ftilde)
        w = svd(gram, tol).pinv() @ rhs
    else:
        raise InvalidConfigError([f"method: 可选 explicit/normal，当前 {method!r}"])

    residual = (Ft * w[None, :]) @ Ftilde + target
    return w, float(np.linalg.norm(residual))


def state_weight_plan(w, Ft, F0_next, Ftilde_next, start: int = 1) -> WeightPlan:
    """由只依赖下一期状态的权重 w 构造一期计划：W̌ = Fₜ·diag(w)"""
    Ft = as_matrix(Ft, "Ft")
    W = Ft * np.asarray(w, dtype=np.float64)[None, :]
    R = W @ Ftilde_next + Ft @ F0_next
    return _make_plan([W], [R], Ft, "state-only", start=start)


def extract_w(W_check, Ftilde, eps: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    """由 w̌ 还原 w = w̌ / f̃；f̃ = 0 而 w̌ ≠ 0 的位置标记为不可实现"""
    W_check = np.asarray(W_check, dtype=np.float64)
    Ftilde = np.asarray(Ftilde, dtype=np.float64)
    if W_check.shape != Ftilde.shape:
        raise DimensionError(f"W̌ 与 F̃ 维度不一致: {W_check.shape} vs {Ftilde.shape}")
    usable = np.abs(Ftilde) > eps
    W = np.zeros_like(W_check)
    np.divide(W_check, Ftilde, out=W, where=usable)
    flags = ~usable & (np.abs(W_check) > eps)
    return W, flags


def solve_plan(
    ts: TransitionSet, rho: int, method: str = "sequential", t: int = 1, tol: float = RANK_TOL
) -> WeightPlan:
    """按模型类型分派到对应的求解器"""
    if method == "optimal" and rho != 2:
        raise InvalidConfigError([f"solver.rho: 最优权重只对 rho=2 定义，当前 {rho}"])
    if ts.stationary:
        Ftilde = diff_transition(ts)
        if method == "optimal":
            return solve_two_period_optimal(Ftilde, ts.F(0), tol)
        return solve_sequential(Ftilde, ts.F(0), rho, tol)
    if method == "optimal":
        return nonstationary_two_period_plan(ts, t, tol)
    return solve_nonstationary_sequential(ts, t, rho, tol)
