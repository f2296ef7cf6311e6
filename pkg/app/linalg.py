"""稠密线性代数内核：SVD、伪逆、零空间投影与 Kronecker 积"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from loguru import logger

from .config import KRON_MAX_ENTRIES, RANK_TOL
from .errors import ConvergenceError, DimensionError

# gesdd 失败时依次退回到更稳健的 gesvd
_SVD_DRIVERS = ("gesdd", "gesvd")


def as_matrix(M, name: str = "M") -> np.ndarray:
    """转换为二维 float64 数组并检查有限性"""
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} 必须是二维矩阵，当前维度 {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} 含有 NaN 或 Inf")
    return arr


def require_shape(M: np.ndarray, shape: Tuple[int, int], name: str) -> None:
    if M.shape != shape:
        raise DimensionError(f"{name} 维度应为 {shape}，当前 {M.shape}")


@dataclass(frozen=True)
class SvdFactors:
    """M = U·diag(S)·Vᵀ，U 与 V 为完整方阵"""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    rank: int
    threshold: float

    @property
    def shape(self) -> Tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    @property
    def nullity(self) -> int:
        return self.V.shape[0] - self.rank

    def pinv(self) -> np.ndarray:
        r = self.rank
        return (self.V[:, :r] / self.S[:r]) @ self.U[:, :r].T

    def null_projector(self) -> np.ndarray:
        N = self.V[:, self.rank:]
        return N @ N.T

    def reconstruct(self) -> np.ndarray:
        m, n = self.shape
        k = min(m, n)
        return (self.U[:, :k] * self.S) @ self.V[:, :k].T


def svd(M, tol: float = RANK_TOL, absolute: bool = False) -> SvdFactors:
    """完整 SVD；秩按 tol·σ_max（相对）或 tol（绝对）截断"""
    M = as_matrix(M)
    m, n = M.shape
    if m == 0 or n == 0:
        return SvdFactors(np.eye(m), np.zeros(0), np.eye(n), 0, 0.0)

    last_error = None
    for attempt, driver in enumerate(_SVD_DRIVERS, 1):
        try:
            U, S, Vt = scipy.linalg.svd(
                M, full_matrices=True, lapack_driver=driver, check_finite=False
            )
            break
        except scipy.linalg.LinAlgError as e:
            last_error = e
            logger.warning(f"SVD 驱动 {driver} 未收敛 (尝试 {attempt}/{len(_SVD_DRIVERS)}): {e}")
    else:
        raise ConvergenceError(f"SVD 未收敛: {last_error}", iterations=len(_SVD_DRIVERS))

    threshold = tol if absolute else tol * (S[0] if S.size else 0.0)
    rank = int(np.count_nonzero(S > threshold))
    return SvdFactors(U=U, S=S, V=Vt.T, rank=rank, threshold=float(threshold))


def pinv(M, tol: float = RANK_TOL) -> np.ndarray:
    """Moore–Penrose 伪逆"""
    return svd(M, tol).pinv()


def null_projector(M, tol: float = RANK_TOL) -> np.ndarray:
    """零空间正交投影 I − M⁺M（cols×cols）"""
    return svd(M, tol).null_projector()


def spectral_norm(M) -> float:
    """最大奇异值"""
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(M, check_finite=False)[0])


def kron(A, B, max_entries: Optional[int] = None) -> np.ndarray:
    """Kronecker 积，结果规模超过上限时直接报错"""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    cap = KRON_MAX_ENTRIES if max_entries is None else max_entries
    rows = A.shape[0] * B.shape[0]
    cols = A.shape[1] * B.shape[1]
    if rows * cols > cap:
        raise DimensionError(
            f"Kronecker 积 {rows}x{cols} 超出上限 {cap} 个元素，请改用分解路径"
        )
    return np.kron(A, B)


def kron_all(mats: Sequence[np.ndarray], max_entries: Optional[int] = None) -> np.ndarray:
    out = np.ones((1, 1))
    for M in mats:
        out = kron(out, M, max_entries)
    return out


@dataclass(frozen=True)
class KronProduct:
    """以因子形式保存的 left ⊗ right，不展开为稠密矩阵"""

    left: np.ndarray
    right: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return (
            self.left.shape[0] * self.right.shape[0],
            self.left.shape[1] * self.right.shape[1],
        )

    def spectral_norm(self) -> float:
        return spectral_norm(self.left) * spectral_norm(self.right)

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.left) * np.linalg.norm(self.right))

    def to_dense(self, max_entries: Optional[int] = None) -> np.ndarray:
        return kron(self.left, self.right, max_entries)

    def __matmul__(self, M):
        # (A⊗B)·M，M 的行按 (j, l) 排列
        M = np.asarray(M, dtype=np.float64)
        vector = M.ndim == 1
        if vector:
            M = M[:, None]
        (ra, ca), (rb, cb) = self.left.shape, self.right.shape
        if M.shape[0] != ca * cb:
            raise DimensionError(f"KronProduct 右乘维度不匹配: {self.shape} @ {M.shape}")
        blocks = M.reshape(ca, cb, M.shape[1])
        out = np.einsum("ij,kl,jlm->ikm", self.left, self.right, blocks, optimize=True)
        out = out.reshape(ra * rb, M.shape[1])
        return out[:, 0] if vector else out
