"""异常类型"""

from typing import Any, Dict, List, Optional


class FindepError(Exception):
    """所有库内错误的基类"""

    def details(self) -> Dict[str, Any]:
        return {}


class InvalidConfigError(FindepError, ValueError):
    """配置或参数不合法，keys 列出所有出错的配置项"""

    def __init__(self, keys: List[str]):
        self.keys = list(keys)
        super().__init__("配置校验失败: " + "; ".join(self.keys))

    def details(self) -> Dict[str, Any]:
        return {"keys": self.keys}


class DimensionError(FindepError, ValueError):
    """矩阵维度不匹配、含非有限值或超出内存上限"""


class PeriodError(FindepError, IndexError):
    """时期下标越界"""


class ConvergenceError(FindepError, RuntimeError):
    """迭代求解未收敛"""

    def __init__(self, message: str, iterations: int, residual: Optional[float] = None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{message} (迭代 {iterations} 次, 残差 {residual})")

    def details(self) -> Dict[str, Any]:
        return {"iterations": self.iterations, "residual": self.residual}


class SingularSystemError(FindepError, ArithmeticError):
    """线性方程组奇异"""
