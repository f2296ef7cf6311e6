"""估计器模块"""

from typing import Dict, Type

from ..config import RANK_TOL
from ..errors import InvalidConfigError
from ..markov import Model
from .base_estimator import BaseEstimator, WeightEstimator
from .finite_dependence import AMEstimator, FD2Estimator, FDBiasCorrectedEstimator, FDEstimator
from .hotz_miller import HMEstimator

REGISTRY: Dict[str, Type[BaseEstimator]] = {
    cls.name: cls
    for cls in (FDEstimator, FD2Estimator, HMEstimator, AMEstimator, FDBiasCorrectedEstimator)
}


def create_estimator(name: str, model: Model, rho: int = 1, tol: float = RANK_TOL) -> BaseEstimator:
    """按名称创建估计器"""
    try:
        cls = REGISTRY[name]
    except KeyError as e:
        raise InvalidConfigError([f"estimation.estimators: 未知估计器 {name!r}"]) from e
    return cls(model, rho=rho, tol=tol)


__all__ = [
    "BaseEstimator",
    "WeightEstimator",
    "FDEstimator",
    "FD2Estimator",
    "HMEstimator",
    "AMEstimator",
    "FDBiasCorrectedEstimator",
    "REGISTRY",
    "create_estimator",
]
