"""配置管理模块"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import load_dotenv
from loguru import logger

from .errors import InvalidConfigError

# 加载环境变量
load_dotenv()

# 项目根目录
PROJECT_ROOT = Path(__file__).parent.parent
LOGS_DIR = Path(os.getenv("FINDEP_LOGS_DIR", str(PROJECT_ROOT / "logs")))
OUTPUT_ROOT = Path(os.getenv("FINDEP_OUTPUT_ROOT", "out"))

# 日志配置
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_RETENTION_DAYS = int(os.getenv("LOG_RETENTION_DAYS", "7"))

# 并行与内存上限
FINDEP_THREADS = int(os.getenv("FINDEP_THREADS", str(os.cpu_count() or 1)))
KRON_MAX_ENTRIES = int(float(os.getenv("FINDEP_KRON_MAX_ENTRIES", "2e8")))
VEC_LSQ_MAX_ENTRIES = int(float(os.getenv("FINDEP_VEC_LSQ_MAX_ENTRIES", "5e7")))

# 数值容差
RANK_TOL = float(os.getenv("FINDEP_RANK_TOL", "1e-10"))
SOLVER_TOL = float(os.getenv("FINDEP_SOLVER_TOL", "1e-10"))
MAX_ITER = int(os.getenv("FINDEP_MAX_ITER", "100000"))

# 进入/退出模型的默认参数
THETA_NAMES = ("VP0", "VP1", "VP2", "FC0", "FC1", "EC0", "EC1")
DEFAULT_THETA = (0.5, 1.0, -1.0, 0.5, 1.0, 1.0, 1.0)
NONSTATIONARY_INTERCEPTS = (-0.8, 0.8, 0.0, -0.3)

ESTIMATORS = ("FD", "FD2", "HM", "AM", "FD_BC")
CCP_MODES = ("oracle", "frequency")
WEIGHT_METHODS = ("sequential", "optimal")


@dataclass(frozen=True)
class Ar1Params:
    """AR(1) 过程 x' = γ0 + γ1·x + σ·ε"""

    gamma0: float = 0.0
    gamma1: float = 0.9
    sigma: float = 1.0

    def problems(self, prefix: str) -> List[str]:
        found = []
        if not abs(self.gamma1) < 1:
            found.append(f"{prefix}.gamma1: 需要 |gamma1| < 1，当前 {self.gamma1}")
        if not self.sigma > 0:
            found.append(f"{prefix}.sigma: 需要 sigma > 0，当前 {self.sigma}")
        return found


def _default_z() -> Tuple[Ar1Params, ...]:
    return tuple(Ar1Params() for _ in range(4))


@dataclass(frozen=True)
class EntryModelConfig:
    """进入/退出模型配置，状态为 (y, ω, z1..z4)"""

    K_z: int = 2
    K_o: int = 2
    theta: Tuple[float, ...] = DEFAULT_THETA
    beta: float = 0.95
    omega: Ar1Params = field(default_factory=Ar1Params)
    z: Tuple[Ar1Params, ...] = field(default_factory=_default_z)
    gamma_a: float = 0.0
    # 非平稳模式下每期 ω 截距；None 表示平稳模型
    intercepts: Optional[Tuple[float, ...]] = None

    @property
    def state_count(self) -> int:
        return 2 * self.K_z**4 * self.K_o

    @property
    def nonstationary(self) -> bool:
        return self.intercepts is not None

    @property
    def horizon(self) -> Optional[int]:
        return None if self.intercepts is None else len(self.intercepts)

    def problems(self, prefix: str = "model") -> List[str]:
        found = []
        if self.K_z < 1:
            found.append(f"{prefix}.K_z: 需要 K_z >= 1，当前 {self.K_z}")
        if self.K_o < 1:
            found.append(f"{prefix}.K_o: 需要 K_o >= 1，当前 {self.K_o}")
        if len(self.theta) != len(THETA_NAMES):
            found.append(f"{prefix}.theta: 需要 {len(THETA_NAMES)} 个参数，当前 {len(self.theta)}")
        if not 0 < self.beta < 1:
            found.append(f"{prefix}.beta: 需要 0 < beta < 1，当前 {self.beta}")
        found.extend(self.omega.problems(f"{prefix}.omega"))
        if len(self.z) != 4:
            found.append(f"{prefix}.z: 需要 4 个冲击过程，当前 {len(self.z)}")
        for k, params in enumerate(self.z):
            found.extend(params.problems(f"{prefix}.z[{k}]"))
        if self.intercepts is not None and len(self.intercepts) < 1:
            found.append(f"{prefix}.intercepts: 非平稳截距序列不能为空")
        return found


@dataclass(frozen=True)
class SolverConfig:
    rho: int = 1
    tol: float = RANK_TOL
    method: str = "sequential"

    def problems(self, prefix: str = "solver") -> List[str]:
        found = []
        if self.rho < 1:
            found.append(f"{prefix}.rho: 需要 rho >= 1，当前 {self.rho}")
        if not self.tol > 0:
            found.append(f"{prefix}.tol: 需要 tol > 0，当前 {self.tol}")
        if self.method not in WEIGHT_METHODS:
            found.append(f"{prefix}.method: 可选 {WEIGHT_METHODS}，当前 {self.method!r}")
        return found


@dataclass(frozen=True)
class EstimationConfig:
    estimators: Tuple[str, ...] = ("FD", "FD2", "HM")
    ccp_mode: str = "oracle"
    N: int = 30
    T: int = 40
    reps: int = 50
    seed: int = 0

    def problems(self, prefix: str = "estimation") -> List[str]:
        found = []
        unknown = [name for name in self.estimators if name not in ESTIMATORS]
        if unknown or not self.estimators:
            found.append(f"{prefix}.estimators: 可选 {ESTIMATORS}，当前 {list(self.estimators)}")
        if self.ccp_mode not in CCP_MODES:
            found.append(f"{prefix}.ccp_mode: 可选 {CCP_MODES}，当前 {self.ccp_mode!r}")
        for key in ("N", "T", "reps"):
            if getattr(self, key) < 1:
                found.append(f"{prefix}.{key}: 需要 >= 1，当前 {getattr(self, key)}")
        if self.seed < 0:
            found.append(f"{prefix}.seed: 需要非负整数，当前 {self.seed}")
        return found


@dataclass(frozen=True)
class BenchConfig:
    # 每项为状态数 X 或显式的 [K_z, K_o]
    states: Tuple[Union[int, Tuple[int, int]], ...] = (64, 96, 128, 160)
    gamma_a_values: Tuple[float, ...] = (0.0, 0.5)
    repeats: int = 3
    # 是否额外计算两期最优权重的残差（稠密 SVD）
    optimal_norms: bool = True

    def problems(self, prefix: str = "bench") -> List[str]:
        found = []
        if not self.states:
            found.append(f"{prefix}.states: 至少需要一个状态规模")
        if self.repeats < 1:
            found.append(f"{prefix}.repeats: 需要 >= 1，当前 {self.repeats}")
        return found


@dataclass(frozen=True)
class RunConfig:
    """命令行运行配置"""

    model: EntryModelConfig = field(default_factory=EntryModelConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    output: Optional[str] = None
    transitions: Optional[str] = None
    panel: Optional[str] = None
    matrices: Optional[Dict[str, str]] = None

    def problems(self) -> List[str]:
        return (
            self.model.problems()
            + self.solver.problems()
            + self.estimation.problems()
            + self.bench.problems()
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _tupled(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, data: Any, prefix: str, problems: List[str]):
    """按 dataclass 字段解析一个配置块，未知键与类型错误记入 problems"""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        problems.append(f"{prefix}: 需要 JSON 对象")
        return cls()

    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            problems.append(f"{prefix}.{key}: 未知配置项")

    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        key = f"{prefix}.{f.name}"
        if cls is EntryModelConfig and f.name == "omega":
            kwargs[f.name] = _build(Ar1Params, value, key, problems)
        elif cls is EntryModelConfig and f.name == "z":
            if isinstance(value, dict):
                shock = _build(Ar1Params, value, key, problems)
                kwargs[f.name] = (shock,) * 4
            elif isinstance(value, list):
                kwargs[f.name] = tuple(
                    _build(Ar1Params, v, f"{key}[{k}]", problems) for k, v in enumerate(value)
                )
            else:
                problems.append(f"{key}: 需要对象或对象列表")
        else:
            kwargs[f.name] = _tupled(value)

    try:
        return cls(**kwargs)
    except TypeError as e:
        problems.append(f"{prefix}: {e}")
        return cls()


def _check_types(cfg: RunConfig, problems: List[str]) -> None:
    """数值字段的类型检查，避免字符串混入后续比较"""
    checks = [
        ("model.K_z", cfg.model.K_z, int),
        ("model.K_o", cfg.model.K_o, int),
        ("model.beta", cfg.model.beta, (int, float)),
        ("model.gamma_a", cfg.model.gamma_a, (int, float)),
        ("solver.rho", cfg.solver.rho, int),
        ("solver.tol", cfg.solver.tol, (int, float)),
        ("estimation.N", cfg.estimation.N, int),
        ("estimation.T", cfg.estimation.T, int),
        ("estimation.reps", cfg.estimation.reps, int),
        ("estimation.seed", cfg.estimation.seed, int),
        ("bench.repeats", cfg.bench.repeats, int),
    ]
    if not isinstance(cfg.bench.optimal_norms, bool):
        problems.append(f"bench.optimal_norms: 类型错误，当前 {cfg.bench.optimal_norms!r}")
    for key, value, expected in checks:
        if isinstance(value, bool) or not isinstance(value, expected):
            problems.append(f"{key}: 类型错误，当前 {value!r}")


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    """解析配置字典，一次性报告所有不合法的键"""
    if not isinstance(data, dict):
        raise InvalidConfigError(["<root>: 需要 JSON 对象"])

    problems: List[str] = []
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            problems.append(f"{key}: 未知配置项")

    cfg = RunConfig(
        model=_build(EntryModelConfig, data.get("model"), "model", problems),
        solver=_build(SolverConfig, data.get("solver"), "solver", problems),
        estimation=_build(EstimationConfig, data.get("estimation"), "estimation", problems),
        bench=_build(BenchConfig, data.get("bench"), "bench", problems),
        output=data.get("output"),
        transitions=data.get("transitions"),
        panel=data.get("panel"),
        matrices=data.get("matrices"),
    )

    type_problems: List[str] = []
    _check_types(cfg, type_problems)
    problems.extend(type_problems)
    if not type_problems:
        problems.extend(cfg.problems())
    if problems:
        raise InvalidConfigError(problems)
    return cfg


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """读取 JSON 配置文件"""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise InvalidConfigError([f"{path}: 配置文件不存在"]) from e
    except json.JSONDecodeError as e:
        raise InvalidConfigError([f"{path}: JSON 解析失败 ({e})"]) from e

    cfg = parse_run_config(data)
    logger.info(f"配置加载完成: {path}")
    return cfg


def with_overrides(cfg: RunConfig, output: Optional[str] = None, seed: Optional[int] = None):
    """命令行参数覆盖配置文件中的值"""
    if output is not None:
        cfg = replace(cfg, output=output)
    if seed is not None:
        cfg = replace(cfg, estimation=replace(cfg.estimation, seed=seed))
    return cfg


def validate_config() -> bool:
    """验证环境变量配置"""
    ok = True
    if FINDEP_THREADS < 1:
        logger.warning(f"FINDEP_THREADS={FINDEP_THREADS} 无效，需要 >= 1")
        ok = False
    if KRON_MAX_ENTRIES < 1 or VEC_LSQ_MAX_ENTRIES < 1:
        logger.warning("内存上限配置必须为正数")
        ok = False
    if not 0 < RANK_TOL < 1:
        logger.warning(f"FINDEP_RANK_TOL={RANK_TOL} 超出 (0, 1)")
        ok = False

    logger.info(f"配置加载完成: 输出目录={OUTPUT_ROOT}, 日志目录={LOGS_DIR}, 线程数={FINDEP_THREADS}")
    return ok
