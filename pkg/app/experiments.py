"""实验编排：单次两步估计、蒙特卡洛与计时基准"""

import asyncio
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .ccp import CcpTable
from .config import FINDEP_THREADS, KRON_MAX_ENTRIES, RANK_TOL, RunConfig
from .dp import Panel, Solution, simulate_panel, solve_finite_horizon, solve_stationary
from .errors import InvalidConfigError
from .estimate import EstimationReport, assemble_H, assemble_h, estimate_ccp
from .estimators import BaseEstimator, HMEstimator, create_estimator
from .markov import Model, diff_transition, entry_model, resolve_grid
from .report_generator import ReportGenerator
from .utils import stopwatch, write_frame_csv, write_json
from .weights import kron_solve, solve_two_period_optimal

MC_COLUMNS = [
    "estimator",
    "param",
    "true",
    "mean",
    "rmse",
    "time_total",
    "time_weights_or_inv",
    "residual1",
    "residual2",
    "reps",
    "failures",
]
BENCH_COLUMNS = [
    "X",
    "K_z",
    "K_o",
    "gamma_a",
    "time_solve",
    "time_hm_inverse",
    "time_weights",
    "time_H",
    "time_h",
    "time_diff",
    "residual1",
    "residual2",
    "residual2_optimal",
]
DISPERSION = "rmse = sqrt(mean((theta_hat - theta_true)^2)) over successful replications"


def solve_model(model: Model) -> Solution:
    """平稳模型做值函数迭代，非平稳模型做逆向归纳（终端价值为零）"""
    if model.stationary:
        return solve_stationary(model)
    return solve_finite_horizon(model)


def first_stage(panel: Panel, model: Model, ccp_mode: str, solution: Optional[Solution]) -> CcpTable:
    T = None if model.stationary else panel.T
    return estimate_ccp(panel, model.state_count, T, ccp_mode, solution)


def fd_estimate(
    panel: Panel,
    model: Model,
    estimator: Union[str, BaseEstimator] = "FD",
    rho: int = 1,
    ccp_mode: str = "oracle",
    solution: Optional[Solution] = None,
    tol: float = RANK_TOL,
) -> EstimationReport:
    """一阶段 CCP + 二阶段似然最大化"""
    if isinstance(estimator, str):
        estimator = create_estimator(estimator, model, rho=rho, tol=tol)
    ccp = first_stage(panel, model, ccp_mode, solution)
    return estimator.estimate(panel, ccp, solution)


@dataclass
class MonteCarloResult:
    summary: pd.DataFrame
    replications: pd.DataFrame
    failures: List[Dict[str, Any]] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        rows = self.summary.astype(object).where(self.summary.notna(), None)
        return {
            "meta": self.meta,
            "rows": rows.to_dict(orient="records"),
            "failures": self.failures,
        }


def _failure(replication: int, estimator: str, error: Exception) -> Dict[str, Any]:
    return {
        "replication": replication,
        "estimator": estimator,
        "error": type(error).__name__,
        "message": str(error),
    }


def _run_replication(
    replication: int,
    model: Model,
    solution: Solution,
    estimators: Dict[str, BaseEstimator],
    cfg: RunConfig,
    T: int,
) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    est = cfg.estimation
    rows, failures = [], []
    try:
        panel = simulate_panel(solution, model, est.N, T, est.seed, replication=replication)
        ccp = first_stage(panel, model, est.ccp_mode, solution)
    except Exception as e:
        logger.warning(f"第 {replication} 次重复数据生成失败: {e}")
        return rows, [_failure(replication, "*", e)]

    for name, estimator in estimators.items():
        try:
            report = estimator.estimate(panel, ccp, solution)
        except Exception as e:
            logger.warning(f"第 {replication} 次重复 {name} 估计失败: {e}")
            failures.append(_failure(replication, name, e))
            continue
        if not report.converged:
            failures.append({
                "replication": replication,
                "estimator": name,
                "error": "NotConverged",
                "message": f"梯度范数 {report.grad_norm:.3e}",
            })
            continue

        residuals = list(report.residuals) + [math.nan, math.nan]
        for param, value in zip(report.names, report.theta):
            rows.append({
                "replication": replication,
                "estimator": name,
                "param": param,
                "estimate": float(value),
                "time_total": report.timings["total"],
                "time_weights_or_inv": report.timings.get("weights_or_inv", 0.0),
                "time_assembly": report.timings.get("assembly", 0.0),
                "time_optimize": report.timings.get("optimize", 0.0),
                "residual1": residuals[0],
                "residual2": residuals[1],
            })
    return rows, failures


async def _run_replications(
    model: Model,
    solution: Solution,
    estimators: Dict[str, BaseEstimator],
    cfg: RunConfig,
    T: int,
):
    semaphore = asyncio.Semaphore(max(1, FINDEP_THREADS))
    done = 0

    async def worker(replication: int):
        nonlocal done
        async with semaphore:
            result = await asyncio.to_thread(
                _run_replication, replication, model, solution, estimators, cfg, T
            )
        done += 1
        logger.info(f"蒙特卡洛进度: {done}/{cfg.estimation.reps}")
        return result

    return await asyncio.gather(*(worker(r) for r in range(cfg.estimation.reps)))


def _summarize(
    frame: pd.DataFrame, model: Model, names: List[str], failures: List[Dict[str, Any]]
) -> pd.DataFrame:
    params = list(model.utility.names)
    truth = dict(zip(params, model.theta.tolist()))
    index = pd.MultiIndex.from_product([names, params], names=["estimator", "param"])

    if frame.empty:
        grouped = pd.DataFrame(index=index)
    else:
        frame = frame.assign(sq_error=(frame["estimate"] - frame["param"].map(truth)) ** 2)
        grouped = frame.groupby(["estimator", "param"]).agg(
            mean=("estimate", "mean"),
            mse=("sq_error", "mean"),
            time_total=("time_total", "mean"),
            time_weights_or_inv=("time_weights_or_inv", "mean"),
            residual1=("residual1", "first"),
            residual2=("residual2", "first"),
            reps=("estimate", "size"),
        )
    grouped = grouped.reindex(index)

    failed = pd.Series([f["estimator"] for f in failures], dtype=object)
    summary = grouped.reset_index()
    summary["true"] = summary["param"].map(truth)
    summary["rmse"] = np.sqrt(summary["mse"]) if "mse" in summary else math.nan
    summary["reps"] = summary.get("reps", pd.Series(0, index=summary.index)).fillna(0).astype(int)
    summary["failures"] = [
        int(((failed == name) | (failed == "*")).sum()) for name in summary["estimator"]
    ]
    return summary.reindex(columns=MC_COLUMNS)


def _estimators_for(cfg: RunConfig, model: Model) -> Dict[str, BaseEstimator]:
    names = list(cfg.estimation.estimators)
    if not model.stationary and "HM" in names:
        raise InvalidConfigError(["estimation.estimators: HM 只适用于平稳模型"])
    return {
        name: create_estimator(name, model, rho=cfg.solver.rho, tol=cfg.solver.tol)
        for name in names
    }


def monte_carlo(cfg: RunConfig) -> MonteCarloResult:
    """按 (seed, replication) 独立生成面板并估计；单次失败只记录不中断"""
    model = entry_model(cfg.model, KRON_MAX_ENTRIES)
    estimators = _estimators_for(cfg, model)
    est = cfg.estimation
    T = est.T if model.stationary else min(est.T, model.transitions.horizon)

    logger.info(
        f"🚀 蒙特卡洛开始: X={model.state_count}, 估计器={list(estimators)}, "
        f"N={est.N}, T={T}, 重复={est.reps}"
    )
    solution = solve_model(model)
    # 权重只依赖转移矩阵，在进入线程池前一次性求好
    for estimator in estimators.values():
        estimator.prepare(T)

    results = asyncio.run(_run_replications(model, solution, estimators, cfg, T))
    rows = [row for part, _ in results for row in part]
    failures = [item for _, part in results for item in part]

    replications = pd.DataFrame(rows)
    summary = _summarize(replications, model, list(estimators), failures)
    meta = {
        "X": model.state_count,
        "K_z": cfg.model.K_z,
        "K_o": cfg.model.K_o,
        "gamma_a": cfg.model.gamma_a,
        "beta": cfg.model.beta,
        "nonstationary": not model.stationary,
        "horizon": model.transitions.horizon,
        "N": est.N,
        "T": T,
        "reps": est.reps,
        "seed": est.seed,
        "ccp_mode": est.ccp_mode,
        "rho": cfg.solver.rho,
        "estimators": list(estimators),
        "dispersion": DISPERSION,
    }
    logger.info(f"✅ 蒙特卡洛完成: 成功记录 {len(rows)} 条, 失败 {len(failures)} 次")
    return MonteCarloResult(summary=summary, replications=replications, failures=failures, meta=meta)


def write_monte_carlo(
    result: MonteCarloResult, directory: Union[str, Path], config_hash: str
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_json(directory / "mc_report.json", {**result.to_dict(), "config_hash": config_hash})
    write_frame_csv(directory / "mc_report.csv", result.summary)
    write_frame_csv(directory / "replications.csv", result.replications)

    generator = ReportGenerator()
    rows = result.to_dict()["rows"]
    content = generator.render_monte_carlo(rows, result.meta, result.failures, config_hash)
    generator.write(content, directory / "report.md")
    return directory


@dataclass
class BenchResult:
    rows: pd.DataFrame
    repeats: int
    slope: Optional[Dict[str, float]] = None

    def to_dict(self) -> Dict[str, Any]:
        rows = self.rows.astype(object).where(self.rows.notna(), None)
        return {
            "repeats": self.repeats,
            "slope": self.slope,
            "rows": rows.to_dict(orient="records"),
        }


def _bench_once(model: Model, optimal_norms: bool, tol: float) -> Dict[str, Any]:
    timings: Dict[str, float] = {}
    ts = model.transitions

    with stopwatch(timings, "time_diff"):
        Ftilde = diff_transition(ts)
    with stopwatch(timings, "time_solve"):
        solution = solve_stationary(model)

    inversion: Dict[str, float] = {}
    HMEstimator(model, tol=tol).value_differences(solution.ccp, timings=inversion)
    timings["time_hm_inverse"] = inversion["weights_or_inv"]

    with stopwatch(timings, "time_weights"):
        plan = kron_solve(model.factors, 2, tol)
    with stopwatch(timings, "time_H"):
        assemble_H(plan, model.utility, model.beta, 2)
    with stopwatch(timings, "time_h"):
        assemble_h(plan, solution.ccp, model.beta, 2)

    record: Dict[str, Any] = dict(timings)
    record["residual1"], record["residual2"] = plan.residuals
    record["residual2_optimal"] = None
    if optimal_norms:
        record["residual2_optimal"] = solve_two_period_optimal(Ftilde, ts.F(0), tol).residuals[1]
    return record


def _loglog_slope(frame: pd.DataFrame, column: str) -> float:
    return float(np.polyfit(np.log(frame["X"]), np.log(frame[column]), 1)[0])


def bench(cfg: RunConfig) -> BenchResult:
    """逐个状态规模计时：值函数迭代、HM 反演、分解路径权重与 H/h 组装"""
    rows = []
    for grid in cfg.bench.states:
        K_z, K_o = resolve_grid(grid)
        for gamma_a in cfg.bench.gamma_a_values:
            model_cfg = replace(cfg.model, K_z=K_z, K_o=K_o, gamma_a=gamma_a, intercepts=None)
            model = entry_model(model_cfg, KRON_MAX_ENTRIES)
            samples = [
                _bench_once(model, cfg.bench.optimal_norms, cfg.solver.tol)
                for _ in range(cfg.bench.repeats)
            ]
            row = {"X": model.state_count, "K_z": K_z, "K_o": K_o, "gamma_a": gamma_a}
            for key in BENCH_COLUMNS[4:10]:
                row[key] = float(np.median([sample[key] for sample in samples]))
            for key in ("residual1", "residual2", "residual2_optimal"):
                row[key] = samples[-1][key]
            rows.append(row)
            logger.info(
                f"⏱️ X={row['X']}, γ_a={gamma_a}: 权重 {row['time_weights']:.4f}s, "
                f"HM 反演 {row['time_hm_inverse']:.4f}s, ‖F̃⁽²⁾‖={row['residual2']:.3e}"
            )

    frame = pd.DataFrame(rows, columns=BENCH_COLUMNS)
    slope = None
    base = frame[frame["gamma_a"] == cfg.bench.gamma_a_values[0]]
    if base["X"].nunique() >= 2:
        slope = {
            "weights": _loglog_slope(base, "time_weights"),
            "hm": _loglog_slope(base, "time_hm_inverse"),
        }
    return BenchResult(rows=frame, repeats=cfg.bench.repeats, slope=slope)


def write_bench(result: BenchResult, directory: Union[str, Path], config_hash: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_frame_csv(directory / "bench.csv", result.rows)
    write_json(directory / "bench.json", {**result.to_dict(), "config_hash": config_hash})

    generator = ReportGenerator()
    content = generator.render_bench(
        result.to_dict()["rows"], result.repeats, config_hash, result.slope
    )
    generator.write(content, directory / "report.md")
    return directory
