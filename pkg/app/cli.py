"""findep 命令行入口

    findep simulate|weights|diagnose|estimate|mc|bench --config <path> [--out <dir>] [--seed <n>]
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from loguru import logger

from .ccp import write_ccp_table
from .config import KRON_MAX_ENTRIES, RunConfig, load_run_config, validate_config, with_overrides
from .dp import read_panel, simulate_panel, write_panel
from .errors import DimensionError, FindepError, InvalidConfigError
from .experiments import (
    bench,
    fd_estimate,
    monte_carlo,
    solve_model,
    write_bench,
    write_monte_carlo,
)
from .logger_config import attach_run_log, setup_logger
from .markov import (
    TransitionSet,
    diff_transition,
    entry_model,
    read_transition_set,
    write_transition_set,
)
from .utils import (
    generate_config_hash,
    read_matrix_csv,
    resolve_output_dir,
    write_json,
    write_matrix_csv,
)
from .weights import diagnose_finite_dependence, solve_plan

COMMANDS = ("simulate", "weights", "diagnose", "estimate", "mc", "bench")


def _transitions(cfg: RunConfig) -> TransitionSet:
    if cfg.transitions:
        return read_transition_set(cfg.transitions)
    return entry_model(cfg.model, KRON_MAX_ENTRIES).transitions


def cmd_simulate(cfg: RunConfig, out: Path, config_hash: str) -> Dict:
    """模拟面板，同时写出转移矩阵与真实 CCP"""
    model = entry_model(cfg.model, KRON_MAX_ENTRIES)
    solution = solve_model(model)
    est = cfg.estimation
    T = est.T if model.stationary else min(est.T, model.transitions.horizon)
    panel = simulate_panel(solution, model, est.N, T, est.seed)

    write_panel(panel, out, config_hash)
    write_transition_set(model.transitions, out / "transitions")
    write_ccp_table(solution.ccp, out / "ccp.csv")
    return {"panel": str(out), "N": panel.N, "T": panel.T, "X": model.state_count}


def cmd_weights(cfg: RunConfig, out: Path, config_hash: str) -> Dict:
    """求解第 1 期起的权重计划，写出 w̌ 与残差"""
    ts = _transitions(cfg)
    solver = cfg.solver
    plan = solve_plan(ts, solver.rho, solver.method, 1, solver.tol)
    for s, W in enumerate(plan.w_check, 1):
        write_matrix_csv(out / f"wcheck_{s}.csv", W)
    summary = {**plan.summary(), "X": ts.state_count, "config_hash": config_hash}
    write_json(out / "residuals.json", summary)

    if ts.stationary:
        diagnosis = diagnose_finite_dependence(diff_transition(ts), ts.F(0), solver.tol)
        write_json(out / "diagnosis.json", diagnosis.to_dict())
    return summary


def _diagnosis_inputs(cfg: RunConfig):
    if cfg.matrices:
        paths = cfg.matrices
        if "F0" not in paths or not ({"F1", "Ftilde"} & set(paths)):
            raise InvalidConfigError(["matrices: 需要 {F0, F1} 或 {Ftilde, F0}"])
        F0 = read_matrix_csv(paths["F0"])
        if "Ftilde" in paths:
            return read_matrix_csv(paths["Ftilde"]), F0
        return read_matrix_csv(paths["F1"]) - F0, F0

    ts = _transitions(cfg)
    if not ts.stationary:
        raise InvalidConfigError(["diagnose: 只支持平稳转移"])
    return diff_transition(ts), ts.F(0)


def cmd_diagnose(cfg: RunConfig, out: Path, config_hash: str) -> Dict:
    Ftilde, F0 = _diagnosis_inputs(cfg)
    diagnosis = diagnose_finite_dependence(Ftilde, F0, cfg.solver.tol).to_dict()
    write_json(out / "diagnosis.json", diagnosis)
    return diagnosis


def cmd_estimate(cfg: RunConfig, out: Path, config_hash: str) -> Dict:
    """读取面板，按配置的估计器逐个估计"""
    if not cfg.panel:
        raise InvalidConfigError(["panel: estimate 需要面板目录"])
    panel = read_panel(cfg.panel)
    model = entry_model(cfg.model, KRON_MAX_ENTRIES)
    if np.any(panel.x >= model.state_count):
        raise DimensionError(f"面板状态下标超出模型状态数 {model.state_count}")

    solution = solve_model(model)
    reports = [
        fd_estimate(
            panel,
            model,
            name,
            rho=cfg.solver.rho,
            ccp_mode=cfg.estimation.ccp_mode,
            solution=solution,
            tol=cfg.solver.tol,
        ).to_dict()
        for name in cfg.estimation.estimators
    ]
    payload = {
        "panel": str(cfg.panel),
        "truth": panel.truth,
        "estimates": reports,
        "config_hash": config_hash,
    }
    write_json(out / "estimates.json", payload)
    return payload


def cmd_mc(cfg: RunConfig, out: Path, config_hash: str) -> Dict:
    result = monte_carlo(cfg)
    write_monte_carlo(result, out, config_hash)
    return {"report": str(out / "mc_report.json"), "failures": len(result.failures)}


def cmd_bench(cfg: RunConfig, out: Path, config_hash: str) -> Dict:
    result = bench(cfg)
    write_bench(result, out, config_hash)
    return {"report": str(out / "bench.csv"), "slope": result.slope}


HANDLERS: Dict[str, Callable[[RunConfig, Path, str], Dict]] = {
    "simulate": cmd_simulate,
    "weights": cmd_weights,
    "diagnose": cmd_diagnose,
    "estimate": cmd_estimate,
    "mc": cmd_mc,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="findep", description="有限依赖两步估计工具")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON 配置文件")
    parser.add_argument("--out", default=None, help="输出目录，默认 ./out/<command>-<hash>")
    parser.add_argument("--seed", type=int, default=None, help="覆盖 estimation.seed")
    parser.add_argument("--no-log-file", action="store_true", help="只输出到 stderr")
    return parser


def _write_error(error: Exception, out: Optional[Path]) -> Dict:
    payload = {
        "error": type(error).__name__,
        "message": str(error),
        "details": error.details() if isinstance(error, FindepError) else {},
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "error.json", payload)
    print(json.dumps(payload, ensure_ascii=False))
    return payload


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logger(args.command, log_to_file=not args.no_log_file)
    if not validate_config():
        logger.warning("环境变量配置存在问题，继续使用默认值")

    out: Optional[Path] = Path(args.out) if args.out else None
    run_sink: Optional[int] = None
    try:
        cfg = with_overrides(load_run_config(args.config), output=args.out, seed=args.seed)
        payload = {"command": args.command, **cfg.to_dict(), "output": None}
        config_hash = generate_config_hash(payload)
        out = resolve_output_dir(args.command, payload, cfg.output)
        write_json(out / "config.json", cfg.to_dict())
        run_sink = attach_run_log(out)

        logger.info(f"=== findep {args.command} 开始, 输出目录 {out} ===")
        result = HANDLERS[args.command](cfg, out, config_hash)
        summary = {"command": args.command, "output": str(out), **result}
        print(json.dumps(summary, ensure_ascii=False, default=str))
        logger.info(f"✅ findep {args.command} 完成")
        return 0

    except InvalidConfigError as e:
        logger.error(f"❌ 配置错误: {e}")
        _write_error(e, out)
        return 2
    except Exception as e:
        logger.error(f"❌ 执行失败: {e}")
        _write_error(e, out)
        return 1
    finally:
        if run_sink is not None:
            logger.remove(run_sink)


if __name__ == "__main__":
    sys.exit(main())
