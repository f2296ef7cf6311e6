"""日志配置：stderr 控制台、按天轮转的全局日志，以及每次运行输出目录下的 run.log"""

import sys
from pathlib import Path
from typing import Union

from loguru import logger

from .config import LOG_LEVEL, LOG_RETENTION_DAYS, LOGS_DIR

CONSOLE_FORMAT = (
    "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | "
    "<magenta>{extra[command]}</magenta> | <cyan>{name}</cyan> - <level>{message}</level>"
)
# 蒙特卡洛在线程池里跑，文件日志带线程名
FILE_FORMAT = (
    "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <7} | {extra[command]} | {thread.name} | "
    "{name}:{function}:{line} - {message}"
)


def setup_logger(command: str = "-", level: str = LOG_LEVEL, log_to_file: bool = True) -> None:
    """配置loguru日志，每行带上当前子命令"""
    logger.remove()
    logger.configure(extra={"command": command})

    # stdout 留给命令结果 JSON
    logger.add(sys.stderr, level=level, format=CONSOLE_FORMAT, colorize=True)

    if not log_to_file:
        return

    LOGS_DIR.mkdir(parents=True, exist_ok=True)
    logger.add(
        LOGS_DIR / "findep.log",
        level=level,
        format=FILE_FORMAT,
        rotation="00:00",
        retention=f"{LOG_RETENTION_DAYS} days",
        compression="zip",
        encoding="utf-8",
    )
    logger.add(
        LOGS_DIR / "errors.log",
        level="ERROR",
        format=FILE_FORMAT,
        rotation="10 MB",
        retention=f"{LOG_RETENTION_DAYS} days",
        encoding="utf-8",
        backtrace=True,
        diagnose=False,
    )
    logger.debug(f"日志目录 {LOGS_DIR}，保留{LOG_RETENTION_DAYS}天")


def attach_run_log(directory: Union[str, Path]) -> int:
    """本次运行的 DEBUG 日志写到输出目录；返回 sink id，运行结束后 logger.remove"""
    return logger.add(
        Path(directory) / "run.log",
        level="DEBUG",
        format=FILE_FORMAT,
        mode="w",
        encoding="utf-8",
    )
