"""Markdown 实验报告生成器"""

import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from jinja2 import Environment, FileSystemLoader
from loguru import logger

from .config import PROJECT_ROOT


def _fmt(value: Any, pattern: str) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "—"
    return pattern % value


class ReportGenerator:
    """用 Jinja2 模板渲染 mc / bench 报告"""

    def __init__(self, templates_dir: Optional[Union[str, Path]] = None):
        self.templates_dir = Path(templates_dir or PROJECT_ROOT / "app" / "templates")
        self.env = Environment(
            loader=FileSystemLoader(str(self.templates_dir)),
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
        )
        self.env.globals["fmt"] = _fmt

    def _render(self, template_name: str, **context) -> str:
        template = self.env.get_template(template_name)
        return template.render(
            generated_at=datetime.now().strftime("%Y-%m-%d %H:%M:%S"), **context
        )

    def render_monte_carlo(
        self,
        rows: List[Dict[str, Any]],
        meta: Dict[str, Any],
        failures: List[Dict[str, Any]],
        config_hash: str,
    ) -> str:
        return self._render(
            "mc_report.md.j2", rows=rows, meta=meta, failures=failures, config_hash=config_hash
        )

    def render_bench(
        self,
        rows: List[Dict[str, Any]],
        repeats: int,
        config_hash: str,
        slope: Optional[Dict[str, float]] = None,
    ) -> str:
        return self._render(
            "bench_report.md.j2", rows=rows, repeats=repeats, config_hash=config_hash, slope=slope
        )

    def write(self, content: str, file_path: Union[str, Path]) -> Path:
        file_path = Path(file_path)
        file_path.write_text(content, encoding="utf-8")
        logger.info(f"✅ 报告生成完成: {file_path}")
        return file_path
