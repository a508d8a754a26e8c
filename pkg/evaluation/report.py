"""
Evaluation reports - JSON report files, Markdown tables and figures
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from jinja2 import Environment, FileSystemLoader, StrictUndefined  # noqa: E402
from pydantic import BaseModel, ConfigDict, Field  # noqa: E402

from ops.errors import DataError  # noqa: E402

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent / "templates"
REPORT_NAME = "report.json"

# Regenerated SVGs stay byte-identical: fixed salt, no timestamps
plt.rcParams["svg.hashsalt"] = "devdiet"
SVG_METADATA = {"Date": None, "Creator": None}


class EvalReport(BaseModel):
    """Every number of one model's benchmark run, plus where it came from"""

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    model_id: str
    config_hash: str = ""
    checkpoint_hash: str = ""
    acc: Optional[float] = None
    mce: Optional[float] = None
    ce_per_type: Dict[str, float] = Field(default_factory=dict)
    shape_bias: Optional[float] = None
    silhouette_acc: Optional[float] = None
    depth_acc: Optional[float] = None
    cliff: Optional[dict] = None
    fim_curve: List[Tuple[int, float]] = Field(default_factory=list)
    depth_curve: List[Tuple[int, float]] = Field(default_factory=list)
    predictions: Dict[str, str] = Field(default_factory=dict)
    figures: Dict[str, str] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)

    @property
    def cliff_answers(self) -> str:
        if not self.cliff:
            return "n/a"
        return "/".join(row["answer"] for row in self.cliff["rows"])

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def save_report(report: EvalReport, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json())
    logger.info(f"[OK] Report written: {path}")
    return path


def load_report(path: Path) -> EvalReport:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Report not found: {path}")
    return EvalReport.model_validate_json(path.read_text())


# ---------------------------------------------------------------- markdown


def _pct(value) -> str:
    return "n/a" if value is None else f"{100.0 * value:.1f}"


def _num(value) -> str:
    return "n/a" if value is None else f"{value:.1f}"


def _mean_se(value) -> str:
    if value is None:
        return "n/a"
    mean, se = value
    return f"{mean:.1f} ± {se:.1f}"


def _environment() -> Environment:
    env = Environment(
        loader=FileSystemLoader(str(TEMPLATES_DIR)),
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )
    env.filters.update({"pct": _pct, "num": _num, "mse": _mean_se})
    return env


def render_markdown(reports: Sequence[EvalReport]) -> str:
    """One summary row per model, then per-model corruption and cliff sections"""
    return _environment().get_template("report.md.j2").render(reports=list(reports))


def render_comparison(panels: Sequence[dict], n_seeds: int, failures: Sequence[dict] = (), title: str = "") -> str:
    """
    Four-panel sweep table.

    Args:
        panels: [{"name", "rows": [{"condition", "n", "acc", "mce",
            "shape_bias", "depth_acc", "status"}]}], metric cells being
            (mean, se) pairs or None
        n_seeds: seeds per condition
        failures: [{"run", "error"}]
    """
    return (
        _environment()
        .get_template("comparison.md.j2")
        .render(panels=list(panels), n_seeds=n_seeds, failures=list(failures), title=title)
    )


# ---------------------------------------------------------------- figures


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".svg":
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    else:
        fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)
    logger.info(f"[OK] Figure saved: {path}")
    return path


def plot_mce_bars(entries: Sequence[Tuple[str, float, float]], path: Path, title: str = "mCE") -> Path:
    """Bar chart of mCE (percent) with standard-error whiskers; 100 marks the baseline"""
    labels = [label for label, _, _ in entries]
    means = [mean for _, mean, _ in entries]
    errors = [se for _, _, se in entries]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(entries) + 1.5), 3.5))
    ax.bar(range(len(entries)), means, yerr=errors, capsize=3, color="#4a7ab5")
    ax.axhline(100.0, color="grey", linestyle="--", linewidth=1)
    ax.set_xticks(range(len(entries)))
    ax.set_xticklabels(labels, rotation=45, ha="right", rotation_mode="anchor")
    ax.set_ylabel("mCE (%)")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_curve(
    points: Sequence[Tuple[int, float]],
    path: Path,
    ylabel: str,
    title: str = "",
    chance: Optional[float] = None,
    phase_boundary: Optional[int] = None,
) -> Path:
    """Metric against pretraining epoch (FIM trace, dAcc)"""
    if not points:
        raise DataError(f"No points to plot for {ylabel}")
    epochs = [e for e, _ in points]
    values = [v for _, v in points]
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(epochs, values, marker="o", markersize=3, color="#b5544a")
    if chance is not None:
        ax.axhline(chance, color="grey", linestyle=":", linewidth=1)
    if phase_boundary is not None:
        ax.axvline(phase_boundary - 0.5, color="grey", linestyle="--", linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def read_fim_curve(metrics_path: Path) -> List[Tuple[int, float]]:
    """(epoch, fim_trace) from a run's metrics.jsonl"""
    metrics_path = Path(metrics_path)
    if not metrics_path.exists():
        raise DataError(f"Metrics file not found: {metrics_path}")
    rows = [json.loads(line) for line in metrics_path.read_text().splitlines() if line.strip()]
    return [(row["epoch"], row["fim_trace"]) for row in rows if row.get("fim_trace") is not None]
