"""
Benchmark metrics - corruption error tables, mCE, shape bias, silhouette,
depth-order accuracy and the visual-cliff table
"""
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from evaluation.probe import (
    LabeledImages,
    LinearProbe,
    ProbeConfig,
    accuracy_from_rows,
    fit_probe,
    predict,
    top1_accuracy,
    write_predictions,
)
from imaging.corruptions import CorruptedDatasetManifest, load_corrupted_image
from ops.errors import DataError, IncompleteGridError, UndefinedMetricError

logger = logging.getLogger(__name__)

SHAPE_BIAS_POLICIES = ("per_model", "union")
ANSWERS = {1: "yes", 0: "no"}


@dataclass
class ErrorTable:
    """Top-1 error per corruption type and severity"""

    grid: Dict[str, Dict[int, float]]
    dataset_id: str = ""
    model_id: str = ""

    def __post_init__(self):
        self.grid = {c: {int(s): float(e) for s, e in row.items()} for c, row in self.grid.items()}
        for c, row in self.grid.items():
            for s, e in row.items():
                if not 0.0 <= e <= 1.0:
                    raise ValueError(f"Error rate for {c}/{s} must be in [0, 1], got {e}")

    @property
    def types(self) -> List[str]:
        return list(self.grid)

    def severities(self, corruption: str) -> List[int]:
        return sorted(self.grid[corruption])

    def aggregate(self, corruption: str) -> float:
        """Summed error over severities for one type"""
        return float(sum(self.grid[corruption][s] for s in self.severities(corruption)))

    def require(self, types: Iterable[str], severities: Iterable[int]):
        for c in types:
            for s in severities:
                if s not in self.grid.get(c, {}):
                    raise IncompleteGridError(f"Error table '{self.model_id}' is missing cell {c}/severity {s}")

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "model_id": self.model_id,
            "grid": {c: {str(s): e for s, e in sorted(row.items())} for c, row in self.grid.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ErrorTable":
        return cls(doc["grid"], doc.get("dataset_id", ""), doc.get("model_id", ""))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: Path) -> "ErrorTable":
        path = Path(path)
        if not path.exists():
            raise DataError(f"Error table not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


# ---------------------------------------------------------------- corruption


def error_table_from_rows(rows: Sequence[dict], dataset_id: str = "", model_id: str = "") -> ErrorTable:
    """Recount a corruption prediction file into an ErrorTable (integer counts first)"""
    wrong: Dict[Tuple[str, int], int] = defaultdict(int)
    total: Dict[Tuple[str, int], int] = defaultdict(int)
    for row in rows:
        cell = (row["type"], int(row["severity"]))
        total[cell] += 1
        wrong[cell] += int(row["argmax"] != row["label"])
    grid: Dict[str, Dict[int, float]] = defaultdict(dict)
    for (c, s), n in total.items():
        grid[c][s] = wrong[(c, s)] / n
    return ErrorTable(dict(grid), dataset_id, model_id)


def corruption_errors(
    probe: LinearProbe,
    encoder: nn.Module,
    manifest: CorruptedDatasetManifest,
    types: Optional[Sequence[str]] = None,
    severities: Optional[Sequence[int]] = None,
    predictions_path: Optional[Path] = None,
    model_id: str = "",
) -> ErrorTable:
    """
    Top-1 error of probe(encoder(x)) on every (type, severity) cell.

    Raises:
        IncompleteGridError: the manifest lacks a requested cell
    """
    types = list(types or manifest.types)
    severities = list(severities or manifest.severities)
    cells = manifest.cells()
    for c in types:
        for s in severities:
            if (c, s) not in cells:
                raise IncompleteGridError(f"Corrupted set {manifest.root} has no images for {c}/severity {s}")

    by_cell: Dict[Tuple[str, int], List[dict]] = defaultdict(list)
    for row in manifest.rows:
        if row["type"] in types and row["severity"] in severities:
            by_cell[(row["type"], row["severity"])].append(row)

    all_rows = []
    for c in types:
        for s in severities:
            rows = by_cell[(c, s)]
            data = LabeledImages(
                ids=[r["image_id"] for r in rows],
                images=torch.stack([load_corrupted_image(manifest, r) for r in rows]),
                labels=[r["label"] for r in rows],
                extra=[{"type": c, "severity": s} for _ in rows],
            )
            all_rows.extend(predict(probe, encoder, data))
    if predictions_path is not None:
        write_predictions(all_rows, predictions_path)
    table = error_table_from_rows(all_rows, manifest.source, model_id)
    logger.info(f"[OK] Corruption errors: {len(types)} types x {len(severities)} severities, {len(all_rows)} images")
    return table


def mce(model_table: ErrorTable, baseline_table: ErrorTable) -> Tuple[float, Dict[str, float]]:
    """
    Mean corruption error in percent, normalized type by type.

    CE_c = sum_s E_model[c][s] / sum_s E_baseline[c][s]; mCE is the mean of
    CE_c over types, times 100.

    Raises:
        IncompleteGridError: the tables cover different cells
        UndefinedMetricError: a baseline aggregate is zero
    """
    if not model_table.types:
        raise IncompleteGridError("Model error table is empty")
    for c in model_table.types:
        if c not in baseline_table.grid:
            raise IncompleteGridError(f"Baseline table has no row for '{c}'")
        if model_table.severities(c) != baseline_table.severities(c):
            raise IncompleteGridError(
                f"Severity mismatch for '{c}': model {model_table.severities(c)} vs baseline {baseline_table.severities(c)}"
            )
    per_type = {}
    for c in model_table.types:
        denominator = baseline_table.aggregate(c)
        if denominator <= 0.0:
            raise UndefinedMetricError(f"Baseline error for '{c}' sums to zero; CE is undefined")
        per_type[c] = model_table.aggregate(c) / denominator
    return 100.0 * float(np.mean(list(per_type.values()))), per_type


# ---------------------------------------------------------------- shape bias


def _consistent(predictions, shape_labels, texture_labels) -> np.ndarray:
    p = np.asarray(predictions)
    return (p == np.asarray(shape_labels)) | (p == np.asarray(texture_labels))


def shape_bias(
    predictions: Sequence[int],
    shape_labels: Sequence[int],
    texture_labels: Sequence[int],
    policy: str = "per_model",
    group: Optional[Sequence[Sequence[int]]] = None,
) -> float:
    """
    Fraction of shape-consistent predictions among cue-consistent ones.

    per_model counts images where this model chose the shape or the
    texture class. union counts images where any model of `group` did
    (the model's own predictions are always part of the group).

    Raises:
        UndefinedMetricError: the denominator set is empty
    """
    if policy not in SHAPE_BIAS_POLICIES:
        raise ValueError(f"Unknown shape-bias policy '{policy}'; expected one of {SHAPE_BIAS_POLICIES}")
    shape = np.asarray(shape_labels)
    texture = np.asarray(texture_labels)
    preds = np.asarray(predictions)
    if not (len(preds) == len(shape) == len(texture)):
        raise ValueError("predictions, shape_labels and texture_labels differ in length")
    if np.any(shape == texture):
        raise ValueError("Cue-conflict images need different shape and texture labels")

    mask = _consistent(preds, shape, texture)
    if policy == "union":
        for other in group or ():
            mask |= _consistent(other, shape, texture)
    n = int(mask.sum())
    if n == 0:
        raise UndefinedMetricError("No prediction matches either cue; shape bias is undefined")
    return int((preds[mask] == shape[mask]).sum()) / n


def shape_bias_from_rows(rows: Sequence[dict], policy: str = "per_model", group: Optional[Sequence[Sequence[dict]]] = None):
    order = [row["image_id"] for row in rows]
    others = []
    for model_rows in group or ():
        by_id = {row["image_id"]: row["argmax"] for row in model_rows}
        others.append([by_id[i] for i in order])
    return shape_bias(
        [row["argmax"] for row in rows],
        [row["shape_label"] for row in rows],
        [row["texture_label"] for row in rows],
        policy,
        others,
    )


def silhouette_accuracy(rows: Sequence[dict]) -> float:
    """Top-1 accuracy on shape-only silhouettes"""
    return accuracy_from_rows(rows)


# ---------------------------------------------------------------- depth


def depth_accuracy(
    probe: LinearProbe, encoder: nn.Module, depth_data: LabeledImages, predictions_path: Optional[Path] = None
) -> float:
    """Binary depth-order accuracy; 0.5 is chance on a balanced set"""
    if set(depth_data.labels.tolist()) - {0, 1}:
        raise ValueError("Depth-order labels must be 0 or 1")
    return top1_accuracy(probe, encoder, depth_data, predictions_path)


def depth_accuracy_curve(
    checkpoints: Iterable[Tuple[int, nn.Module]],
    train_data: LabeledImages,
    test_data: LabeledImages,
    seed: int = 0,
    config: Optional[ProbeConfig] = None,
    predictions_dir: Optional[Path] = None,
) -> List[Tuple[int, float]]:
    """dAcc against pretraining epoch: one probe per checkpoint"""
    curve = []
    for epoch, encoder in sorted(checkpoints, key=lambda item: item[0]):
        probe = fit_probe(encoder, train_data, 2, seed, config)
        path = Path(predictions_dir) / f"depth_epoch{epoch:03d}.jsonl" if predictions_dir else None
        curve.append((epoch, depth_accuracy(probe, encoder, test_data, path)))
    epochs = [e for e, _ in curve]
    if len(set(epochs)) != len(epochs):
        raise ValueError(f"Duplicate checkpoint epochs: {epochs}")
    return curve


# ---------------------------------------------------------------- visual cliff


@dataclass
class CliffTable:
    rows: List[dict] = field(default_factory=list)

    @property
    def all_correct(self) -> bool:
        return bool(self.rows) and all(row["correct"] for row in self.rows)

    @property
    def answers(self) -> Tuple[str, ...]:
        return tuple(row["answer"] for row in self.rows)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "all_correct": self.all_correct}

    def format_row(self, model: str) -> str:
        marks = " | ".join(f"{row['answer']} ({'ok' if row['correct'] else 'wrong'})" for row in self.rows)
        return f"| {model} | {marks} |"


def visual_cliff_table(
    probe: LinearProbe,
    encoder: nn.Module,
    cliff_views: Sequence[Tuple[torch.Tensor, int]],
    predictions_path: Optional[Path] = None,
) -> CliffTable:
    """
    "Is the green arrow closer than the red ball?" answered per view.

    Args:
        cliff_views: (image, label) pairs from gen_cliff_views
    """
    data = LabeledImages.from_pairs(cliff_views, prefix="cliff")
    rows = predict(probe, encoder, data)
    if predictions_path is not None:
        write_predictions(rows, predictions_path)
    table = CliffTable(
        [
            {
                "view": i + 1,
                "answer": ANSWERS[row["argmax"]],
                "truth": ANSWERS[row["label"]],
                "correct": row["argmax"] == row["label"],
            }
            for i, row in enumerate(rows)
        ]
    )
    logger.info(f"Visual cliff answers: {table.answers} (all correct: {table.all_correct})")
    return table


def mean_and_se(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error over seeds (SE is 0 for a single value)"""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise UndefinedMetricError("Mean over zero runs is undefined")
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), se
