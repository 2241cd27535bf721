"""
Tab-separated report files.

Every table starts with a metadata block of `# key: value` lines, followed by a
header row and data rows in a fixed column order. Floats are written in shortest
round-trip form, so `read_table` recovers every number exactly.
"""
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from app import __version__
from app.core.mdp_env import VARIANT_CATEGORIES
from app.core.trainer import EpochStats, Evaluation
from app.core.utils.files import atomic_write_text
from app.metrics.metrics import ClassificationReport, ari, classification_report, nmi, reassigned_accuracy

logger = logging.getLogger(__name__)

Cell = Union[int, float, str]

STATS_COLUMNS = [
    "epoch", "mean_return", "accuracy", "violation_rate",
    "policy_loss", "baseline_loss", "penalty_term", "lr",
]
PER_CLASS_COLUMNS = ["source", "label", "name", "precision", "recall", "f1", "support"]
CATEGORY_COLUMNS = ["category", "reward", "count"]
SUMMARY_COLUMNS = ["metric", "predictor", "corrected"]


def _format(value: Cell) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str) -> Cell:
    for cast in (int, float):
        try:
            return cast(text)  # type: ignore[operator]
        except ValueError:
            continue
    return text


def format_table(
    columns: Sequence[str], rows: Sequence[Mapping[str, Cell]], metadata: Optional[Mapping[str, Any]] = None
) -> str:
    lines = [f"# {key}: {value}" for key, value in sorted((metadata or {}).items())]
    lines.append("\t".join(columns))
    for row in rows:
        lines.append("\t".join(_format(row[column]) for column in columns))
    return "\n".join(lines) + "\n"


def write_table(
    path: str,
    columns: Sequence[str],
    rows: Sequence[Mapping[str, Cell]],
    metadata: Optional[Mapping[str, Any]] = None,
) -> None:
    """Write a table atomically."""
    atomic_write_text(path, format_table(columns, rows, metadata))


@dataclass
class Table:
    metadata: Dict[str, str]
    columns: List[str]
    rows: List[Dict[str, Cell]]

    def column(self, name: str) -> List[Cell]:
        return [row[name] for row in self.rows]


def read_table(path: str) -> Table:
    """
    Parse a table written by `write_table`.

    Raises:
        ValueError: If a row has the wrong number of cells or the header is missing
    """
    metadata: Dict[str, str] = {}
    columns: Optional[List[str]] = None
    rows: List[Dict[str, Cell]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if line.startswith("# ") and columns is None:
                key, _, value = line[2:].partition(": ")
                metadata[key] = value
                continue
            if not line:
                continue
            cells = line.split("\t")
            if columns is None:
                columns = cells
                continue
            if len(cells) != len(columns):
                raise ValueError(f"{path} line {line_no}: expected {len(columns)} cells, got {len(cells)}")
            rows.append({column: _parse(cell) for column, cell in zip(columns, cells)})
    if columns is None:
        raise ValueError(f"{path}: missing header row")
    return Table(metadata=metadata, columns=columns, rows=rows)


def report_metadata(config_hash: str, seed: int, **extra: Any) -> Dict[str, Any]:
    """Metadata block stamped into every report file."""
    metadata: Dict[str, Any] = {
        "config_hash": config_hash,
        "seed": seed,
        "code_version": __version__,
        "nmi_normalization": "geometric",
    }
    metadata.update(extra)
    return metadata


def write_stats(stats: Sequence[EpochStats], path: str, metadata: Optional[Mapping[str, Any]] = None) -> None:
    """One row per epoch in the fixed stats column order."""
    write_table(path, STATS_COLUMNS, [s.as_row() for s in stats], metadata)


def _per_class_rows(source: str, report: ClassificationReport) -> List[Dict[str, Cell]]:
    return [
        {
            "source": source, "label": c.label, "name": c.name,
            "precision": c.precision, "recall": c.recall, "f1": c.f1, "support": c.support,
        }
        for c in report.per_class
    ]


def write_report(
    evaluation: Evaluation,
    names: Sequence[str],
    variant: str,
    out_dir: str,
    metadata: Mapping[str, Any],
) -> Dict[str, str]:
    """
    Emit per-class, category and summary tables plus a plain-text summary.

    Args:
        evaluation: Greedy evaluation of the rule layer on a labelled dataset
        names: Label names in index order
        variant: Reward variant the categories belong to
        out_dir: Directory receiving the report files
        metadata: Metadata block (config hash, seed, code version, ...)

    Returns:
        Dict[str, str]: Report kind -> written path
    """
    K = len(names)
    predictor = classification_report(evaluation.true, evaluation.pred, K, names)
    corrected = classification_report(evaluation.true, evaluation.assigned, K, names)
    paths = {
        "per_class": os.path.join(out_dir, "per_class.tsv"),
        "categories": os.path.join(out_dir, "categories.tsv"),
        "summary": os.path.join(out_dir, "summary.tsv"),
        "text": os.path.join(out_dir, "summary.txt"),
    }

    write_table(
        paths["per_class"], PER_CLASS_COLUMNS,
        _per_class_rows("predictor", predictor) + _per_class_rows("corrected", corrected), metadata,
    )

    category_rows: List[Dict[str, Cell]] = [
        {"category": category.value, "reward": category.reward, "count": evaluation.categories[category]}
        for category in VARIANT_CATEGORIES[variant]
    ]
    write_table(paths["categories"], CATEGORY_COLUMNS, category_rows, metadata)

    pred_v, pred_pairs = evaluation.pred_violations
    corr_v, corr_pairs = evaluation.corrected_violations
    summary: List[Dict[str, Cell]] = [
        {"metric": "accuracy", "predictor": predictor.accuracy, "corrected": corrected.accuracy},
        {"metric": "kappa", "predictor": predictor.kappa, "corrected": corrected.kappa},
        {"metric": "macro_f1", "predictor": predictor.macro_f1, "corrected": corrected.macro_f1},
        {
            "metric": "nmi",
            "predictor": nmi(evaluation.true, evaluation.pred),
            "corrected": nmi(evaluation.true, evaluation.assigned),
        },
        {
            "metric": "ari",
            "predictor": ari(evaluation.true, evaluation.pred),
            "corrected": ari(evaluation.true, evaluation.assigned),
        },
        {
            "metric": "violation_rate",
            "predictor": evaluation.pred_violation_rate,
            "corrected": evaluation.corrected_violation_rate,
        },
        {"metric": "violations", "predictor": pred_v, "corrected": corr_v},
        {"metric": "pairs", "predictor": pred_pairs, "corrected": corr_pairs},
        {"metric": "mean_return", "predictor": "", "corrected": evaluation.mean_return},
        {"metric": "maintained_correct", "predictor": "", "corrected": evaluation.maintained_correct},
        {"metric": "reassigned_correct", "predictor": "", "corrected": evaluation.reassigned_correct},
        {
            "metric": "reassigned_accuracy",
            "predictor": "",
            "corrected": reassigned_accuracy(evaluation.true, evaluation.pred, evaluation.assigned),
        },
    ]
    write_table(paths["summary"], SUMMARY_COLUMNS, summary, metadata)

    text = [f"{key}: {value}" for key, value in sorted(metadata.items())]
    text.append("")
    text.append(f"{'metric':<20}{'predictor':>14}{'corrected':>14}")
    for row in summary:
        cells = [f"{row['predictor']:>14.4f}" if isinstance(row["predictor"], float) else f"{row['predictor']!s:>14}",
                 f"{row['corrected']:>14.4f}" if isinstance(row["corrected"], float) else f"{row['corrected']!s:>14}"]
        text.append(f"{row['metric']:<20}{cells[0]}{cells[1]}")
    text.append("")
    text.append("reward categories:")
    for row in category_rows:
        text.append(f"  {row['category']:<36}{row['reward']:>4}{row['count']:>10}")
    atomic_write_text(paths["text"], "\n".join(text) + "\n")

    logger.info(
        "Report: accuracy %.4f -> %.4f, violation rate %.4f -> %.4f",
        predictor.accuracy, corrected.accuracy, evaluation.pred_violation_rate, evaluation.corrected_violation_rate,
    )
    return paths
