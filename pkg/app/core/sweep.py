"""
Hyperparameter sweeps over learning rate, switch penalty, temperature and epsilon.

Each (cell, seed) pair is an independent training run with its own output file, so
cells can be fanned out to a process pool without shared state.
"""
import itertools
import logging
import os
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.label_rules import RuleSet
from app.core.schema import TrainConfig
from app.core.trainer import train
from app.core.utils.files import atomic_write_text
from app.data.dataset import Dataset
from app.metrics.report import read_table, write_stats, write_table

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["cell", "seed", "lr", "alpha", "eta", "epsilon", "stats_path"]
SUMMARY_COLUMNS = ["cell", "lr", "alpha", "eta", "epsilon", "seeds", "mean_final_return", "ci95", "best"]
Z_95 = 1.959963984540054


@dataclass(frozen=True)
class SweepCell:
    lr: float
    alpha: float
    eta: float
    epsilon: float

    @property
    def name(self) -> str:
        return f"lr-{self.lr:g}_alpha-{self.alpha:g}_eta-{self.eta:g}_eps-{self.epsilon:g}"

    def apply(self, cfg: TrainConfig, seed: int) -> TrainConfig:
        return cfg.model_copy(
            update={"lr": self.lr, "alpha": self.alpha, "eta": self.eta, "epsilon": self.epsilon, "seed": seed}
        )


def sweep_grid(cfg: TrainConfig) -> List[SweepCell]:
    """Cartesian product of the configured grids, in grid order."""
    return [
        SweepCell(lr=lr, alpha=alpha, eta=eta, epsilon=epsilon)
        for lr, alpha, eta, epsilon in itertools.product(cfg.lr_grid, cfg.alpha_grid, cfg.eta_grid, cfg.epsilon_grid)
    ]


def sweep_seeds(cfg: TrainConfig) -> List[int]:
    """Seeds of every cell, offset from the base training seed."""
    return [cfg.seed + k for k in range(cfg.sweep_seeds)]


@dataclass(frozen=True)
class SweepTask:
    cell: SweepCell
    seed: int
    cfg: TrainConfig
    dataset: Dataset
    rules: RuleSet
    stats_path: str
    metadata: Dict[str, str]


def _run_task(task: SweepTask) -> Tuple[str, int, float]:
    cfg = task.cell.apply(task.cfg, task.seed)
    result = train(task.dataset, cfg, task.rules)
    write_stats(result.stats, task.stats_path, {**task.metadata, "cell": task.cell.name, "seed": str(task.seed)})
    return task.cell.name, task.seed, result.stats[-1].mean_return


def run_sweep(
    dataset: Dataset,
    cfg: TrainConfig,
    rules: RuleSet,
    out_dir: str,
    workers: int = 1,
    metadata: Optional[Dict[str, str]] = None,
) -> str:
    """
    Train every (cell, seed) pair and write the sweep manifest.

    Args:
        dataset: Training dataset shared by all runs
        cfg: Base configuration holding the grids and the number of seeds
        rules: Rule set defining the reward
        out_dir: Sweep directory; stats go to cells/<cell>/seed-<n>/stats.tsv
        workers: Number of worker processes (1 runs serially)
        metadata: Metadata block stamped into every file

    Returns:
        str: Path of the manifest file
    """
    metadata = dict(metadata or {})
    cells = sweep_grid(cfg)
    seeds = sweep_seeds(cfg)
    tasks = [
        SweepTask(
            cell=cell, seed=seed, cfg=cfg, dataset=dataset, rules=rules,
            stats_path=os.path.join(out_dir, "cells", cell.name, f"seed-{seed}", "stats.tsv"),
            metadata=metadata,
        )
        for cell in cells
        for seed in seeds
    ]
    logger.info("Sweeping %d cells x %d seeds with %d worker(s)", len(cells), len(seeds), workers)

    if workers > 1:
        with Pool(workers) as pool:
            finished = pool.map(_run_task, tasks)
    else:
        finished = [_run_task(task) for task in tasks]
    for name, seed, final in finished:
        logger.debug("Cell %s seed %d finished with mean return %.3f", name, seed, final)

    rows = [
        {
            "cell": task.cell.name, "seed": task.seed, "lr": task.cell.lr, "alpha": task.cell.alpha,
            "eta": task.cell.eta, "epsilon": task.cell.epsilon,
            "stats_path": os.path.relpath(task.stats_path, out_dir),
        }
        for task in tasks
    ]
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_table(manifest_path, MANIFEST_COLUMNS, rows, metadata)
    return manifest_path


@dataclass(frozen=True)
class CellSummary:
    cell: SweepCell
    seeds: int
    mean_final_return: float
    ci95: float


def summarize_sweep(manifest_path: str) -> List[CellSummary]:
    """
    Mean final-epoch return per cell with a 95% normal-approximation half-width.

    The half-width is z * s / sqrt(n) with the sample standard deviation s; it is 0
    for a single seed.
    """
    manifest = read_table(manifest_path)
    root = os.path.dirname(manifest_path)
    finals: Dict[str, List[float]] = {}
    cells: Dict[str, SweepCell] = {}
    for row in manifest.rows:
        name = str(row["cell"])
        cells[name] = SweepCell(
            lr=float(row["lr"]), alpha=float(row["alpha"]), eta=float(row["eta"]), epsilon=float(row["epsilon"])
        )
        stats = read_table(os.path.join(root, str(row["stats_path"])))
        finals.setdefault(name, []).append(float(stats.rows[-1]["mean_return"]))

    summaries = []
    for name, values in finals.items():
        array = np.array(values, dtype=np.float64)
        ci = Z_95 * float(np.std(array, ddof=1)) / np.sqrt(array.size) if array.size > 1 else 0.0
        summaries.append(CellSummary(cell=cells[name], seeds=array.size, mean_final_return=float(array.mean()), ci95=ci))
    return summaries


def write_sweep_summary(summaries: Sequence[CellSummary], path: str, metadata: Optional[Dict[str, str]] = None) -> None:
    """Write the per-cell summary; the cell with the highest mean is flagged `best`."""
    if not summaries:
        atomic_write_text(path, "")
        return
    best = max(range(len(summaries)), key=lambda i: summaries[i].mean_final_return)
    rows = [
        {
            "cell": s.cell.name, "lr": s.cell.lr, "alpha": s.cell.alpha, "eta": s.cell.eta, "epsilon": s.cell.epsilon,
            "seeds": s.seeds, "mean_final_return": s.mean_final_return, "ci95": s.ci95, "best": int(i == best),
        }
        for i, s in enumerate(summaries)
    ]
    write_table(path, SUMMARY_COLUMNS, rows, metadata)
    logger.info(
        "Best cell %s: mean final return %.3f +/- %.3f",
        summaries[best].cell.name, summaries[best].mean_final_return, summaries[best].ci95,
    )
