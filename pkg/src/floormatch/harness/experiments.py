"""Experiment drivers: fusion sweep, fine-tuning sweep and cross-problem evaluation.

Every cell is trained and evaluated independently from the shared base
configuration, so cells can run in worker processes; results are collected
in grid order and are identical to a serial run.
"""
from __future__ import annotations

import csv
import dataclasses
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ..errors import ConfigError
from ..matchers import FUSION_FUNCS, FUSION_LAYERS, FusionSpec, MatchProblem
from ..synthgen import Dataset
from .config import TrainConfig
from .evaluate import EvalReport, evaluate
from .train import get_dataset, save_model, train

FINETUNE_VARIANTS = ("frozen_encoders", "room_agnostic", "room_aware_fc_only", "room_aware_full")
CROSS_ROWS = ("pair", "2-way", "4-way", "8-way")
CROSS_COLS = (2, 4, 8)
NA = "N/A"


@dataclass
class CellSpec:
    """One trained model and the problems it is evaluated on (one column each)."""

    row: str
    config: TrainConfig
    columns: List[Tuple[str, Optional[MatchProblem]]]  # None marks an N/A cell


@dataclass
class Cell:
    row: str
    col: str
    report: Optional[EvalReport]  # None for N/A cells
    loss_curve: List[float] = field(default_factory=list)


@dataclass
class ExperimentTable:
    name: str
    seed: int
    rows: List[str]
    cols: List[str]
    cells: List[Cell]

    def cell(self, row: str, col: str) -> Cell:
        for c in self.cells:
            if c.row == row and c.col == col:
                return c
        raise KeyError((row, col))

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} experiment={self.name}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "accuracy_mean", "accuracy_std", "chance", "n_cases",
                    "group_1", "group_2", "group_3", "group_4", "group_5"])
        for c in self.cells:
            if c.report is None:
                w.writerow([c.row, c.col, NA, NA, NA, NA, NA, NA, NA, NA, NA])
            else:
                r = c.report
                w.writerow([c.row, c.col, _num(r.accuracy_mean), _num(r.accuracy_std), _num(r.chance), r.n_cases,
                            *(_num(g) for g in r.group_accuracies)])
        return buf.getvalue()

    def loss_curves_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} experiment={self.name}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "epoch", "mean_loss"])
        seen = set()
        for c in self.cells:
            if c.row in seen or not c.loss_curve:
                continue
            seen.add(c.row)
            for e, loss in enumerate(c.loss_curve, start=1):
                w.writerow([c.row, e, _num(loss)])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned text table of ``mean ± std`` per cell."""
        header = [self.name] + list(self.cols)
        lines = [header]
        for r in self.rows:
            line = [r]
            for col in self.cols:
                rep = self.cell(r, col).report
                line.append(NA if rep is None else f"{rep.accuracy_mean:.1f} ± {rep.accuracy_std:.1f}")
            lines.append(line)
        widths = [max(len(l[i]) for l in lines) for i in range(len(header))]
        out = [f"# seed={self.seed}"]
        for l in lines:
            out.append("  ".join(s.ljust(wd) for s, wd in zip(l, widths)).rstrip())
        return "\n".join(out) + "\n"

    def write(self, out_dir) -> Dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"metrics": out / "metrics.csv", "table": out / "table.txt", "loss_curves": out / "loss_curves.csv"}
        paths["metrics"].write_text(self.metrics_csv())
        paths["table"].write_text(self.to_text())
        paths["loss_curves"].write_text(self.loss_curves_csv())
        return paths


def _num(x: float) -> str:
    return format(float(x), ".6f")


# ---------------------------------------------------------------------------
# cell execution

_WORKER_DATASET: Optional[Dataset] = None


def _init_worker(dataset: Optional[Dataset]) -> None:
    global _WORKER_DATASET
    _WORKER_DATASET = dataset


def _run_cell(spec: CellSpec, dataset: Optional[Dataset], checkpoint: Optional[Path]) -> List[Cell]:
    ds = dataset if dataset is not None else _WORKER_DATASET
    if ds is None:
        ds = get_dataset(spec.config.data, spec.config.seed)
    result = train(spec.config, ds)
    if checkpoint is not None:
        save_model(checkpoint, result.model, spec.config, result.loss_curve)
    cells = []
    for col, problem in spec.columns:
        report = None if problem is None else evaluate(result.model, ds.test, problem, seed=spec.config.seed)
        cells.append(Cell(spec.row, col, report, list(result.loss_curve)))
    return cells


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in text)


def run_cells(name: str, specs: Sequence[CellSpec], rows: List[str], cols: List[str], seed: int,
              dataset: Optional[Dataset] = None, jobs: int = 1, out_dir=None) -> ExperimentTable:
    """Train/evaluate every spec (in parallel with ``jobs`` > 1) and collect the table in spec order."""
    for s in specs:
        s.config.validate()
    ckpts = [None] * len(specs)
    if out_dir is not None:
        (Path(out_dir) / "checkpoints").mkdir(parents=True, exist_ok=True)
        ckpts = [Path(out_dir) / "checkpoints" / f"{_slug(s.row)}.npz" for s in specs]
    if jobs <= 1 or len(specs) <= 1:
        groups = [_run_cell(s, dataset, c) for s, c in zip(specs, ckpts)]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(dataset,)) as pool:
            futures = [pool.submit(_run_cell, s, None, c) for s, c in zip(specs, ckpts)]
            groups = [f.result() for f in futures]
    table = ExperimentTable(name, seed, rows, cols, [c for g in groups for c in g])
    if out_dir is not None:
        table.write(out_dir)
    return table


# ---------------------------------------------------------------------------
# the three drivers


def _require_three_photos(base: TrainConfig, what: str) -> None:
    if base.problem.photos_per_apartment != 3:
        raise ConfigError([("problem.photos_per_apartment", f"{what} needs 3 photos per apartment")])


def _set_problem(base: TrainConfig, **changes) -> MatchProblem:
    return dataclasses.replace(base.problem, kind="set", k=1, room_type=None, **changes)


def fusion_specs(base: TrainConfig) -> List[CellSpec]:
    _require_three_photos(base, "the fusion sweep")
    specs = []
    for layer in FUSION_LAYERS:
        for func in FUSION_FUNCS:
            problem = _set_problem(base, fusion=FusionSpec(layer, func))
            specs.append(CellSpec(f"{layer}/{func}", base.replace(problem=problem), [("accuracy", problem)]))
    return specs


def fusion_sweep(base: TrainConfig, dataset: Optional[Dataset] = None, jobs: int = 1, out_dir=None) -> ExperimentTable:
    """Ten cells: every fusion layer with averaging and concatenation."""
    specs = fusion_specs(base)
    return run_cells("fusion", specs, [s.row for s in specs], ["accuracy"], base.seed, dataset, jobs, out_dir)


def finetune_specs(base: TrainConfig) -> List[CellSpec]:
    _require_three_photos(base, "the fine-tuning sweep")
    aware = _set_problem(base, room_mode="aware")
    agnostic = _set_problem(base, room_mode="agnostic")
    configs = {
        "frozen_encoders": base.replace(problem=aware, freeze="encoders", bank_mode=None),
        "room_agnostic": base.replace(problem=agnostic, freeze="none", bank_mode=None),
        "room_aware_fc_only": base.replace(problem=aware, freeze="none", bank_mode="room_aware_fc"),
        "room_aware_full": base.replace(problem=aware, freeze="none", bank_mode=None),
    }
    return [CellSpec(v, configs[v], [("accuracy", configs[v].problem)]) for v in FINETUNE_VARIANTS]


def finetune_sweep(base: TrainConfig, dataset: Optional[Dataset] = None, jobs: int = 1, out_dir=None) -> ExperimentTable:
    """Four cells: frozen encoders, room-agnostic, room-aware fc only, room-aware full."""
    specs = finetune_specs(base)
    return run_cells("finetune", specs, list(FINETUNE_VARIANTS), ["accuracy"], base.seed, dataset, jobs, out_dir)


def cross_specs(base: TrainConfig) -> List[CellSpec]:
    room = base.problem.room_type or "bathroom"
    single = dict(photos_per_apartment=1, room_mode="aware", room_type=room, fusion=FusionSpec())
    specs = []
    for row in CROSS_ROWS:
        if row == "pair":
            problem, trained_k = MatchProblem(kind="pair", k=1, **single), None
        else:
            trained_k = int(row.split("-")[0])
            problem = MatchProblem(kind="kway", k=trained_k, **single)
        cols = []
        for k in CROSS_COLS:
            usable = trained_k is None or trained_k >= k
            cols.append((f"{k}-way", MatchProblem(kind="kway", k=k, **single) if usable else None))
        specs.append(CellSpec(row, base.replace(problem=problem), cols))
    return specs


def cross_eval(base: TrainConfig, dataset: Optional[Dataset] = None, jobs: int = 1, out_dir=None) -> ExperimentTable:
    """Models trained on pair/2/4/8-way problems, evaluated on 2/4/8-way problems (12 cells, 3 N/A)."""
    specs = cross_specs(base)
    return run_cells("cross", specs, list(CROSS_ROWS), [f"{k}-way" for k in CROSS_COLS], base.seed,
                     dataset, jobs, out_dir)
