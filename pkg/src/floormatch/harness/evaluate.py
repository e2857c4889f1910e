"""Evaluation protocol: accuracy over five contiguous test groups."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..autodiff import no_grad
from ..errors import ConfigError
from ..matchers import KWayModel, MatchModel, MatchProblem, argmax_lowest, duplicate_candidates
from ..synthgen import Dataset
from .config import TEST_STREAM, stream_rng
from .train import assemble, forward, predict_scores, sample_case

N_GROUPS = 5


def chance_level(kind: str, k: int = 1) -> float:
    return 100.0 / k if kind == "kway" else 50.0


@dataclass
class EvalReport:
    accuracy_mean: float
    accuracy_std: float
    group_accuracies: List[float]
    chance: float
    problem: dict = field(default_factory=dict)
    n_cases: int = 0

    @classmethod
    def from_correct(cls, correct: Sequence[bool], problem: MatchProblem) -> "EvalReport":
        """Group ``i`` is the ``i``-th contiguous fifth of the cases, in test order."""
        correct = np.asarray(correct, dtype=bool)
        if len(correct) < N_GROUPS:
            raise ValueError(f"need at least {N_GROUPS} test cases, got {len(correct)}")
        groups = [100.0 * float(g.mean()) for g in np.array_split(correct, N_GROUPS)]
        mean, std = summarize(groups)
        return cls(mean, std, groups, chance_level(problem.kind, problem.k), problem.to_dict(), len(correct))

    def consistent(self) -> bool:
        return (self.accuracy_mean, self.accuracy_std) == summarize(self.group_accuracies)

    def to_row(self) -> dict:
        row = {"accuracy_mean": self.accuracy_mean, "accuracy_std": self.accuracy_std, "chance": self.chance,
               "n_cases": self.n_cases}
        row.update({f"group_{i + 1}": g for i, g in enumerate(self.group_accuracies)})
        return row

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(groups: Sequence[float]):
    """(mean, population std) of group accuracies, the single definition used everywhere."""
    g = np.asarray(groups, dtype=np.float64)
    return float(g.mean()), float(g.std())


def make_test_cases(ds: Dataset, problem: MatchProblem, seed: int, kind: Optional[str] = None,
               k: Optional[int] = None) -> list:
    """One case per test apartment (as anchor), each from its own test stream."""
    return [sample_case(ds, problem, stream_rng(seed, TEST_STREAM, i), i, kind=kind, k=k) for i in range(len(ds))]


def _check_compatible(model: MatchModel, problem: MatchProblem) -> None:
    mp = model.problem
    errs = []
    if mp.photos_per_apartment != problem.photos_per_apartment:
        errs.append(("problem.photos_per_apartment", "differs from the model's"))
    if isinstance(model, KWayModel):
        if problem.kind != "kway":
            errs.append(("problem.kind", "a k-way model can only solve k-way problems"))
        elif model.k % problem.k:
            errs.append(("problem.k", f"model trained at k={model.k} cannot solve k={problem.k}"))
    if errs:
        raise ConfigError(errs)


def predict_cases(model: MatchModel, ds: Dataset, cases: list, problem: MatchProblem, batch: int = 32) -> np.ndarray:
    """Correctness flag per case."""
    _check_compatible(model, problem)
    if problem.kind != "kway":
        floors, photos, rooms, labels = assemble(ds, cases, "set" if problem.photos_per_apartment > 1 else "pair")
        if isinstance(model, MatchModel) and model.problem.kind == "set" and problem.photos_per_apartment == 1:
            photos = photos[:, None]
        scores = predict_scores(model, floors, photos, rooms)
        return np.where(scores > 0, 1, -1) == labels
    correct = []
    model.eval()
    for s in range(0, len(cases), batch):
        chunk = cases[s:s + batch]
        floors, photos, rooms, labels = assemble(ds, chunk, "kway")  # photos (B, k, n, 3, h, w)
        b, k = photos.shape[:2]
        with no_grad():
            if isinstance(model, KWayModel):
                dup = np.stack([duplicate_candidates(p, model.k) for p in photos]) if model.k != k else photos
                logits = forward(model, floors, dup, rooms).data.astype(np.float64)
                probs = np.exp(logits - logits.max(axis=1, keepdims=True))
                probs /= probs.sum(axis=1, keepdims=True)
                per = probs.reshape(b, k, model.k // k).sum(axis=2)
            else:
                fl = np.repeat(floors, k, axis=0)
                ph = photos.reshape(b * k, *photos.shape[2:])
                if model.problem.kind == "pair":
                    ph = ph[:, 0]
                rr = [r for r in rooms for _ in range(k)]
                per = forward(model, fl, ph, rr).data.reshape(b, k)
        correct.extend(argmax_lowest(row) == lab for row, lab in zip(per, labels))
    return np.asarray(correct, dtype=bool)


def evaluate(model: MatchModel, testset: Dataset, problem: Optional[MatchProblem] = None,
             seed: int = 0) -> EvalReport:
    """Accuracy of ``model`` on ``problem`` (default: its own) over ``testset``."""
    problem = problem or model.problem
    cases = make_test_cases(testset, problem, seed)
    return EvalReport.from_correct(predict_cases(model, testset, cases, problem), problem)
