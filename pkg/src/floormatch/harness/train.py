"""Sampling of training batches and the training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import Tensor, cross_entropy, hinge, no_grad
from ..autodiff.checkpoint import load_checkpoint, save_checkpoint
from ..autodiff.optim import make_optimizer
from ..errors import NumericError
from ..matchers import KWayModel, MatchModel, MatchProblem, ModelSpec, PairModel, build_model, to_input
from ..synthgen import Dataset, build_dataset, load_dataset, make_kway_sample, make_pair_sample
from .config import INIT_STREAM, TRAIN_STREAM, DataConfig, TrainConfig, stream_rng

log = logging.getLogger(__name__)

_DATASETS: Dict[str, Dataset] = {}


def get_dataset(data: DataConfig, seed: int) -> Dataset:
    """Load or generate the dataset described by ``data`` (memoised per process)."""
    if data.manifest:
        key = f"manifest:{Path(data.manifest).resolve()}"
    else:
        key = json.dumps({"seed": data.seed if data.seed is not None else seed, "n_train": data.n_train,
                          "n_test": data.n_test, "gen": data.generator.to_dict()}, sort_keys=True)
    if key not in _DATASETS:
        if data.manifest:
            _DATASETS[key] = load_dataset(data.manifest)
        else:
            gseed = data.seed if data.seed is not None else seed
            _DATASETS[key] = build_dataset(gseed, data.generator, data.n_train, data.n_test)
    return _DATASETS[key]


@dataclass
class Case:
    """One sampled problem instance, addressed by dataset positions."""

    floor_index: int
    photo_indices: List[int]  # one entry for pair/set, k entries for k-way
    rooms: Tuple[str, ...]
    label: int  # +1/-1 for pair/set, true index for k-way


def sample_case(ds: Dataset, problem: MatchProblem, rng: np.random.Generator, anchor: int,
                kind: Optional[str] = None, k: Optional[int] = None, positive: Optional[bool] = None) -> Case:
    """Draw one case; ``kind``/``k`` override the problem (evaluation of other settings).

    ``positive`` forces the label of a pair/set case.
    """
    kind = kind or problem.kind
    n = problem.photos_per_apartment
    if kind == "kway":
        s = make_kway_sample(ds, rng, k or problem.k, problem.room_type, n, anchor=anchor)
        case = Case(s.floor_index, list(s.candidate_indices), tuple(s.room_types), s.true_index)
    else:
        s = make_pair_sample(ds, rng, problem.room_type, n, anchor=anchor, positive=positive)
        case = Case(s.floor_index, [s.photo_index], tuple(s.room_types), s.label)
    if problem.room_mode == "agnostic" and len(case.rooms) > 1:
        # the photo order carries no information for room-agnostic models
        case.rooms = tuple(case.rooms[i] for i in rng.permutation(len(case.rooms)))
    return case


def assemble(ds: Dataset, cases: Sequence[Case], kind: str) -> Tuple[np.ndarray, np.ndarray, List[tuple], np.ndarray]:
    """Stack cases into model inputs.

    Photos come out as (B, 3, h, w) for pair, (B, n, 3, h, w) for set and
    (B, k, n, 3, h, w) for k-way problems.
    """
    floors = to_input(ds.floorplans[[c.floor_index for c in cases]])
    photos = np.stack([
        np.stack([np.stack([ds.photos[r][j] for r in c.rooms]) for j in c.photo_indices]) for c in cases
    ])  # (B, k, n, 3, h, w)
    photos = to_input(photos)
    if kind == "pair":
        photos = photos[:, 0, 0]
    elif kind == "set":
        photos = photos[:, 0]
    rooms = [c.rooms for c in cases]
    labels = np.array([c.label for c in cases], dtype=np.int64)
    return floors, photos, rooms, labels


def forward(model: MatchModel, floors, photos, rooms: List[tuple]) -> Tensor:
    """Scores (B,) for pair/set models, logits (B, k) for k-way models."""
    if isinstance(model, KWayModel):
        return model.logits(floors, photos, rooms)
    if isinstance(model, PairModel):
        return model.score(floors, photos, [r[0] for r in rooms])
    return model.score(floors, photos, rooms)


def loss_fn(model: MatchModel, out: Tensor, labels: np.ndarray, margin: float) -> Tensor:
    if isinstance(model, KWayModel):
        return cross_entropy(out, labels)
    return hinge(out, labels, margin)


@dataclass
class TrainResult:
    model: MatchModel
    config: TrainConfig
    loss_curve: List[float] = field(default_factory=list)
    checkpoint: Optional[Path] = None


def _forced_label(config: TrainConfig, position: int) -> Optional[bool]:
    """Balanced batches alternate positive/negative along the shuffled epoch order."""
    if not config.balanced_batches or config.problem.kind == "kway":
        return None
    return position % 2 == 0


def _freeze(model: MatchModel, mode: str) -> Dict[str, Tensor]:
    params = model.named_parameters()
    if mode == "encoders":
        for p in model.encoder_parameters().values():
            p.requires_grad = False
        params = model.head_parameters()
    return params


def train(config: TrainConfig, dataset: Optional[Dataset] = None, checkpoint: Optional[Path] = None,
          progress: bool = False, on_epoch: Optional[Callable[[int, MatchModel, float], None]] = None) -> TrainResult:
    """Train a model for ``config``; deterministic given the config and data.

    One epoch visits every training apartment once as the floorplan anchor,
    in an order drawn from the epoch's own stream.
    """
    config.validate()
    ds = dataset if dataset is not None else get_dataset(config.data, config.seed)
    train_ds = ds.train
    spec = config.model_spec()
    model = build_model(spec, stream_rng(config.seed, INIT_STREAM))
    params = _freeze(model, config.freeze)
    opt = make_optimizer(config.optimizer, params, config.learning_rate, config.betas, config.momentum)
    kind = config.problem.kind
    n = len(train_ds)
    curve: List[float] = []
    for epoch in range(config.epochs):
        model.train()
        order = stream_rng(config.seed, TRAIN_STREAM, epoch).permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            anchors = order[start:start + config.batch_size]
            cases = [sample_case(train_ds, config.problem, stream_rng(config.seed, TRAIN_STREAM, epoch, start + i),
                                 int(a), positive=_forced_label(config, start + i)) for i, a in enumerate(anchors)]
            floors, photos, rooms, labels = assemble(train_ds, cases, kind)
            try:
                opt.zero_grad()
                loss = loss_fn(model, forward(model, floors, photos, rooms), labels, config.margin)
                if not np.isfinite(loss.item()):
                    raise NumericError(f"loss is {loss.item()}")
                loss.backward()
                opt.step()
            except NumericError as exc:
                raise NumericError(f"non-finite values in epoch {epoch} batch {b} "
                                   f"(batch seed: seed={config.seed} stream=({TRAIN_STREAM}, {epoch}, "
                                   f"{start}..{start + len(anchors) - 1})): {exc}") from exc
            total += loss.item() * len(anchors)
            count += len(anchors)
        curve.append(total / count)
        model.eval()
        if progress:
            log.info("epoch %d/%d loss %.5f", epoch + 1, config.epochs, curve[-1])
        if on_epoch is not None:
            on_epoch(epoch, model, curve[-1])
    result = TrainResult(model, config, curve)
    if checkpoint is not None:
        result.checkpoint = save_model(checkpoint, model, config, curve)
    return result


def save_model(path, model: MatchModel, config: Optional[TrainConfig] = None,
               loss_curve: Optional[Sequence[float]] = None) -> Path:
    meta = {"model_spec": model.spec.to_dict(),
            "train_config": config.to_dict() if config is not None else None,
            "loss_curve": list(loss_curve) if loss_curve is not None else None}
    return save_checkpoint(path, model.state_dict(), meta)


def load_model(path) -> Tuple[MatchModel, dict]:
    """Rebuild the architecture from checkpoint metadata and load the weights."""
    params, meta = load_checkpoint(path)
    spec = ModelSpec.from_dict(meta["model_spec"])
    model = build_model(spec, np.random.default_rng(0))
    model.load_state_dict(params)
    return model, meta


def predict_scores(model: MatchModel, floors, photos, rooms, batch: int = 64) -> np.ndarray:
    """Forward pass without graph construction, in chunks (running statistics)."""
    outs = []
    model.eval()
    with no_grad():
        for s in range(0, len(floors), batch):
            outs.append(forward(model, floors[s:s + batch], photos[s:s + batch], rooms[s:s + batch]).data)
    return np.concatenate(outs) if outs else np.zeros(0, np.float32)
