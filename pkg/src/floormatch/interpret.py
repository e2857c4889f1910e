"""Occlusion-style interpretation and the applications built on it.

* :func:`rf_map` — slide a noise window over the floorplan and record how much
  the match score drops at every window position.
* :func:`object_sensitivity` — scores with one object shown/hidden in each modality.
* :func:`simplify_localize` — greedily blank the floorplan segments that matter least.
* :func:`place_photos` / :func:`retrieve` — placement at the heatmap maximum and
  ranking of a photo corpus by pair score.

All operations run the model in evaluation mode without building graphs and
never modify its parameters.
"""
from __future__ import annotations

import csv
import io
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import DimensionError
from .harness.config import NOISE_STREAM, stream_rng
from .matchers import KWayModel, MatchModel, PairModel, argmax_lowest, pair_score, to_input
from .synthgen import Apartment, toggle_object
from .synthgen.generator import BACKGROUND

Image = np.ndarray  # uint8 raster, (H, W, 3) or (3, H, W)


@dataclass(frozen=True)
class RfConfig:
    window: int = 11
    stride: int = 1
    samples_per_window: int = 5

    def validate(self, side: Optional[int] = None) -> "RfConfig":
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be a positive odd integer, got {self.window}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.samples_per_window < 1:
            raise ValueError(f"samples_per_window must be >= 1, got {self.samples_per_window}")
        if side is not None and self.window > side:
            raise DimensionError(f"window {self.window} is larger than the {side}-pixel floorplan")
        return self

    def grid_extent(self, side: int) -> int:
        return (side - self.window) // self.stride + 1


@dataclass
class Heatmap:
    """Score drop per window position; ``grid[i, j]`` covers rows ``i*stride ..`` and cols ``j*stride ..``."""

    grid: np.ndarray  # float64 (G, G)
    baseline: float
    config: RfConfig
    seed: int = 0

    def center(self, i: int, j: int) -> Tuple[int, int]:
        """Floorplan pixel (row, col) at the centre of window position (i, j)."""
        half = self.config.window // 2
        return i * self.config.stride + half, j * self.config.stride + half

    def argmax(self) -> Tuple[int, int]:
        """Grid position of the maximum, lowest row-major index on ties."""
        flat = argmax_lowest(self.grid.ravel())
        return divmod(flat, self.grid.shape[1])

    def argmax_pixel(self) -> Tuple[int, int]:
        return self.center(*self.argmax())

    def to_csv(self) -> str:
        buf = io.StringIO()
        c = self.config
        buf.write(f"# seed={self.seed} window={c.window} stride={c.stride} "
                  f"samples_per_window={c.samples_per_window} baseline={self.baseline:.8f}\n")
        w = csv.writer(buf, lineterminator="\n")
        for row in self.grid:
            w.writerow([format(float(v), ".8f") for v in row])
        return buf.getvalue()

    def save_png(self, path, floorplan: Optional[Image] = None) -> Path:
        """Render with the diverging ``RdBu_r`` colormap centred at zero (red: corruption hurts the match)."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        lim = float(np.max(np.abs(self.grid))) or 1.0
        panels = 2 if floorplan is not None else 1
        fig, axes = plt.subplots(1, panels, figsize=(3.2 * panels, 3.2), squeeze=False)
        if floorplan is not None:
            axes[0, 0].imshow(_hwc(floorplan))
            axes[0, 0].set_title("floorplan")
        ax = axes[0, panels - 1]
        im = ax.imshow(self.grid, cmap="RdBu_r", vmin=-lim, vmax=lim)
        ax.set_title(f"score drop (baseline {self.baseline:.3f})")
        fig.colorbar(im, ax=ax, fraction=0.046)
        for a in axes.ravel():
            a.set_xticks([])
            a.set_yticks([])
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        return path


# ---------------------------------------------------------------------------
# scoring plumbing


def _chw(img: Image) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3:
        raise DimensionError(f"expected a single 3-channel image, got shape {img.shape}")
    if img.shape[0] != 3 and img.shape[-1] == 3:
        img = img.transpose(2, 0, 1)
    if img.shape[0] != 3:
        raise DimensionError(f"expected 3 channels, got shape {img.shape}")
    return img


def _hwc(img: Image) -> np.ndarray:
    return _chw(img).transpose(1, 2, 0)


@contextmanager
def _frozen(model: MatchModel):
    """Evaluation mode without graph construction; the previous mode is restored afterwards."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            yield
    finally:
        model.train(was_training)


class _Scorer:
    """Scores a batch of floorplan inputs against one fixed photo (or photo set)."""

    def __init__(self, model: MatchModel, photos, rooms, batch: int = 64):
        if isinstance(model, KWayModel):
            raise TypeError("interpretation needs a pair or set model, not a k-way model")
        self.model, self.batch = model, batch
        if isinstance(model, PairModel):
            room = rooms if isinstance(rooms, str) else rooms[0]
            p = to_input(_chw(photos))[None]
            self.photo_feat = model.photo.encode(Tensor(p), [room]).data
        else:
            photo_list = [photos] if np.ndim(photos) == 3 else list(photos)
            self.photo_set = to_input(np.stack([_chw(p) for p in photo_list]))[None]
            self.rooms = (rooms,) if isinstance(rooms, str) else tuple(rooms)

    def __call__(self, floors: np.ndarray) -> np.ndarray:
        """floors: float inputs (B, 3, H, W) -> scores (B,) float64."""
        out = []
        for s in range(0, len(floors), self.batch):
            chunk = floors[s:s + self.batch]
            if isinstance(self.model, PairModel):
                f = self.model.floorplan.encode(Tensor(chunk))
                p = Tensor(np.repeat(self.photo_feat, len(chunk), axis=0))
                out.append(pair_score(f, p, self.model.head).data)
            else:
                sets = np.repeat(self.photo_set, len(chunk), axis=0)
                out.append(self.model.score(chunk, sets, [self.rooms] * len(chunk)).data)
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)


def _check_floor(model: MatchModel, floor: np.ndarray) -> None:
    want = tuple(model.spec.floorplan.input_size)
    if floor.shape[1:] != want:
        raise DimensionError(f"floorplan is {floor.shape[1:]}, model expects {want}")


# ---------------------------------------------------------------------------
# receptive-field maps


def window_noise(seed: int, i: int, j: int, sample: int, window: int) -> np.ndarray:
    """N(0, 1) fill for window position (i, j); depends only on (seed, position, sample)."""
    return stream_rng(seed, NOISE_STREAM, i, j, sample).standard_normal((3, window, window)).astype(np.float32)


def rf_map(model: MatchModel, floorplan: Image, photos, rooms, config: RfConfig = RfConfig(),
           seed: int = 0) -> Heatmap:
    """Score drop when each window of the floorplan input is replaced by noise.

    ``photos``/``rooms``: one photo and its room type for pair models, or the
    photo set and its room labels for set models.
    """
    floor = to_input(_chw(floorplan))
    _check_floor(model, floor)
    config.validate(min(floor.shape[1:]))
    g_rows = (floor.shape[1] - config.window) // config.stride + 1
    g_cols = (floor.shape[2] - config.window) // config.stride + 1
    w, n = config.window, config.samples_per_window
    with _frozen(model):
        scorer = _Scorer(model, photos, rooms)
        baseline = float(scorer(floor[None])[0])
        grid = np.zeros((g_rows, g_cols), np.float64)
        positions = [(i, j) for i in range(g_rows) for j in range(g_cols)]
        per_chunk = max(1, 64 // n)
        for c in range(0, len(positions), per_chunk):
            chunk = positions[c:c + per_chunk]
            batch = np.repeat(floor[None], len(chunk) * n, axis=0)
            for q, (i, j) in enumerate(chunk):
                y, x = i * config.stride, j * config.stride
                for s in range(n):
                    batch[q * n + s, :, y:y + w, x:x + w] = window_noise(seed, i, j, s, w)
            scores = scorer(batch).reshape(len(chunk), n)
            for q, (i, j) in enumerate(chunk):
                grid[i, j] = baseline - scores[q].mean()
    return Heatmap(grid, baseline, config, seed)


# ---------------------------------------------------------------------------
# object sensitivity


def object_sensitivity(model: PairModel, apartment: Apartment, room_type: str, kind: str) -> np.ndarray:
    """2×2 scores; ``m[i, j]`` has the object present (1) / absent (0) in floorplan (i) and photo (j)."""
    if not isinstance(model, PairModel):
        raise TypeError("object_sensitivity needs a pair model")
    floors = [toggle_object(apartment, room_type, kind, bool(i), modality="floorplan").floorplan for i in (0, 1)]
    photos = [toggle_object(apartment, room_type, kind, bool(j), modality="photo").photos[room_type] for j in (0, 1)]
    out = np.zeros((2, 2), np.float64)
    with _frozen(model):
        for j in (0, 1):
            scorer = _Scorer(model, photos[j], room_type)
            out[:, j] = scorer(np.stack([to_input(_chw(f)) for f in floors]))
    return out


# ---------------------------------------------------------------------------
# simplification localisation


@dataclass
class LocalizeResult:
    removed: List[int]  # segment ids in removal order
    survivors: List[int]
    scores: List[float]  # score before any removal, then after each removal
    fraction: float
    seed: int = 0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "fraction": self.fraction, "removed": self.removed,
                "survivors": self.survivors, "scores": self.scores}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def blank_segments(floorplan: np.ndarray, masks: Dict[int, np.ndarray], sids: Sequence[int]) -> np.ndarray:
    """Copy of an (H, W, 3) floorplan with the given segments painted background."""
    out = np.array(floorplan, copy=True)
    for sid in sids:
        out[masks[sid]] = BACKGROUND
    return out


def simplify_localize(model: MatchModel, apartment: Apartment, room_type: str, photo: Optional[Image] = None,
                      fraction: float = 0.8, rooms=None) -> LocalizeResult:
    """Greedy segment removal.

    Each step blanks every remaining segment in turn and removes the one whose
    removal changes the score least (ties: lowest segment id). The loop stops
    when that least-change removal would leave the score below ``fraction`` of
    the current score, or when one segment remains.
    """
    masks = apartment.segment_masks
    if not masks:
        raise ValueError("apartment has no segments")
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    photo = apartment.photos[room_type] if photo is None else photo
    remaining = sorted(masks)
    removed: List[int] = []
    with _frozen(model):
        scorer = _Scorer(model, photo, rooms if rooms is not None else room_type)
        current = float(scorer(to_input(_chw(apartment.floorplan))[None])[0])
        scores = [current]
        while len(remaining) > 1:
            cands = np.stack([to_input(_chw(blank_segments(apartment.floorplan, masks, removed + [sid])))
                              for sid in remaining])
            cand_scores = scorer(cands)
            best = argmax_lowest(-np.abs(cand_scores - current))
            if cand_scores[best] < fraction * current:
                break
            removed.append(remaining.pop(best))
            current = float(cand_scores[best])
            scores.append(current)
    return LocalizeResult(removed, remaining, scores, fraction)


# ---------------------------------------------------------------------------
# applications


def place_photos(model: MatchModel, floorplan: Image, photos: Dict[str, Image], config: RfConfig = RfConfig(),
                 seed: int = 0) -> Dict[str, Tuple[int, int]]:
    """Floorplan pixel (row, col) for every photo: the centre of its heatmap maximum."""
    return {room: rf_map(model, floorplan, img, room, config, seed).argmax_pixel()
            for room, img in sorted(photos.items())}


def placement_json(placements: Dict[str, Tuple[int, int]], seed: int) -> str:
    rec = {"seed": seed, "placements": {r: {"row": int(p[0]), "col": int(p[1])} for r, p in placements.items()}}
    return json.dumps(rec, indent=2, sort_keys=True) + "\n"


def retrieve(model: PairModel, floorplan: Image, corpus: Sequence[Union[Image, Tuple[str, Image]]], room_type: str,
             top_n: Optional[int] = None) -> List[Tuple[str, float]]:
    """Corpus ids ranked by descending pair score (stable on ties); at most ``top_n`` entries."""
    if not isinstance(model, PairModel):
        raise TypeError("retrieve needs a pair model")
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    items = [c if isinstance(c, tuple) else (str(i), c) for i, c in enumerate(corpus)]
    floor = to_input(_chw(floorplan))
    _check_floor(model, floor)
    photos = to_input(np.stack([_chw(img) for _, img in items]))
    with _frozen(model):
        f = model.floorplan.encode(Tensor(floor[None])).data
        scores = []
        for s in range(0, len(photos), 64):
            chunk = photos[s:s + 64]
            p = model.photo.encode(Tensor(chunk), [room_type] * len(chunk))
            scores.append(pair_score(Tensor(np.repeat(f, len(chunk), axis=0)), p, model.head).data)
    scores = np.concatenate(scores).astype(np.float64)
    order = np.argsort(-scores, kind="stable")
    if top_n is not None:
        order = order[:max(0, top_n)]
    return [(items[i][0], float(scores[i])) for i in order]


def ranking_csv(ranking: Sequence[Tuple[str, float]], seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "photo_id", "score"])
    for r, (pid, s) in enumerate(ranking, start=1):
        w.writerow([r, pid, format(s, ".8f")])
    return buf.getvalue()
