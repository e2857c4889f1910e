"""Datasets of generated apartments, sampling of matching problems, disk layout."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .generator import (
    GENERATOR_VERSION, ROOM_TYPES, Apartment, GeneratorSpec, ObjectSpec, PhotoView, Room,
    generate_apartment, render_floorplan,
)

MANIFEST_NAME = "manifest.json"


def apartment_seed(global_seed: int, apt_id: int) -> int:
    """Per-apartment seed, independent of generation order."""
    state = np.random.SeedSequence(int(global_seed), spawn_key=(int(apt_id),)).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


@dataclass
class DatasetManifest:
    seed: int
    spec: GeneratorSpec
    train_ids: List[int]
    test_ids: List[int]
    generator_version: str = GENERATOR_VERSION
    paths: Dict[int, str] = field(default_factory=dict)

    @property
    def split_sizes(self) -> Dict[str, int]:
        return {"train": len(self.train_ids), "test": len(self.test_ids)}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "generator_version": self.generator_version,
            "spec": self.spec.to_dict(), "split_sizes": self.split_sizes,
            "splits": {"train": list(self.train_ids), "test": list(self.test_ids)},
            "paths": {str(k): v for k, v in sorted(self.paths.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(seed=int(d["seed"]), spec=GeneratorSpec.from_dict(d["spec"]),
                   train_ids=[int(i) for i in d["splits"]["train"]],
                   test_ids=[int(i) for i in d["splits"]["test"]],
                   generator_version=d.get("generator_version", GENERATOR_VERSION),
                   paths={int(k): v for k, v in d.get("paths", {}).items()})


class Dataset:
    """Apartments held in memory as channel-first uint8 arrays.

    ``ids`` orders the view; sampling and batching address apartments by
    their position in that order.
    """

    def __init__(self, manifest: DatasetManifest, apartments: Dict[int, Apartment],
                 ids: Optional[Sequence[int]] = None):
        self.manifest = manifest
        self.apartments = apartments
        self.ids = np.asarray(list(ids) if ids is not None else sorted(apartments), dtype=np.int64)
        apts = [apartments[int(i)] for i in self.ids]
        if apts:
            self.floorplans = np.stack([a.floorplan.transpose(2, 0, 1) for a in apts])
            self.photos = {r: np.stack([a.photos[r].transpose(2, 0, 1) for a in apts]) for r in ROOM_TYPES}
        else:
            s, p = manifest.spec.floorplan_size, manifest.spec.photo_size
            self.floorplans = np.zeros((0, 3, s, s), np.uint8)
            self.photos = {r: np.zeros((0, 3, p, p), np.uint8) for r in ROOM_TYPES}

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, ids: Sequence[int]) -> "Dataset":
        return Dataset(self.manifest, self.apartments, ids)

    @property
    def train(self) -> "Dataset":
        return self.subset(self.manifest.train_ids)

    @property
    def test(self) -> "Dataset":
        return self.subset(self.manifest.test_ids)

    def apartment(self, index: int) -> Apartment:
        return self.apartments[int(self.ids[index])]


def _gen_one(args):
    seed, spec, apt_id = args
    return generate_apartment(apartment_seed(seed, apt_id), spec, apt_id=apt_id)


def build_dataset(seed: int, spec: Optional[GeneratorSpec] = None, n_train: int = 2000,
                  n_test: int = 500, jobs: int = 1) -> Dataset:
    """Generate ``n_train + n_test`` apartments; ids ``0..n_train-1`` train, rest test."""
    spec = spec or GeneratorSpec()
    spec.validate()
    total = n_train + n_test
    work = [(seed, spec, i) for i in range(total)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            apts = list(ex.map(_gen_one, work, chunksize=32))
    else:
        apts = [_gen_one(w) for w in work]
    manifest = DatasetManifest(seed=int(seed), spec=spec, train_ids=list(range(n_train)),
                               test_ids=list(range(n_train, total)),
                               paths={i: f"apt_{i:06d}" for i in range(total)})
    return Dataset(manifest, {a.id: a for a in apts})


# ---------------------------------------------------------------------------
# sampling


@dataclass
class PairSample:
    floor_index: int
    photo_index: int
    label: int
    room_types: Tuple[str, ...]
    floor_id: int
    photo_id: int
    floorplan: np.ndarray
    photos: List[np.ndarray]


@dataclass
class KwaySample:
    floor_index: int
    candidate_indices: List[int]
    true_index: int
    room_types: Tuple[str, ...]
    floor_id: int
    candidate_ids: List[int]


def _rooms(rng: np.random.Generator, room_type: Optional[str], n_photos: int) -> Tuple[str, ...]:
    if n_photos == len(ROOM_TYPES):
        return ROOM_TYPES
    if n_photos != 1:
        raise ValueError("photos per apartment must be 1 or 3")
    if room_type is None:
        return (ROOM_TYPES[int(rng.integers(len(ROOM_TYPES)))],)
    if room_type not in ROOM_TYPES:
        raise ValueError(f"unknown room type {room_type!r}")
    return (room_type,)


def make_pair_sample(dataset: Dataset, rng: np.random.Generator, room_type: Optional[str] = None,
                     n_photos: int = 1, anchor: Optional[int] = None,
                     positive: Optional[bool] = None) -> PairSample:
    """Floorplan plus photo(s) from the same apartment (label +1) or another one (-1), 1:1.

    ``positive`` forces the label instead of drawing it.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    if anchor is None:
        anchor = int(rng.integers(n))
    drawn = bool(rng.random() < 0.5)
    positive = drawn if positive is None else bool(positive)
    if positive or n == 1:
        if not positive:
            raise ValueError("a negative pair needs at least two apartments")
        other = anchor
    else:
        other = int(rng.integers(n - 1))
        other += other >= anchor
    rooms = _rooms(rng, room_type, n_photos)
    return PairSample(anchor, other, 1 if positive else -1, rooms,
                      int(dataset.ids[anchor]), int(dataset.ids[other]),
                      dataset.floorplans[anchor], [dataset.photos[r][other] for r in rooms])


def make_kway_sample(dataset: Dataset, rng: np.random.Generator, k: int, room_type: Optional[str] = None,
                     n_photos: int = 1, anchor: Optional[int] = None) -> KwaySample:
    """One matching candidate and ``k - 1`` distinct others, matching slot uniform."""
    n = len(dataset)
    if k < 2:
        raise ValueError("k-way sampling needs k >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    if anchor is None:
        anchor = int(rng.integers(n))
    others = rng.choice(n - 1, size=k - 1, replace=False)
    others = [int(o) + (int(o) >= anchor) for o in others]
    true_index = int(rng.integers(k))
    cands = others[:true_index] + [anchor] + others[true_index:]
    rooms = _rooms(rng, room_type, n_photos)
    return KwaySample(anchor, cands, true_index, rooms, int(dataset.ids[anchor]),
                      [int(dataset.ids[c]) for c in cands])


# ---------------------------------------------------------------------------
# disk layout


def _room_from_dict(d: dict) -> Room:
    view = None
    if d.get("view"):
        v = dict(d["view"])
        v["wall_color"] = tuple(v["wall_color"])
        v["corners"] = tuple(v["corners"])
        view = PhotoView(**v)
    objs = [ObjectSpec(o["kind"], bool(o["present"]), tuple(o["position"]), float(o["size"]))
            for o in d["objects"]]
    return Room(d["room_type"], tuple(d["rect"]), objs, int(d["palette"]), view)


def save_apartment(apt: Apartment, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    Image.fromarray(apt.floorplan).save(directory / "floorplan.png")
    for rtype, img in apt.photos.items():
        Image.fromarray(img).save(directory / f"{rtype}.png")
    seg = np.zeros(apt.floorplan.shape[:2], dtype=np.uint8)
    for sid, m in apt.segment_masks.items():
        seg[m] = sid
    seg_img = Image.fromarray(seg, mode="P")
    seg_img.putpalette([c for i in range(256) for c in ((i * 37) % 256, (i * 91) % 256, (i * 53) % 256)])
    seg_img.save(directory / "segments.png")
    with open(directory / "latent.json", "w") as fh:
        json.dump(apt.latent_record(), fh, indent=1, sort_keys=True)
    return directory


def load_apartment(directory) -> Apartment:
    directory = Path(directory)
    with open(directory / "latent.json") as fh:
        rec = json.load(fh)
    spec = GeneratorSpec.from_dict(rec["spec"])
    layout = [_room_from_dict(r) for r in rec["layout"]]
    floorplan = np.asarray(Image.open(directory / "floorplan.png").convert("RGB"), dtype=np.uint8).copy()
    photos = {r: np.asarray(Image.open(directory / f"{r}.png").convert("RGB"), dtype=np.uint8).copy()
              for r in ROOM_TYPES}
    seg = np.asarray(Image.open(directory / "segments.png"), dtype=np.uint8)
    info = {int(k): v for k, v in rec["segments"].items()}
    masks = {sid: seg == sid for sid in info}
    overrides = {(m, r, k): bool(v) for m, r, k, v in rec.get("overrides", [])}
    return Apartment(int(rec["id"]), int(rec["seed"]), spec, layout, floorplan, photos, masks, info, overrides)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    man = dataset.manifest
    for apt_id, apt in sorted(dataset.apartments.items()):
        rel = man.paths.get(apt_id, f"apt_{apt_id:06d}")
        man.paths[apt_id] = rel
        save_apartment(apt, out_dir / rel)
    with open(out_dir / MANIFEST_NAME, "w") as fh:
        json.dump(man.to_dict(), fh, indent=1, sort_keys=True)
    return out_dir / MANIFEST_NAME


def load_dataset(path) -> Dataset:
    """Load from a dataset directory or its manifest file."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path) as fh:
        man = DatasetManifest.from_dict(json.load(fh))
    root = path.parent
    apts = {}
    for apt_id in man.train_ids + man.test_ids:
        apts[apt_id] = load_apartment(root / man.paths.get(apt_id, f"apt_{apt_id:06d}"))
    return Dataset(man, apts)


def rerender_segments(apt: Apartment):
    """Recompute floorplan raster and segments from latents (consistency checks)."""
    return render_floorplan(apt.layout, apt.spec, lambda r, o: apt.shown("floorplan", r.room_type, o))
