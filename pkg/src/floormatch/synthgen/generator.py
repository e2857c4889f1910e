"""Procedural apartments: floorplan raster, per-room photographs, ground truth.

Generation samples a latent description first (room rectangles, object
presence and placement, floor tone, photo viewing nuisances) and renders both
modalities from it, so any raster can be re-rendered after a latent edit.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from ..errors import GenerationError

GENERATOR_VERSION = "1.0"

ROOM_TYPES = ("bathroom", "kitchen", "living_room")
FILLER_TYPE = "bedroom"
OBJECT_KINDS = ("basin", "bathtub", "counter", "stove", "sofa", "table")
LEGAL_OBJECTS = {
    "bathroom": ("basin", "bathtub"),
    "kitchen": ("counter", "stove"),
    "living_room": ("sofa", "table"),
    FILLER_TYPE: (),
}
MODALITIES = ("floorplan", "photo", "both")

# floor tone i: light tint on the floorplan, saturated floor colour in photos
FLOORPLAN_TINTS = [(240, 226, 196), (204, 222, 242), (212, 238, 204),
                   (242, 208, 212), (226, 214, 242), (234, 234, 234)]
PHOTO_FLOORS = [(178, 130, 80), (80, 110, 170), (90, 150, 90),
                (172, 98, 110), (128, 106, 172), (140, 140, 140)]
SOFA_COLORS = [(150, 40, 40), (40, 60, 130), (70, 70, 70)]

WALL = (45, 45, 45)
ICON = (60, 60, 60)
BACKGROUND = (255, 255, 255)


@dataclass
class GeneratorSpec:
    """Generator dials. Sizes in pixels; probabilities per object kind."""

    floorplan_size: int = 64
    photo_size: int = 48
    object_prob: float = 0.7
    object_probs: Dict[str, float] = field(default_factory=dict)
    n_tones: int = 4
    extra_rooms: Tuple[int, int] = (1, 2)
    min_room_frac: float = 0.2
    warp: float = 0.12
    noise: float = 10.0

    def prob(self, kind: str) -> float:
        return float(self.object_probs.get(kind, self.object_prob))

    def validate(self) -> None:
        if self.floorplan_size < 16 or self.photo_size < 16:
            raise GenerationError("raster sizes must be at least 16 pixels")
        if not 1 <= self.n_tones <= len(FLOORPLAN_TINTS):
            raise GenerationError(f"n_tones must be in 1..{len(FLOORPLAN_TINTS)}")
        for kind, p in [("default", self.object_prob), *self.object_probs.items()]:
            if not 0.0 <= p <= 1.0:
                raise GenerationError(f"object probability for {kind} outside [0, 1]")
        lo, hi = self.extra_rooms
        if lo < 0 or hi < lo:
            raise GenerationError("extra_rooms must be an ordered non-negative pair")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["extra_rooms"] = list(self.extra_rooms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        d = dict(d)
        if "extra_rooms" in d:
            d["extra_rooms"] = tuple(d["extra_rooms"])
        return cls(**d)


@dataclass
class ObjectSpec:
    kind: str
    present: bool
    position: Tuple[float, float]  # (u, v) in [0, 1] relative to the room interior
    size: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "present": self.present,
                "position": list(self.position), "size": self.size}


@dataclass
class PhotoView:
    """Per-photo nuisance latents; not visible in the floorplan."""

    horizon: float
    wall_color: Tuple[int, int, int]
    brightness: float
    light_slope: float
    corners: Tuple[float, ...]  # 8 corner offsets, fraction of photo size
    sofa_color: int
    noise_seed: int

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["wall_color"] = list(self.wall_color)
        d["corners"] = list(self.corners)
        return d


@dataclass
class Room:
    room_type: str
    rect: Tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive) on the floorplan
    objects: List[ObjectSpec]
    palette: int  # floor tone index
    view: Optional[PhotoView] = None

    @property
    def interior(self) -> Tuple[int, int, int, int]:
        x0, y0, x1, y1 = self.rect
        return x0 + 1, y0 + 1, x1 - 1, y1 - 1

    def area(self) -> int:
        x0, y0, x1, y1 = self.rect
        return (x1 - x0) * (y1 - y0)

    def to_dict(self) -> dict:
        return {"room_type": self.room_type, "rect": list(self.rect),
                "objects": [o.to_dict() for o in self.objects], "palette": self.palette,
                "view": self.view.to_dict() if self.view else None}


@dataclass
class Apartment:
    id: int
    seed: int
    spec: GeneratorSpec
    layout: List[Room]
    floorplan: np.ndarray  # (H, W, 3) uint8
    photos: Dict[str, np.ndarray]  # room_type -> (h, w, 3) uint8
    segment_masks: Dict[int, np.ndarray]  # segment id -> bool (H, W)
    segment_info: Dict[int, dict]  # segment id -> {"kind": "room"|"fixture", "room_type", ...}
    # (modality, room_type, kind) -> presence shown in that modality
    overrides: Dict[Tuple[str, str, str], bool] = field(default_factory=dict)

    def room(self, room_type: str) -> Room:
        for r in self.layout:
            if r.room_type == room_type:
                return r
        raise KeyError(room_type)

    def room_mask(self, room_type: str) -> np.ndarray:
        """All pixels of the room rectangle (walls, fill and fixtures)."""
        x0, y0, x1, y1 = self.room(room_type).rect
        m = np.zeros(self.floorplan.shape[:2], dtype=bool)
        m[y0:y1, x0:x1] = True
        return m

    def shown(self, modality: str, room_type: str, obj: ObjectSpec) -> bool:
        return self.overrides.get((modality, room_type, obj.kind), obj.present)

    def latent_record(self) -> dict:
        return {
            "id": self.id, "seed": self.seed, "generator_version": GENERATOR_VERSION,
            "spec": self.spec.to_dict(), "layout": [r.to_dict() for r in self.layout],
            "segments": {str(k): v for k, v in sorted(self.segment_info.items())},
            "overrides": [[m, r, k, v] for (m, r, k), v in sorted(self.overrides.items())],
        }


# ---------------------------------------------------------------------------
# latent sampling


def _split_layout(rng: np.random.Generator, size: int, n_rooms: int, min_side: int):
    margin = max(2, round(0.05 * size))
    shrink = rng.integers(0, max(1, round(0.08 * size)) + 1, size=4)
    x0, y0 = margin + int(shrink[0]), margin + int(shrink[1])
    x1, y1 = size - margin - int(shrink[2]), size - margin - int(shrink[3])
    rects = [(x0, y0, x1, y1)]
    while len(rects) < n_rooms:
        cands = [r for r in rects if max(r[2] - r[0], r[3] - r[1]) >= 2 * min_side]
        if not cands:
            raise GenerationError(f"cannot place {n_rooms} rooms of side >= {min_side} in {size}px")
        r = max(cands, key=lambda q: ((q[2] - q[0]) * (q[3] - q[1]), q))
        rects.remove(r)
        w, h = r[2] - r[0], r[3] - r[1]
        vertical = w >= h if (w >= 2 * min_side and h >= 2 * min_side) else w >= 2 * min_side
        if vertical:
            cut = r[0] + int(rng.integers(min_side, w - min_side + 1))
            rects += [(r[0], r[1], cut, r[3]), (cut, r[1], r[2], r[3])]
        else:
            cut = r[1] + int(rng.integers(min_side, h - min_side + 1))
            rects += [(r[0], r[1], r[2], cut), (r[0], cut, r[2], r[3])]
    return sorted(rects)


def _sample_view(rng: np.random.Generator, spec: GeneratorSpec) -> PhotoView:
    return PhotoView(
        horizon=float(rng.uniform(0.38, 0.55)),
        wall_color=tuple(int(c) for c in rng.integers(195, 246, size=3)),
        brightness=float(rng.uniform(0.85, 1.15)),
        light_slope=float(rng.uniform(-0.15, 0.15)),
        corners=tuple(float(c) for c in rng.uniform(-spec.warp, spec.warp, size=8)),
        sofa_color=int(rng.integers(len(SOFA_COLORS))),
        noise_seed=int(rng.integers(2**31 - 1)),
    )


def sample_layout(rng: np.random.Generator, spec: GeneratorSpec) -> List[Room]:
    size = spec.floorplan_size
    n_rooms = len(ROOM_TYPES) + int(rng.integers(spec.extra_rooms[0], spec.extra_rooms[1] + 1))
    min_side = max(6, round(spec.min_room_frac * size))
    rects = _split_layout(rng, size, n_rooms, min_side)
    by_area = sorted(range(len(rects)), key=lambda i: ((rects[i][2] - rects[i][0]) * (rects[i][3] - rects[i][1]), i))
    types = [FILLER_TYPE] * len(rects)
    types[by_area[0]] = "bathroom"
    types[by_area[-1]] = "living_room"
    middle = by_area[1:-1]
    types[middle[int(rng.integers(len(middle)))]] = "kitchen"

    rooms = []
    for rect, rtype in zip(rects, types):
        palette = int(rng.integers(spec.n_tones))
        objects = []
        kinds = list(LEGAL_OBJECTS[rtype])
        if kinds and rng.random() < 0.5:
            kinds.reverse()
        for slot, kind in enumerate(kinds):
            present = bool(rng.random() < spec.prob(kind))
            u = float(rng.uniform(0.22, 0.32)) if slot == 0 else float(rng.uniform(0.68, 0.78))
            v = float(rng.uniform(0.3, 0.7))
            objects.append(ObjectSpec(kind, present, (u, v), float(rng.uniform(0.85, 1.15))))
        view = _sample_view(rng, spec) if rtype in ROOM_TYPES else None
        rooms.append(Room(rtype, rect, objects, palette, view))
    return rooms


# ---------------------------------------------------------------------------
# floorplan rendering


def _icon_box(room: Room, obj: ObjectSpec) -> Tuple[int, int, int, int]:
    ix0, iy0, ix1, iy1 = room.interior
    w, h = ix1 - ix0, iy1 - iy0
    fw, fh = {"basin": (0.26, 0.26), "bathtub": (0.36, 0.62), "counter": (0.36, 0.7),
              "stove": (0.3, 0.3), "sofa": (0.38, 0.4), "table": (0.3, 0.3)}[obj.kind]
    bw = max(3, min(round(fw * w * obj.size), round(0.44 * w)))
    bh = max(3, min(round(fh * h * obj.size), h - 2))
    cx = ix0 + obj.position[0] * w
    cy = iy0 + obj.position[1] * h
    x0 = int(np.clip(round(cx - bw / 2), ix0, ix1 - bw))
    y0 = int(np.clip(round(cy - bh / 2), iy0, iy1 - bh))
    return x0, y0, x0 + bw, y0 + bh


def _draw_icon(d: ImageDraw.ImageDraw, kind: str, box) -> None:
    x0, y0, x1, y1 = box
    xm, ym = x1 - 1, y1 - 1
    if kind == "basin":
        d.ellipse([x0, y0, xm, ym], fill=BACKGROUND, outline=ICON)
    elif kind == "bathtub":
        d.rectangle([x0, y0, xm, ym], fill=BACKGROUND, outline=ICON)
        if xm - x0 >= 4 and ym - y0 >= 4:
            d.ellipse([x0 + 1, y0 + 1, xm - 1, ym - 1], outline=ICON)
    elif kind == "counter":
        d.rectangle([x0, y0, xm, ym], fill=BACKGROUND, outline=ICON)
        d.line([x0, (y0 + ym) // 2, xm, (y0 + ym) // 2], fill=ICON)
    elif kind == "stove":
        d.rectangle([x0, y0, xm, ym], fill=BACKGROUND, outline=ICON)
        d.point([(x0 + (xm - x0) // 3, (y0 + ym) // 2), (x0 + 2 * (xm - x0) // 3, (y0 + ym) // 2)], fill=ICON)
    elif kind == "sofa":
        d.rectangle([x0, y0, xm, ym], fill=(150, 150, 150), outline=ICON)
        d.rectangle([x0 + 1, y0 + 2, xm - 1, ym], fill=BACKGROUND, outline=ICON)
    elif kind == "table":
        d.rectangle([x0, y0, xm, ym], fill=(120, 120, 120), outline=ICON)
    else:
        raise ValueError(kind)


def render_floorplan(apt_layout: List[Room], spec: GeneratorSpec, shown) -> Tuple[np.ndarray, Dict[int, np.ndarray], Dict[int, dict]]:
    """Rasterise the layout. ``shown(room, obj)`` decides icon visibility.

    Returns the RGB raster plus disjoint segment masks: one per room interior
    (fill pixels) and one per visible fixture icon.
    """
    size = spec.floorplan_size
    img = Image.new("RGB", (size, size), BACKGROUND)
    d = ImageDraw.Draw(img)
    for room in apt_layout:
        tint = FLOORPLAN_TINTS[room.palette]
        ix0, iy0, ix1, iy1 = room.interior
        if room.room_type == "bathroom":
            # tiles in the saturated floor tone with light grout: the bathroom's colour cue
            d.rectangle([ix0, iy0, ix1 - 1, iy1 - 1], fill=PHOTO_FLOORS[room.palette])
            for x in range(ix0 + 2, ix1, 3):
                d.line([x, iy0, x, iy1 - 1], fill=tint)
            for y in range(iy0 + 2, iy1, 3):
                d.line([ix0, y, ix1 - 1, y], fill=tint)
        else:
            d.rectangle([ix0, iy0, ix1 - 1, iy1 - 1], fill=tint)
    for room in apt_layout:
        x0, y0, x1, y1 = room.rect
        d.rectangle([x0, y0, x1 - 1, y1 - 1], outline=WALL)
    xs0 = min(r.rect[0] for r in apt_layout)
    ys0 = min(r.rect[1] for r in apt_layout)
    xs1 = max(r.rect[2] for r in apt_layout)
    ys1 = max(r.rect[3] for r in apt_layout)
    d.rectangle([xs0 - 1, ys0 - 1, xs1, ys1], outline=WALL)

    masks: Dict[int, np.ndarray] = {}
    info: Dict[int, dict] = {}
    fixtures = []
    for room in apt_layout:
        for obj in room.objects:
            if shown(room, obj):
                box = _icon_box(room, obj)
                _draw_icon(d, obj.kind, box)
                fixtures.append((room, obj, box))
    sid = 1
    for room in apt_layout:
        ix0, iy0, ix1, iy1 = room.interior
        m = np.zeros((size, size), dtype=bool)
        m[iy0:iy1, ix0:ix1] = True
        for r2, _, (bx0, by0, bx1, by1) in fixtures:
            if r2 is room:
                m[by0:by1, bx0:bx1] = False
        masks[sid] = m
        info[sid] = {"kind": "room", "room_type": room.room_type, "rect": list(room.rect)}
        sid += 1
    for room, obj, (bx0, by0, bx1, by1) in fixtures:
        m = np.zeros((size, size), dtype=bool)
        m[by0:by1, bx0:bx1] = True
        masks[sid] = m
        info[sid] = {"kind": "fixture", "room_type": room.room_type, "object": obj.kind,
                     "box": [bx0, by0, bx1, by1]}
        sid += 1
    return np.asarray(img, dtype=np.uint8).copy(), masks, info


# ---------------------------------------------------------------------------
# photo rendering


def _perspective_coeffs(src, dst) -> np.ndarray:
    """Coefficients mapping output (dst) points to input (src) points for PIL."""
    a = []
    b = []
    for (x, y), (u, v) in zip(dst, src):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b += [u, v]
    return np.linalg.solve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def _draw_photo_object(d: ImageDraw.ImageDraw, kind: str, cx: float, base: float, s: float, p: int, view: PhotoView):
    def box(w, h, lift=0.0):
        return [cx - w * p * s / 2, base - (h + lift) * p * s, cx + w * p * s / 2, base - lift * p * s]

    if kind == "basin":
        d.rectangle(box(0.06, 0.16), fill=(215, 215, 215))
        d.ellipse(box(0.26, 0.09, lift=0.14), fill=(250, 250, 250), outline=(150, 150, 150))
    elif kind == "bathtub":
        d.rounded_rectangle(box(0.46, 0.2), radius=max(1, int(0.04 * p * s)), fill=(246, 246, 246),
                            outline=(160, 160, 160))
    elif kind == "counter":
        d.rectangle(box(0.44, 0.26), fill=(120, 80, 45))
        d.rectangle(box(0.46, 0.04, lift=0.26), fill=(190, 190, 190))
    elif kind == "stove":
        d.rectangle(box(0.24, 0.22), fill=(30, 30, 30))
        r = 0.035 * p * s
        for dx in (-0.06, 0.06):
            x = cx + dx * p * s
            y = base - 0.17 * p * s
            d.ellipse([x - r, y - r, x + r, y + r], fill=(230, 110, 30))
    elif kind == "sofa":
        col = SOFA_COLORS[view.sofa_color]
        d.rectangle(box(0.46, 0.3), fill=tuple(int(c * 0.8) for c in col))
        d.rectangle(box(0.46, 0.14), fill=col)
    elif kind == "table":
        d.rectangle(box(0.3, 0.05, lift=0.14), fill=(110, 70, 35))
        d.rectangle(box(0.03, 0.14), fill=(90, 55, 25))
    else:
        raise ValueError(kind)


def render_photo(room: Room, spec: GeneratorSpec, shown) -> np.ndarray:
    """Perspective-style rendering of one room from its latent."""
    p = spec.photo_size
    view = room.view
    img = Image.new("RGB", (p, p), view.wall_color)
    d = ImageDraw.Draw(img)
    hy = view.horizon * p
    floor = tuple(int(np.clip(c * view.brightness, 0, 255)) for c in PHOTO_FLOORS[room.palette])
    d.polygon([(0, hy), (p, hy), (p, p), (0, p)], fill=floor)
    if room.room_type == "bathroom":
        grout = tuple(int(c * 0.75) for c in floor)
        for i in range(1, 6):
            y = hy + (p - hy) * (i / 6) ** 1.3
            d.line([0, y, p, y], fill=grout)
        for i in range(-4, 9):
            xt = p * i / 4
            d.line([p / 2 + (xt - p / 2) * 0.45, hy, xt, p], fill=grout)
    objs = [o for o in room.objects if shown(room, o)]
    # far objects first so nearer ones overlap them
    for obj in sorted(objs, key=lambda o: (o.position[1], o.kind)):
        u, v = obj.position
        base = hy + (p - hy) * (0.3 + 0.55 * v)
        scale = (0.65 + 0.5 * v) * obj.size
        _draw_photo_object(d, obj.kind, u * p, base, scale, p, view)

    c = np.asarray(view.corners).reshape(4, 2) * p
    dst = [(0, 0), (p, 0), (p, p), (0, p)]
    src = [(x + dx, y + dy) for (x, y), (dx, dy) in zip(dst, c)]
    img = img.transform((p, p), Image.PERSPECTIVE, tuple(_perspective_coeffs(src, dst)),
                        resample=Image.BILINEAR, fillcolor=view.wall_color)

    arr = np.asarray(img, dtype=np.float32)
    ramp = 1.0 + view.light_slope * np.linspace(-1, 1, p, dtype=np.float32)
    arr = arr * ramp[None, :, None]
    noise = np.random.default_rng(view.noise_seed).normal(0.0, spec.noise, size=arr.shape)
    arr = arr + noise.astype(np.float32)
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# public operations


def _render_all(apt_id: int, seed: int, spec: GeneratorSpec, layout: List[Room],
                overrides: Dict[Tuple[str, str, str], bool]) -> Apartment:
    apt = Apartment(apt_id, seed, spec, layout, np.zeros(0), {}, {}, {}, dict(overrides))
    apt.floorplan, apt.segment_masks, apt.segment_info = render_floorplan(
        layout, spec, lambda r, o: apt.shown("floorplan", r.room_type, o))
    for rtype in ROOM_TYPES:
        apt.photos[rtype] = render_photo(apt.room(rtype), spec,
                                         lambda r, o: apt.shown("photo", r.room_type, o))
    return apt


def generate_apartment(seed: int, spec: Optional[GeneratorSpec] = None, apt_id: int = 0) -> Apartment:
    """Deterministic apartment from ``(seed, spec)``."""
    spec = spec or GeneratorSpec()
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    layout = sample_layout(rng, spec)
    return _render_all(apt_id, int(seed), spec, layout, {})


def toggle_object(apartment: Apartment, room_type: str, kind: str, present: bool,
                  modality: str = "both") -> Apartment:
    """Copy of ``apartment`` with one object's visibility set in one or both modalities.

    Only the rasters of the affected modality are re-rendered.
    """
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}")
    if room_type not in LEGAL_OBJECTS or kind not in LEGAL_OBJECTS[room_type]:
        raise ValueError(f"{kind!r} is not a legal object for {room_type!r}")
    overrides = dict(apartment.overrides)
    mods = ("floorplan", "photo") if modality == "both" else (modality,)
    for m in mods:
        overrides[(m, room_type, kind)] = bool(present)
    out = dataclasses.replace(apartment, overrides=overrides, photos=dict(apartment.photos))
    if "floorplan" in mods:
        out.floorplan, out.segment_masks, out.segment_info = render_floorplan(
            out.layout, out.spec, lambda r, o: out.shown("floorplan", r.room_type, o))
    if "photo" in mods:
        out.photos[room_type] = render_photo(out.room(room_type), out.spec,
                                             lambda r, o: out.shown("photo", r.room_type, o))
    return out
