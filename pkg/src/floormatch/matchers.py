"""Pair, photograph-set and k-way matching networks.

All models take float images in NCHW layout (see :func:`to_input`) and the
room type of every photo slot. Scores are tanh outputs in [-1, 1]; k-way
models emit logits whose softmax is the candidate distribution.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import (
    Tensor, concat, linear, mean_of, parameter, relu, reshape, softmax_np, tanh, weighted_mean,
)
from .autodiff.module import BatchNorm, Module
from .encoders import Encoder, EncoderBank, EncoderConfig, init_std
from .errors import ConfigError, DimensionError
from .synthgen.generator import ROOM_TYPES

FUSION_LAYERS = ("image", "conv3", "conv4", "fc6", "score")
FUSION_FUNCS = ("averaging", "concatenation")
PROBLEM_KINDS = ("pair", "set", "kway")
ROOM_MODES = ("aware", "agnostic")

RoomSpec = Union[Sequence[str], Sequence[Sequence[str]]]


def to_input(images: np.ndarray) -> np.ndarray:
    """uint8 rasters -> float32 in [-1, 1]; shape preserved."""
    return images.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


@dataclass
class FusionSpec:
    layer: str = "fc6"
    func: str = "concatenation"

    def errors(self) -> List[Tuple[str, str]]:
        errs = []
        if self.layer not in FUSION_LAYERS:
            errs.append(("fusion.layer", f"must be one of {list(FUSION_LAYERS)}, got {self.layer!r}"))
        if self.func not in FUSION_FUNCS:
            errs.append(("fusion.func", f"must be one of {list(FUSION_FUNCS)}, got {self.func!r}"))
        return errs


@dataclass
class MatchProblem:
    kind: str = "pair"
    k: int = 1
    photos_per_apartment: int = 1
    room_mode: str = "aware"
    room_type: Optional[str] = "bathroom"
    fusion: FusionSpec = field(default_factory=FusionSpec)

    def errors(self) -> List[Tuple[str, str]]:
        errs = []
        if self.kind not in PROBLEM_KINDS:
            errs.append(("problem.kind", f"must be one of {list(PROBLEM_KINDS)}, got {self.kind!r}"))
        if self.kind == "kway" and self.k < 2:
            errs.append(("problem.k", f"k-way matching needs k >= 2, got {self.k}"))
        if self.kind in ("pair", "set") and self.k != 1:
            errs.append(("problem.k", f"{self.kind} matching needs k = 1, got {self.k}"))
        if self.photos_per_apartment not in (1, 3):
            errs.append(("problem.photos_per_apartment", f"must be 1 or 3, got {self.photos_per_apartment}"))
        if self.room_mode not in ROOM_MODES:
            errs.append(("problem.room_mode", f"must be one of {list(ROOM_MODES)}, got {self.room_mode!r}"))
        if self.room_type is not None and self.room_type not in ROOM_TYPES:
            errs.append(("problem.room_type", f"must be one of {list(ROOM_TYPES)} or null"))
        if self.kind == "pair" and self.photos_per_apartment != 1:
            errs.append(("problem.photos_per_apartment", "pair matching uses one photo; use kind=set"))
        if self.kind == "kway" and self.room_mode == "agnostic":
            errs.append(("problem.room_mode", "room-agnostic k-way matching is not supported"))
        if self.kind == "set":
            errs.extend(self.fusion.errors())
            if self.photos_per_apartment == 1 and self.fusion.layer != "fc6":
                errs.append(("problem.fusion.layer", f"{self.fusion.layer} fusion needs 3 photos"))
        return errs

    def validate(self) -> "MatchProblem":
        errs = self.errors()
        if errs:
            raise ConfigError(errs)
        return self

    def photo_rooms(self) -> Optional[Tuple[str, ...]]:
        """Fixed room order for multi-photo problems, the single room type, or None (mixed)."""
        if self.photos_per_apartment == 3:
            return ROOM_TYPES
        return (self.room_type,) if self.room_type else None

    @property
    def chance(self) -> float:
        return 100.0 / self.k if self.kind == "kway" else 50.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MatchProblem":
        d = dict(d)
        d["fusion"] = FusionSpec(**d.get("fusion", {}))
        return cls(**d)


@dataclass
class ModelSpec:
    """Everything needed to rebuild a model's architecture."""

    problem: MatchProblem = field(default_factory=MatchProblem)
    floorplan: EncoderConfig = field(default_factory=EncoderConfig)
    photo: EncoderConfig = field(default_factory=lambda: EncoderConfig(input_size=(48, 48)))
    hidden: Optional[int] = None  # defaults to 2 * feature_dim
    bank_mode: Optional[str] = None  # None: derived from problem.room_mode
    untied_score_weights: bool = False

    def resolved_bank_mode(self) -> str:
        if self.bank_mode:
            return self.bank_mode
        return "room_aware" if self.problem.room_mode == "aware" else "room_agnostic"

    def head_options(self) -> dict:
        """Head layers follow the floorplan encoder's init and normalisation."""
        fp = self.floorplan
        return {"sigma": fp.init_sigma, "norm": fp.norm == "batch", "init": fp.init}

    def hidden_width(self) -> int:
        return self.hidden or 2 * self.floorplan.feature_dim

    def to_dict(self) -> dict:
        return {"problem": self.problem.to_dict(), "floorplan": self.floorplan.to_dict(),
                "photo": self.photo.to_dict(), "hidden": self.hidden, "bank_mode": self.bank_mode,
                "untied_score_weights": self.untied_score_weights}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(problem=MatchProblem.from_dict(d["problem"]),
                   floorplan=EncoderConfig.from_dict(d["floorplan"]),
                   photo=EncoderConfig.from_dict(d["photo"]), hidden=d.get("hidden"),
                   bank_mode=d.get("bank_mode"), untied_score_weights=bool(d.get("untied_score_weights", False)))


class MLPHead(Module):
    """Two fully connected layers with a (batch-normalised) relu between them."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator, sigma: float = 0.001,
                 norm: bool = True, init: str = "gaussian"):
        super().__init__()
        s1 = init_std(init, sigma, in_dim, conv=False)
        s2 = init_std(init, sigma, hidden, conv=False)
        self.fc1 = (self.add_param("fc1.weight", parameter(rng.normal(0, s1, (hidden, in_dim)).astype(np.float32))),
                    self.add_param("fc1.bias", parameter(np.zeros(hidden, np.float32))))
        self.fc2 = (self.add_param("fc2.weight", parameter(rng.normal(0, s2, (out_dim, hidden)).astype(np.float32))),
                    self.add_param("fc2.bias", parameter(np.zeros(out_dim, np.float32))))
        self.in_dim = in_dim
        self.fc1_bn = self.add_child("fc1_bn", BatchNorm(hidden)) if norm else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"head expects {self.in_dim} features, got {x.shape[-1]}")
        h = linear(x, *self.fc1)
        if self.fc1_bn is not None:
            h = self.fc1_bn.forward(h)
        return linear(relu(h), *self.fc2)


def pair_score(floorplan_feat, photo_feat, head: MLPHead) -> Tensor:
    """tanh(head([floorplan_feat, photo_feat])); 1-D inputs give a scalar."""
    f = floorplan_feat if isinstance(floorplan_feat, Tensor) else Tensor(floorplan_feat)
    p = photo_feat if isinstance(photo_feat, Tensor) else Tensor(photo_feat)
    if f.shape != p.shape:
        raise DimensionError(f"feature shapes differ: {f.shape} vs {p.shape}")
    single = f.ndim == 1
    if single:
        f, p = reshape(f, (1, -1)), reshape(p, (1, -1))
    s = tanh(head.forward(concat([f, p], axis=1)))
    return reshape(s, ()) if single else reshape(s, (s.shape[0],))


def _rows_rooms(rooms: RoomSpec, batch: int, n: int) -> List[Tuple[str, ...]]:
    """Normalise room labels to one tuple of length ``n`` per row."""
    rooms = list(rooms)
    if rooms and isinstance(rooms[0], str):
        if len(rooms) != n:
            raise DimensionError(f"{len(rooms)} room labels for {n} photo slots")
        return [tuple(rooms)] * batch
    if len(rooms) != batch or any(len(r) != n for r in rooms):
        raise DimensionError("per-row room labels must match batch size and photo count")
    return [tuple(r) for r in rooms]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class MatchModel(Module):
    """Shared plumbing; subclasses define the head."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.problem = spec.problem

    def encoder_parameters(self) -> Dict[str, Tensor]:
        head_prefixes = ("head.", "combine.")
        return {k: v for k, v in self.named_parameters().items() if not k.startswith(head_prefixes)}

    def head_parameters(self) -> Dict[str, Tensor]:
        enc = self.encoder_parameters()
        return {k: v for k, v in self.named_parameters().items() if k not in enc}


class PairModel(MatchModel):
    """Siamese floorplan/photo arms plus regression head."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        d = spec.floorplan.feature_dim
        if spec.photo.feature_dim != d:
            raise DimensionError("floorplan and photo feature dims must agree")
        rooms = spec.problem.photo_rooms() or ROOM_TYPES
        self.floorplan = self.add_child("floorplan", Encoder(spec.floorplan, rng))
        self.photo = self.add_child("photo", EncoderBank(spec.resolved_bank_mode(), rooms, spec.photo, rng))
        self.head = self.add_child("head", MLPHead(2 * d, spec.hidden_width(), 1, rng, **spec.head_options()))

    def score(self, floorplans, photos, rooms: Sequence[str]) -> Tensor:
        """floorplans (B,3,H,W), photos (B,3,h,w), one room label per row -> (B,)."""
        f = self.floorplan.encode(_as_tensor(floorplans))
        p = self.photo.encode(_as_tensor(photos), list(rooms))
        return pair_score(f, p, self.head)


class SetModel(MatchModel):
    """Floorplan against a set of photos with a configurable fusion point."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        prob = spec.problem
        self.n = prob.photos_per_apartment
        self.fusion = prob.fusion
        d = spec.floorplan.feature_dim
        hidden = spec.hidden_width()
        mode = spec.resolved_bank_mode()
        layer, func = self.fusion.layer, self.fusion.func
        self.floorplan = self.add_child("floorplan", Encoder(spec.floorplan, rng))
        self.trunk: Optional[Encoder] = None
        self.combine_w: Optional[Tensor] = None
        self.combine_lin: Optional[Tuple[Tensor, Tensor]] = None
        if layer == "image":
            ch = spec.photo.in_channels * (self.n if func == "concatenation" else 1)
            cfg = dataclasses.replace(spec.photo, in_channels=ch)
            self.photo = self.add_child("photo", Encoder(cfg, rng))
            head_in = 2 * d
        elif layer in ("conv3", "conv4"):
            self.photo = self.add_child("photo", EncoderBank(mode, ROOM_TYPES[:self.n] if self.n == 3 else
                                                             (prob.photo_rooms() or ROOM_TYPES),
                                                             spec.photo, rng, stop=layer))
            c = spec.photo.tap_shape(layer)[0]
            cin = c * self.n if func == "concatenation" else c
            self.trunk = self.add_child("trunk", Encoder(spec.photo, rng, start_after=layer, in_channels=cin))
            head_in = 2 * d
        else:
            rooms = ROOM_TYPES if self.n == 3 else (prob.photo_rooms() or ROOM_TYPES)
            self.photo = self.add_child("photo", EncoderBank(mode, rooms, spec.photo, rng))
            head_in = (1 + self.n) * d if (layer == "fc6" and func == "concatenation") else 2 * d
        self.head = self.add_child("head", MLPHead(head_in, hidden, 1, rng, **spec.head_options()))
        if layer == "score":
            comb = self.add_child("combine", Module())
            if func == "averaging":
                shape = (self.n,) if spec.untied_score_weights else (1,)
                self.combine_w = comb.add_param("weight_logits", parameter(np.zeros(shape, np.float32)))
            else:
                self.combine_lin = (
                    comb.add_param("weight", parameter(rng.normal(0, 0.001, (1, self.n)).astype(np.float32))),
                    comb.add_param("bias", parameter(np.zeros(1, np.float32))))

    def score(self, floorplans, photo_sets, rooms: RoomSpec) -> Tensor:
        """floorplans (B,3,H,W), photo_sets (B,n,3,h,w), rooms per slot (or per row) -> (B,)."""
        ps = photo_sets.data if isinstance(photo_sets, Tensor) else np.asarray(photo_sets)
        if ps.ndim != 5 or ps.shape[1] != self.n:
            raise DimensionError(f"expected (B, {self.n}, C, H, W) photo sets, got {ps.shape}")
        b = ps.shape[0]
        row_rooms = _rows_rooms(rooms, b, self.n)
        f = self.floorplan.encode(_as_tensor(floorplans))
        slots = [Tensor(ps[:, i]) for i in range(self.n)]
        slot_rooms = [[r[i] for r in row_rooms] for i in range(self.n)]
        layer, func = self.fusion.layer, self.fusion.func
        fuse = (lambda xs: concat(xs, axis=1)) if func == "concatenation" else mean_of
        if layer == "image":
            p = self.photo.encode(fuse(slots))
            return pair_score(f, p, self.head)
        if layer in ("conv3", "conv4"):
            taps = [self.photo.encode(slots[i], slot_rooms[i]) for i in range(self.n)]
            p = self.trunk.forward(fuse(taps))
            return pair_score(f, p, self.head)
        feats = [self.photo.encode(slots[i], slot_rooms[i]) for i in range(self.n)]
        if layer == "fc6":
            if func == "concatenation":
                s = tanh(self.head.forward(concat([f] + feats, axis=1)))
            else:
                s = tanh(self.head.forward(concat([f, mean_of(feats)], axis=1)))
            return reshape(s, (b,))
        cols = [reshape(pair_score(f, p, self.head), (b, 1)) for p in feats]
        scores = concat(cols, axis=1)
        if func == "averaging":
            return weighted_mean(scores, self.combine_w)
        return reshape(tanh(linear(scores, *self.combine_lin)), (b,))


class KWayModel(MatchModel):
    """Floorplan against k candidate photo(-set)s; photo encoders shared across candidates."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        prob = spec.problem
        self.k = prob.k
        self.n = prob.photos_per_apartment
        d = spec.floorplan.feature_dim
        rooms = prob.photo_rooms() or ROOM_TYPES
        self.floorplan = self.add_child("floorplan", Encoder(spec.floorplan, rng))
        self.photo = self.add_child("photo", EncoderBank(spec.resolved_bank_mode(), rooms, spec.photo, rng))
        self.head = self.add_child("head", MLPHead((1 + self.k * self.n) * d, spec.hidden_width(), self.k, rng, **spec.head_options()))

    def logits(self, floorplans, candidates, rooms: RoomSpec) -> Tensor:
        """floorplans (B,3,H,W), candidates (B,k,n,3,h,w) -> logits (B,k)."""
        c = candidates.data if isinstance(candidates, Tensor) else np.asarray(candidates)
        if c.ndim != 6 or c.shape[1] != self.k or c.shape[2] != self.n:
            raise DimensionError(f"expected (B, {self.k}, {self.n}, C, H, W) candidates, got {c.shape}")
        b = c.shape[0]
        row_rooms = _rows_rooms(rooms, b, self.n)
        f = self.floorplan.encode(_as_tensor(floorplans))
        d = f.shape[1]
        per_slot = []
        for i in range(self.n):
            imgs = c[:, :, i].reshape(b * self.k, *c.shape[3:])
            rr = [row_rooms[r][i] for r in range(b) for _ in range(self.k)]
            feats = self.photo.encode(Tensor(imgs), rr)
            per_slot.append(reshape(feats, (b, self.k, d)))
        cand = concat(per_slot, axis=2) if self.n > 1 else per_slot[0]
        return self.head.forward(concat([f, reshape(cand, (b, self.k * self.n * d))], axis=1))

    def predict(self, floorplans, candidates, rooms: RoomSpec) -> np.ndarray:
        return softmax_np(self.logits(floorplans, candidates, rooms).data.astype(np.float64), axis=1)


def build_model(spec: ModelSpec, rng: np.random.Generator) -> MatchModel:
    spec.problem.validate()
    kind = spec.problem.kind
    if kind == "pair":
        return PairModel(spec, rng)
    if kind == "set":
        return SetModel(spec, rng)
    return KWayModel(spec, rng)


# ---------------------------------------------------------------------------
# functional entry points


def set_score(model: SetModel, floorplans, photo_sets, rooms: RoomSpec) -> Tensor:
    return model.score(floorplans, photo_sets, rooms)


def kway_predict(model: KWayModel, floorplans, candidates, rooms: RoomSpec) -> np.ndarray:
    """Candidate probabilities (B, k), rows summing to 1."""
    return model.predict(floorplans, candidates, rooms)


def argmax_lowest(values: Sequence[float]) -> int:
    """Index of the maximum; ties go to the lowest index."""
    values = np.asarray(values)
    return int(np.flatnonzero(values == values.max())[0])


def solve_kway_with_pair_model(model: Union[PairModel, SetModel], floorplan, candidates,
                               rooms: Sequence[str]) -> int:
    """Evaluate the pair score once per candidate and pick the best.

    ``floorplan`` is (3,H,W); ``candidates`` is (k,3,h,w) for a pair model or
    (k,n,3,h,w) for a set model.
    """
    cands = np.asarray(candidates)
    k = cands.shape[0]
    if k == 1:
        return 0
    floors = np.repeat(np.asarray(floorplan)[None], k, axis=0)
    if isinstance(model, PairModel):
        scores = model.score(floors, cands, [rooms[0]] * k).data
    else:
        scores = model.score(floors, cands, rooms).data
    return argmax_lowest(scores)


def solve_smallk_from_probs(slot_probs: Sequence[float], k: int) -> int:
    """Candidate i owns slots ``i*m .. i*m+m-1`` (m = K/k); its probability is their sum."""
    p = np.asarray(slot_probs, dtype=np.float64)
    big = p.shape[0]
    if big % k:
        raise ValueError(f"K={big} is not divisible by k={k}")
    per = p.reshape(k, big // k).sum(axis=1)
    return argmax_lowest(per)


def duplicate_candidates(candidates: np.ndarray, big_k: int) -> np.ndarray:
    """(k, ...) candidates -> (K, ...) with each repeated K/k times in a block."""
    k = candidates.shape[0]
    if big_k % k:
        raise ValueError(f"K={big_k} is not divisible by k={k}")
    return np.repeat(candidates, big_k // k, axis=0)


def solve_smallk_with_bigk_model(model: KWayModel, floorplan, candidates, rooms: Sequence[str]) -> int:
    """Solve a k-way problem with a model trained at K >= k by duplicating candidates."""
    cands = np.asarray(candidates)
    big = model.k
    k = cands.shape[0]
    if big % k:
        raise ValueError(f"K={big} is not divisible by k={k}")
    if cands.ndim == 4:
        cands = cands[:, None]
    dup = duplicate_candidates(cands, big)
    probs = model.predict(np.asarray(floorplan)[None], dup[None], rooms)[0]
    return solve_smallk_from_probs(probs, k)
