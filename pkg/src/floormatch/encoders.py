"""Mini-VGG floorplan and photograph encoders.

An encoder is a stack of conv blocks (3x3 conv + batch norm + relu,
repeated, then 2x2 max-pool) followed by one fully connected layer ``fc6``
(batch-normalised). Block outputs are
exposed as taps ``conv1``..``convB`` so photo features can be fused part way
through the network.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, concat, conv2d, linear, maxpool2x2, parameter, relu, reshape, take_rows
from .autodiff.module import BatchNorm, Module
from .errors import DimensionError

BANK_MODES = ("room_aware", "room_agnostic", "room_aware_fc")
NORMS = ("batch", "none")
INIT_SCHEMES = ("gaussian", "scaled")


@dataclass
class EncoderConfig:
    input_size: Tuple[int, int] = (64, 64)
    in_channels: int = 3
    conv_blocks: Tuple[Tuple[int, int], ...] = ((16, 1), (32, 1), (64, 1), (64, 1))
    feature_dim: int = 64
    init_sigma: float = 0.001
    # "gaussian": every weight from N(0, init_sigma^2);
    # "scaled": N(0, 2 / fan_in) for conv kernels and N(0, 1 / fan_in) for fc layers
    init: str = "scaled"
    # "batch": batch normalisation after every conv (before its relu) and on fc6
    norm: str = "batch"

    @property
    def stages(self) -> List[str]:
        return [f"conv{i + 1}" for i in range(len(self.conv_blocks))] + ["fc6"]

    def validate(self) -> None:
        h, w = self.input_size
        n = len(self.conv_blocks)
        if n == 0:
            raise DimensionError("encoder needs at least one conv block")
        if self.feature_dim <= 0 or self.in_channels <= 0:
            raise DimensionError("feature_dim and in_channels must be positive")
        if h % (2 ** n) or w % (2 ** n) or h < 2 ** n or w < 2 ** n:
            raise DimensionError(f"input {h}x{w} does not survive {n} 2x2 poolings")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"unknown init {self.init!r}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        for c, k in self.conv_blocks:
            if c <= 0 or k <= 0:
                raise DimensionError("conv block channels and conv counts must be positive")

    def tap_shape(self, stage: str, channels_in: Optional[int] = None) -> Tuple[int, ...]:
        """Per-sample shape of a tap (without batch dim)."""
        if stage == "image":
            return (channels_in or self.in_channels, *self.input_size)
        if stage == "fc6":
            return (self.feature_dim,)
        i = self.stages.index(stage)
        h, w = self.input_size
        return (self.conv_blocks[i][0], h // 2 ** (i + 1), w // 2 ** (i + 1))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["input_size"] = list(self.input_size)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["input_size"] = tuple(d["input_size"])
        d["conv_blocks"] = tuple(tuple(b) for b in d["conv_blocks"])
        return cls(**d)


def _normalizer(config: EncoderConfig, n_features: int) -> Optional[BatchNorm]:
    return BatchNorm(n_features) if config.norm == "batch" else None


def init_std(scheme: str, sigma: float, fan_in: int, conv: bool) -> float:
    """Standard deviation of a layer's initial weights under ``scheme``."""
    if scheme == "gaussian":
        return sigma
    return float(np.sqrt((2.0 if conv else 1.0) / fan_in))


def _gaussian(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    return rng.normal(0.0, sigma, size=shape).astype(np.float32)


class ConvStack(Module):
    """Conv blocks ``first``..``last`` (0-based, inclusive) of a config."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, first: int = 0,
                 last: Optional[int] = None, in_channels: Optional[int] = None):
        super().__init__()
        self.config = config
        self.first = first
        self.last = len(config.conv_blocks) - 1 if last is None else last
        cin = in_channels if in_channels is not None else (
            config.in_channels if first == 0 else config.conv_blocks[first - 1][0])
        self.in_channels = cin
        self.layers: List[List[Tuple[Tensor, Tensor, Optional[BatchNorm]]]] = []
        for b in range(self.first, self.last + 1):
            cout, nconv = config.conv_blocks[b]
            block = []
            for j in range(nconv):
                sigma = init_std(config.init, config.init_sigma, cin * 9, conv=True)
                w = self.add_param(f"conv{b + 1}_{j + 1}.weight", parameter(_gaussian(rng, (cout, cin, 3, 3), sigma)))
                bias = self.add_param(f"conv{b + 1}_{j + 1}.bias", parameter(np.zeros(cout, np.float32)))
                bn = _normalizer(config, cout)
                if bn is not None:
                    self.add_child(f"conv{b + 1}_{j + 1}_bn", bn)
                block.append((w, bias, bn))
                cin = cout
            self.layers.append(block)

    def forward(self, x: Tensor, taps: Optional[Dict[str, Tensor]] = None) -> Tensor:
        h = x
        for b, block in zip(range(self.first, self.last + 1), self.layers):
            for w, bias, bn in block:
                h = conv2d(h, w, bias, stride=1, pad=1)
                h = relu(bn.forward(h) if bn is not None else h)
            h = maxpool2x2(h)
            if taps is not None:
                taps[f"conv{b + 1}"] = h
        return h


class Encoder(Module):
    """Image (or fused tap) to feature vector.

    ``start_after`` names the stage whose output is the input (``None`` means
    raw images); ``stop`` names the last stage computed. ``convs`` lets several
    encoders alias one conv stack.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, start_after: Optional[str] = None,
                 stop: str = "fc6", in_channels: Optional[int] = None, convs: Optional[ConvStack] = None):
        super().__init__()
        config.validate()
        self.config = config
        stages = config.stages
        nblocks = len(config.conv_blocks)
        first = 0 if start_after is None else stages.index(start_after) + 1
        last = stages.index(stop)
        if last < first:
            raise ValueError(f"encoder range {start_after}->{stop} is empty")
        self.start_after = start_after
        self.stop = stop
        conv_last = min(last, nblocks - 1)
        if convs is None and first <= conv_last:
            convs = ConvStack(config, rng, first, conv_last, in_channels)
        self.convs = convs
        if convs is not None:
            self.add_child("convs", convs)
        self.fc6: Optional[Tuple[Tensor, Tensor]] = None
        self.fc6_bn: Optional[BatchNorm] = None
        if stop == "fc6":
            c, hh, ww = config.tap_shape(stages[nblocks - 1])
            if first == nblocks and in_channels:
                c = in_channels
            fan_in = c * hh * ww
            w = self.add_param("fc6.weight", parameter(_gaussian(
                rng, (config.feature_dim, fan_in), init_std(config.init, config.init_sigma, fan_in, conv=False))))
            b = self.add_param("fc6.bias", parameter(np.zeros(config.feature_dim, np.float32)))
            self.fc6 = (w, b)
            self.fc6_bn = _normalizer(config, config.feature_dim)
            if self.fc6_bn is not None:
                self.add_child("fc6_bn", self.fc6_bn)

    def forward(self, x, taps: Optional[Dict[str, Tensor]] = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        h = self.convs.forward(x, taps) if self.convs is not None else x
        if self.fc6 is not None:
            h = linear(reshape(h, (h.shape[0], -1)), *self.fc6)
            if self.fc6_bn is not None:
                h = self.fc6_bn.forward(h)
            if taps is not None:
                taps["fc6"] = h
        return h

    def encode(self, images, return_taps: bool = False):
        """Features (N, D); with ``return_taps`` also the dict of block outputs."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        if self.start_after is None:
            expected = (self.convs.in_channels if self.convs is not None else self.config.in_channels,
                        *self.config.input_size)
            if x.ndim != 4 or tuple(x.shape[1:]) != tuple(expected):
                raise DimensionError(f"encoder expects (N, {expected}), got {x.shape}")
        taps: Dict[str, Tensor] = {}
        out = self.forward(x, taps)
        return (out, taps) if return_taps else out


def build_encoder(config: EncoderConfig, rng: np.random.Generator, **kwargs) -> Encoder:
    return Encoder(config, rng, **kwargs)


class EncoderBank(Module):
    """room type -> encoder, with independent, fully shared, or conv-shared weights."""

    def __init__(self, mode: str, room_types: Sequence[str], config: EncoderConfig,
                 rng: np.random.Generator, stop: str = "fc6", in_channels: Optional[int] = None):
        super().__init__()
        if mode not in BANK_MODES:
            raise ValueError(f"unknown bank mode {mode!r}")
        room_types = list(room_types)
        if not room_types:
            raise ValueError("encoder bank needs at least one room type")
        self.mode = mode
        self.room_types = room_types
        self.encoders: Dict[str, Encoder] = {}
        if mode == "room_agnostic":
            enc = self.add_child("shared", Encoder(config, rng, stop=stop, in_channels=in_channels))
            self.encoders = {r: enc for r in room_types}
        elif mode == "room_aware":
            for r in room_types:
                self.encoders[r] = self.add_child(r, Encoder(config, rng, stop=stop, in_channels=in_channels))
        else:
            if stop != "fc6":
                raise ValueError("room_aware_fc banks need the fc6 stage")
            convs = self.add_child("shared", ConvStack(config, rng, in_channels=in_channels))
            for r in room_types:
                self.encoders[r] = self.add_child(r, Encoder(config, rng, convs=convs))

    def __getitem__(self, room_type: str) -> Encoder:
        return self.encoders[room_type]

    def encode(self, images, rooms: Sequence[str]) -> Tensor:
        """Encode rows of ``images``, row i with the encoder of ``rooms[i]``."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        rooms = list(rooms)
        if len(rooms) != x.shape[0]:
            raise DimensionError(f"{len(rooms)} room labels for {x.shape[0]} images")
        distinct = sorted(set(rooms), key=rooms.index)
        if len(distinct) == 1 or self.mode == "room_agnostic":
            return self.encoders[distinct[0]].encode(x)
        parts, order = [], []
        for r in distinct:
            idx = [i for i, q in enumerate(rooms) if q == r]
            parts.append(self.encoders[r].encode(take_rows(x, idx)))
            order.extend(idx)
        inverse = np.empty(len(order), dtype=np.intp)
        inverse[np.asarray(order)] = np.arange(len(order))
        return take_rows(concat(parts, axis=0), inverse)


def encoder_bank(mode: str, room_types: Iterable[str], config: EncoderConfig,
                 rng: np.random.Generator, **kwargs) -> EncoderBank:
    return EncoderBank(mode, list(room_types), config, rng, **kwargs)
