"""Training configuration and random-stream bookkeeping."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..encoders import INIT_SCHEMES, NORMS, EncoderConfig
from ..errors import ConfigError, FloormatchError
from ..matchers import MatchProblem, ModelSpec
from ..synthgen.generator import GeneratorSpec

# Stream ids keep model init, training batches and test sampling disjoint.
INIT_STREAM = 0
TRAIN_STREAM = 1
TEST_STREAM = 2
NOISE_STREAM = 3

FREEZE_MODES = ("none", "encoders")


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass
class DataConfig:
    """Where the apartments come from: a manifest on disk or in-memory generation."""

    manifest: Optional[str] = None
    seed: Optional[int] = None  # None: use the training seed
    n_train: int = 2000
    n_test: int = 500
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)

    def errors(self) -> List[Tuple[str, str]]:
        errs = []
        if self.manifest is None:
            if self.n_train < 2:
                errs.append(("data.n_train", f"need at least 2 training apartments, got {self.n_train}"))
            if self.n_test < 2:
                errs.append(("data.n_test", f"need at least 2 test apartments, got {self.n_test}"))
        try:
            self.generator.validate()
        except (ValueError, TypeError, FloormatchError) as exc:
            errs.append(("data.generator", str(exc)))
        return errs

    def to_dict(self) -> dict:
        return {"manifest": self.manifest, "seed": self.seed, "n_train": self.n_train,
                "n_test": self.n_test, "generator": self.generator.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        d = dict(d)
        if "generator" in d:
            d["generator"] = GeneratorSpec.from_dict(d["generator"])
        return cls(**d)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    momentum: float = 0.9
    # scores are tanh-bounded, so a margin of 1 can never be met and drives them into saturation
    margin: float = 0.5
    seed: int = 0
    problem: MatchProblem = field(default_factory=MatchProblem)
    feature_dim: int = 64
    hidden: Optional[int] = None
    init: str = "scaled"
    norm: str = "batch"
    bank_mode: Optional[str] = None
    untied_score_weights: bool = False
    freeze: str = "none"
    balanced_batches: bool = True
    data: DataConfig = field(default_factory=DataConfig)

    def errors(self) -> List[Tuple[str, str]]:
        errs = []
        if self.epochs < 1:
            errs.append(("train.epochs", f"must be >= 1, got {self.epochs}"))
        if self.batch_size < 1:
            errs.append(("train.batch_size", f"must be >= 1, got {self.batch_size}"))
        if self.margin <= 0:
            errs.append(("train.margin", f"must be > 0, got {self.margin}"))
        if self.learning_rate <= 0:
            errs.append(("train.learning_rate", f"must be > 0, got {self.learning_rate}"))
        if self.optimizer not in ("adam", "sgd_momentum"):
            errs.append(("train.optimizer", f"must be adam or sgd_momentum, got {self.optimizer!r}"))
        if self.freeze not in FREEZE_MODES:
            errs.append(("train.freeze", f"must be one of {list(FREEZE_MODES)}, got {self.freeze!r}"))
        if self.init not in INIT_SCHEMES:
            errs.append(("train.init", f"must be one of {list(INIT_SCHEMES)}, got {self.init!r}"))
        if self.norm not in NORMS:
            errs.append(("train.norm", f"must be one of {list(NORMS)}, got {self.norm!r}"))
        if self.bank_mode not in (None, "room_aware", "room_agnostic", "room_aware_fc"):
            errs.append(("train.bank_mode", f"unknown bank mode {self.bank_mode!r}"))
        if self.feature_dim < 1:
            errs.append(("train.feature_dim", f"must be >= 1, got {self.feature_dim}"))
        errs.extend(self.problem.errors())
        errs.extend(self.data.errors())
        if self.problem.kind == "kway" and self.data.manifest is None:
            for split, n in (("n_train", self.data.n_train), ("n_test", self.data.n_test)):
                if n < self.problem.k:
                    errs.append((f"data.{split}", f"k={self.problem.k} exceeds {split}={n}"))
        return errs

    def validate(self) -> "TrainConfig":
        errs = self.errors()
        if errs:
            raise ConfigError(errs)
        return self

    def model_spec(self) -> ModelSpec:
        gen = self.data.generator
        floor = EncoderConfig(input_size=(gen.floorplan_size, gen.floorplan_size),
                              feature_dim=self.feature_dim, init=self.init, norm=self.norm)
        photo = EncoderConfig(input_size=(gen.photo_size, gen.photo_size),
                              feature_dim=self.feature_dim, init=self.init, norm=self.norm)
        return ModelSpec(problem=self.problem, floorplan=floor, photo=photo, hidden=self.hidden,
                         bank_mode=self.bank_mode, untied_score_weights=self.untied_score_weights)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "optimizer": self.optimizer,
            "learning_rate": self.learning_rate, "betas": list(self.betas), "momentum": self.momentum,
            "margin": self.margin, "seed": self.seed, "problem": self.problem.to_dict(),
            "feature_dim": self.feature_dim, "hidden": self.hidden, "init": self.init,
            "norm": self.norm,
            "bank_mode": self.bank_mode, "untied_score_weights": self.untied_score_weights,
            "freeze": self.freeze, "balanced_batches": self.balanced_batches, "data": self.data.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "problem" in d:
            d["problem"] = MatchProblem.from_dict(d["problem"])
        if "data" in d:
            d["data"] = DataConfig.from_dict(d["data"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)
