"""Synthetic apartments with planted cross-modal ground truth."""
from .generator import (
    FILLER_TYPE, GENERATOR_VERSION, LEGAL_OBJECTS, OBJECT_KINDS, ROOM_TYPES, Apartment,
    GeneratorSpec, ObjectSpec, Room, generate_apartment, toggle_object,
)
from .dataset import (
    Dataset, DatasetManifest, KwaySample, PairSample, apartment_seed, build_dataset,
    load_apartment, load_dataset, make_kway_sample, make_pair_sample, save_apartment, save_dataset,
)

__all__ = [
    "FILLER_TYPE", "GENERATOR_VERSION", "LEGAL_OBJECTS", "OBJECT_KINDS", "ROOM_TYPES",
    "Apartment", "GeneratorSpec", "ObjectSpec", "Room", "generate_apartment", "toggle_object",
    "Dataset", "DatasetManifest", "KwaySample", "PairSample", "apartment_seed", "build_dataset",
    "load_apartment", "load_dataset", "make_kway_sample", "make_pair_sample", "save_apartment",
    "save_dataset",
]
