"""Shared fixtures and the acceptance-criteria summary printed at the end of a run."""
import numpy as np
import pytest

from floormatch.encoders import EncoderConfig
from floormatch.harness import DataConfig, TrainConfig
from floormatch.matchers import MatchProblem, ModelSpec, build_model
from floormatch.synthgen import GeneratorSpec, build_dataset

TINY_GEN = GeneratorSpec(floorplan_size=32, photo_size=32)
NARROW_BLOCKS = ((4, 1), (4, 1), (6, 1), (6, 1))

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def tiny_config(**changes) -> TrainConfig:
    """Seconds-scale training budget on 32-pixel rasters."""
    base = TrainConfig(epochs=1, batch_size=4, feature_dim=8,
                       data=DataConfig(n_train=12, n_test=10, generator=TINY_GEN))
    return base.replace(**changes)


def narrow_model(problem=None, size=64, seed=0, feature_dim=6):
    """Untrained model with thin conv stacks (fast forward passes at full raster size)."""
    problem = problem or MatchProblem()
    enc = EncoderConfig(input_size=(size, size), conv_blocks=NARROW_BLOCKS, feature_dim=feature_dim)
    photo = EncoderConfig(input_size=(48, 48), conv_blocks=NARROW_BLOCKS, feature_dim=feature_dim)
    return build_model(ModelSpec(problem=problem, floorplan=enc, photo=photo), np.random.default_rng(seed))


@pytest.fixture(scope="session")
def tiny_ds():
    return build_dataset(5, TINY_GEN, n_train=12, n_test=10)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if passed else 'FAIL'} - {detail}")
