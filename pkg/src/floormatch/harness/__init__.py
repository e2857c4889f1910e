"""Training, evaluation and experiment drivers."""
from .config import DataConfig, TrainConfig, stream_rng
from .evaluate import EvalReport, chance_level, evaluate, predict_cases, summarize, make_test_cases
from .train import TrainResult, get_dataset, load_model, sample_case, save_model, train

__all__ = [
    "DataConfig", "TrainConfig", "stream_rng", "EvalReport", "chance_level", "evaluate",
    "predict_cases", "summarize", "make_test_cases", "TrainResult", "get_dataset", "load_model",
    "sample_case", "save_model", "train",
]
