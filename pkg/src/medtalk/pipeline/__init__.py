"""Orchestration: configuration, adapters, checkpoints, training, inference, CLI."""
from .ablation import VARIANTS, derive_run, evaluate_base, evaluate_model, run_ablation
from .adapters import AdapterRegistry, mock_registry, resample_linear, tokens_to_frames
from .checkpoint import CheckpointSet
from .config import RunConfig, load_config
from .inference import GuidanceInput, MEDTalk, infer
from .training import Corpus, build_corpus, train_all

__all__ = ["VARIANTS", "derive_run", "evaluate_base", "evaluate_model", "run_ablation", "AdapterRegistry", "mock_registry",
           "resample_linear", "tokens_to_frames", "CheckpointSet", "RunConfig", "load_config", "GuidanceInput",
           "MEDTalk", "infer", "Corpus", "build_corpus", "train_all"]
