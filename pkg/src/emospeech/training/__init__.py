from .batching import Batch, collate, make_batches
from .corpus import CorpusSpec, Utterance, generate_corpus, load_corpus, render_utterance, save_corpus
from .trainer import (
    TrainConfig,
    TrainingError,
    TrainResult,
    TrainState,
    evaluate,
    load_checkpoint,
    new_state,
    save_checkpoint,
    train,
    train_step,
)

__all__ = [
    "Batch", "CorpusSpec", "TrainConfig", "TrainResult", "TrainState", "TrainingError", "Utterance", "collate",
    "evaluate", "generate_corpus", "load_checkpoint", "load_corpus", "make_batches", "new_state", "render_utterance",
    "save_checkpoint", "save_corpus", "train", "train_step",
]
