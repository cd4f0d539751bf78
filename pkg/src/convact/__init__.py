"""Speech-act tagging of asynchronous conversations with hierarchical LSTMs and adversarial adaptation."""

from .checkpoint import Checkpoint, load_model, save_model
from .corpus import Conversation, parse_corpus, write_corpus
from .metrics import RunReport, aggregate, macro_f1
from .model import ModelConfig, SpeechActTagger
from .output import TAGS, ActTag
from .synth import SynthProfile, synth_generate
from .training import Pools, TrainConfig, evaluate, fit, train

__all__ = [
    "ActTag", "Checkpoint", "Conversation", "ModelConfig", "Pools", "RunReport", "SpeechActTagger",
    "SynthProfile", "TAGS", "TrainConfig", "aggregate", "evaluate", "fit", "load_model", "macro_f1",
    "parse_corpus", "save_model", "synth_generate", "train", "write_corpus",
]
__version__ = "0.1.0"
