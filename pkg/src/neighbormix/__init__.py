"""Retrieval-augmented classification over key-value vector memories."""

from .aggregate import (
    HyperParams,
    Prediction,
    argmax_label,
    combine,
    interpolate,
    knn_distribution,
    predict,
    predict_combined,
)
from .data_model import (
    BaseProbSet,
    DatasetManifest,
    EmbeddingSet,
    LabeledSet,
    LabelVocab,
    load_base_probs,
    load_embeddings,
    load_labeled_set,
    load_manifest,
    write_base_probs,
    write_embeddings,
    write_labels,
    write_manifest,
)
from .errors import ComputeError, FormatError, NeighborMixError, ValidationError
from .memory import MemoryStore, build_memory, load_memory, save_memory
from .metrics import EvalReport, evaluate, longtail_report
from .search import DistanceKind, Neighbor, NeighborList, batch_search, search
from .synth import SynthSpec, centroid_base_probs, generate, subsample
from .tune import SearchSpace, TuneResult, greedy_search, tune_alpha

__version__ = "0.1.0"
