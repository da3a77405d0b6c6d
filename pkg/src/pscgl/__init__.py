"""Continual graph classification with perturbed-confidence replay sampling,
motif-based sparsification, embedding-consistency training, and a backdoor
attack/defense harness."""

from .backdoor import BackdoorSpec, TriggerPattern, attack_success_rate, inject_trigger, make_trigger, poison_task
from .continual import (
    AccuracyMatrix,
    MethodSpec,
    RunResult,
    accuracy,
    average_forgetting,
    average_performance,
    evaluate,
    run_sequence,
    train_task,
)
from .data import (
    Dataset,
    Graph,
    TaskSequence,
    TaskSplit,
    build_task_sequence,
    filter_small_classes,
    load_tudataset,
    save_tudataset,
)
from .perturb import PerturbSpec, perturb_binary, perturb_continuous, perturb_graph, select_perturb_param
from .replay import (
    ReplayBuffer,
    ScoredGraph,
    mean_perturbed_confidence,
    sample_mc,
    sample_perturbed,
    sample_random,
)
from .sparsify import sparsify, triangle_participation
from .synth import make_corpus

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix",
    "BackdoorSpec",
    "Dataset",
    "Graph",
    "MethodSpec",
    "PerturbSpec",
    "ReplayBuffer",
    "RunResult",
    "ScoredGraph",
    "TaskSequence",
    "TaskSplit",
    "TriggerPattern",
    "accuracy",
    "attack_success_rate",
    "average_forgetting",
    "average_performance",
    "build_task_sequence",
    "evaluate",
    "filter_small_classes",
    "inject_trigger",
    "load_tudataset",
    "make_corpus",
    "make_trigger",
    "mean_perturbed_confidence",
    "perturb_binary",
    "perturb_continuous",
    "perturb_graph",
    "poison_task",
    "run_sequence",
    "sample_mc",
    "sample_perturbed",
    "sample_random",
    "save_tudataset",
    "select_perturb_param",
    "sparsify",
    "train_task",
    "triangle_participation",
]
