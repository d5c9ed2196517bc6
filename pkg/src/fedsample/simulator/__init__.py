"""FedAvg simulator with independent client sampling."""

from fedsample.simulator.data import (
    Dataset,
    client_sizes,
    concat,
    load_idx,
    make_synthetic,
    partition_dirichlet,
    train_test_split,
)
from fedsample.simulator.tasks import MLP, QuadraticTask, SoftmaxRegression, make_task
from fedsample.simulator.training import (
    Federation,
    RoundOutcome,
    StopRule,
    TrainConfig,
    TrainingTrace,
    aggregate,
    local_update,
    run_training,
)

__all__ = [
    "Dataset", "Federation", "client_sizes", "concat", "MLP", "QuadraticTask", "RoundOutcome", "SoftmaxRegression",
    "StopRule", "TrainConfig", "TrainingTrace", "aggregate", "load_idx", "local_update",
    "make_synthetic", "make_task", "partition_dirichlet", "run_training", "train_test_split",
]
