"""Federated training with independent Bernoulli client sampling.

Each round every client flips its own coin with probability ``q_n``. Sampled
clients run local SGD from the current global model and report
``g_n = (x - x_local) / eta``; the server applies the inverse-probability
weighted update ``x <- x - sum_{sampled} a_n (eta / q_n) g_n``, which equals
the full-participation update in expectation. Round durations come from the
same-finish-time bandwidth model.

Randomness is split into independent streams derived from the master seed:
participation coins, per-(client, round) minibatch order, and model init.
Changing ``q`` therefore never changes which minibatches a client would draw
in a given round.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fedsample.convergence import SMOOTHING_WINDOW, first_crossing, smoothed
from fedsample.errors import NonFinite
from fedsample.simulator.data import Dataset, concat
from fedsample.system import SamplingVector, SystemModel, as_probs
from fedsample.timing import realized_round_time

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("round", "wallclock_s", "cumulative_s", "n_participants", "loss", "grad_norm_sq")

_STREAM_SAMPLING, _STREAM_DATA, _STREAM_INIT = 0, 1, 2


@dataclass(frozen=True)
class TrainConfig:
    """Local-training hyperparameters (defaults: batch 32, 10 local steps)."""

    eta: float = 0.01
    local_iters: int = 10
    batch: int = 32
    eval_accuracy: bool = False

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.local_iters < 1 or self.batch < 1:
            raise ValueError("local_iters and batch must be >= 1")


@dataclass(frozen=True)
class StopRule:
    """When to end training.

    Loss and accuracy targets are checked on a trailing moving average of
    ``window`` rounds; the gradient-norm target is checked on the running mean
    of ``||grad F||^2`` over all rounds so far.
    """

    max_rounds: int = 1000
    target_loss: float | None = None
    target_grad_norm_sq: float | None = None
    target_accuracy: float | None = None
    window: int = SMOOTHING_WINDOW


@dataclass(frozen=True)
class RoundOutcome:
    round: int
    participants: tuple[int, ...]
    duration: float
    global_loss: float
    grad_norm_sq: float
    accuracy: float | None = None


@dataclass
class TrainingTrace:
    outcomes: list[RoundOutcome] = field(default_factory=list)
    cumulative_time: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    stopped_by: str = "max_rounds"

    def append(self, outcome: RoundOutcome) -> None:
        prev = self.cumulative_time[-1] if self.cumulative_time else 0.0
        self.outcomes.append(outcome)
        self.cumulative_time.append(prev + outcome.duration)

    def __len__(self) -> int:
        return len(self.outcomes)

    @property
    def losses(self) -> np.ndarray:
        return np.array([o.global_loss for o in self.outcomes])

    @property
    def durations(self) -> np.ndarray:
        return np.array([o.duration for o in self.outcomes])

    @property
    def grad_norm_sqs(self) -> np.ndarray:
        return np.array([o.grad_norm_sq for o in self.outcomes])

    @property
    def total_time(self) -> float:
        return self.cumulative_time[-1] if self.cumulative_time else 0.0

    def rounds_to_loss(self, target: float, window: int = SMOOTHING_WINDOW) -> int | None:
        return first_crossing(self.losses, target, window)

    def rounds_to_accuracy(self, target: float, window: int = SMOOTHING_WINDOW) -> int | None:
        acc = np.array([np.nan if o.accuracy is None else o.accuracy for o in self.outcomes])
        hits = np.flatnonzero(smoothed(acc, window) >= target)
        return int(hits[0]) + 1 if hits.size else None

    def time_at(self, rounds: int | None) -> float:
        return float("inf") if rounds is None else self.cumulative_time[rounds - 1]

    def write_csv(self, path: str | Path) -> None:
        with_acc = any(o.accuracy is not None for o in self.outcomes)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS + (("accuracy",) if with_acc else ()))
            for o, cum in zip(self.outcomes, self.cumulative_time):
                row = [o.round, repr(o.duration), repr(cum), len(o.participants),
                       repr(o.global_loss), repr(o.grad_norm_sq)]
                if with_acc:
                    row.append("" if o.accuracy is None else repr(o.accuracy))
                w.writerow(row)


class Federation:
    """The fleet, the task and each client's local data.

    Global metrics use the union of client data with per-sample weight
    ``a_n / |D_n|``, i.e. exactly ``F(x) = sum_n a_n F_n(x)``.
    """

    def __init__(self, model: SystemModel, task, client_data: Sequence[Dataset],
                 test_data: Dataset | None = None) -> None:
        if len(client_data) != model.n:
            raise ValueError(f"{len(client_data)} client datasets for {model.n} clients")
        if any(len(d) < 1 for d in client_data):
            raise ValueError("every client needs at least one sample")
        self.model = model
        self.task = task
        self.client_data = list(client_data)
        self.test_data = test_data
        self.union = concat(self.client_data)
        self.sample_weights = np.concatenate(
            [np.full(len(d), a / len(d)) for d, a in zip(self.client_data, model.data_weights)]
        )

    def global_metrics(self, params: np.ndarray) -> tuple[float, float]:
        loss, grad = self.task.loss_grad(params, self.union.features, self.union.labels,
                                         self.sample_weights)
        return loss, float(grad @ grad)

    def test_accuracy(self, params: np.ndarray) -> float:
        data = self.test_data if self.test_data is not None else self.union
        return float(np.mean(self.task.predict(params, data.features) == data.labels))


def local_update(task, client_data: Dataset, x: np.ndarray, eta: float, local_iters: int,
                 batch: int, rng: np.random.Generator) -> np.ndarray:
    """Run ``local_iters`` minibatch SGD steps from ``x``; return ``(x - x_end) / eta``.

    A batch at least as large as the client's data uses the full local set.
    """
    n = len(client_data)
    X, y = client_data.features, client_data.labels
    local = x.copy()
    for _ in range(local_iters):
        if batch >= n:
            xb, yb = X, y
        else:
            idx = rng.choice(n, size=batch, replace=False)
            xb, yb = X[idx], y[idx]
        _, grad = task.loss_grad(local, xb, yb)
        local -= eta * grad
    return (x - local) / eta


def aggregate(x: np.ndarray, contributions: Sequence[tuple[int, np.ndarray]],
              q: SamplingVector | np.ndarray, model: SystemModel, eta: float) -> np.ndarray:
    """Inverse-probability weighted server step.

    ``contributions`` holds ``(client id, g_n)`` for sampled clients only.
    They are summed in fleet order so the result does not depend on the
    order in which clients reported.

    Raises:
        KeyError: If a contribution names a client outside the fleet.
    """
    q = as_probs(q)
    a = model.data_weights
    lookup = {int(cid): i for i, cid in enumerate(model.ids)}
    step = np.zeros_like(x)
    for n, g in sorted(((lookup[int(cid)], g) for cid, g in contributions), key=lambda item: item[0]):
        step += (a[n] * eta / q[n]) * g
    return x - step


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def run_training(fed: Federation, q: SamplingVector | np.ndarray, config: TrainConfig,
                 stop: StopRule, seed: int = 0) -> TrainingTrace:
    """Train with independent sampling until ``stop`` fires.

    Raises:
        NonFinite: If the global loss or parameters stop being finite.
    """
    q = SamplingVector(as_probs(q)).probs
    model, task = fed.model, fed.task
    if len(q) != model.n:
        raise ValueError(f"q has length {len(q)}, fleet has {model.n} clients")
    ids = model.ids
    sampling_rng = _stream(seed, _STREAM_SAMPLING)
    x = task.init_params(_stream(seed, _STREAM_INIT))
    trace = TrainingTrace(config={"seed": seed, "q": q.tolist(), **asdict(config), **asdict(stop)})
    grad_sum = 0.0

    for r in range(1, stop.max_rounds + 1):
        sampled = np.flatnonzero(sampling_rng.random(model.n) < q)
        contributions = []
        for n in sampled:
            rng = _stream(seed, _STREAM_DATA, int(ids[n]), r)
            g = local_update(task, fed.client_data[n], x, config.eta, config.local_iters,
                             config.batch, rng)
            contributions.append((int(ids[n]), g))
        timing = realized_round_time(model, ids[sampled])
        x = aggregate(x, contributions, q, model, config.eta)
        loss, gnorm = fed.global_metrics(x)
        if not (np.isfinite(loss) and np.all(np.isfinite(x))):
            raise NonFinite(f"round {r}: loss={loss}; reduce eta")
        acc = fed.test_accuracy(x) if config.eval_accuracy or stop.target_accuracy is not None else None
        trace.append(RoundOutcome(r, tuple(int(i) for i in ids[sampled]), timing.duration,
                                  loss, gnorm, acc))
        grad_sum += gnorm
        if _should_stop(trace, stop, grad_sum / r):
            trace.stopped_by = "target"
            break
    logger.debug("training stopped after %d rounds (%s)", len(trace), trace.stopped_by)
    return trace


def _should_stop(trace: TrainingTrace, stop: StopRule, mean_grad: float) -> bool:
    tail = trace.outcomes[-stop.window:]
    if stop.target_loss is not None:
        if np.mean([o.global_loss for o in tail]) <= stop.target_loss:
            return True
    if stop.target_accuracy is not None:
        if np.mean([o.accuracy for o in tail]) >= stop.target_accuracy:
            return True
    if stop.target_grad_norm_sq is not None and mean_grad <= stop.target_grad_norm_sq:
        return True
    return False
