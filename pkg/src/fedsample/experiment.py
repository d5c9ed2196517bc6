"""End-to-end pipeline: pilots, constant fit, optimization, scheme comparison.

For every master seed the pipeline builds the federated dataset, runs the two
pilots, fits ``alpha`` and ``beta``, optimizes ``q*`` and trains the proposed
vector next to the requested baselines until the target. Pilot rounds are
reported separately and are not added to the proposed scheme's time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from fedsample.convergence import ConvergenceConstants, estimate_constants, smoothed
from fedsample.errors import ConfigError, FedSampleError, PilotTooShort
from fedsample.optimizer import OptimizerConfig, OptimizerResult, optimize
from fedsample.simulator.data import (
    Dataset,
    load_idx,
    make_synthetic,
    partition_dirichlet,
    train_test_split,
)
from fedsample.simulator.tasks import make_task
from fedsample.simulator.training import Federation, StopRule, TrainConfig, TrainingTrace, run_training
from fedsample.system import SamplingVector, SystemModel
from fedsample.timing import realized_round_time

logger = logging.getLogger(__name__)

BASELINES = ("full", "fixed", "uniform", "weighted")
DEFAULT_FIXED_P = 0.2

# master-seed sub-streams for experiment-level randomness
_DATA_STREAM, _PARTITION_STREAM, _SPLIT_STREAM = 10, 11, 12


def baseline_q(kind: str, model: SystemModel, p: float = DEFAULT_FIXED_P) -> SamplingVector:
    """Reference sampling vectors: full, fixed(p), uniform (1/N), weighted (a_n)."""
    n = model.n
    if kind == "full":
        return SamplingVector(np.ones(n))
    if kind == "fixed":
        if not 0 < p <= 1:
            raise ConfigError(f"fixed sampling needs p in (0, 1], got {p}")
        return SamplingVector(np.full(n, float(p)))
    if kind == "uniform":
        return SamplingVector(np.full(n, 1.0 / n))
    if kind == "weighted":
        return SamplingVector(np.clip(np.asarray(model.data_weights, dtype=float), np.finfo(float).tiny, 1.0))
    raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINES}")


@dataclass(frozen=True)
class TaskSpec:
    """Learning task, data and local-training settings."""

    kind: str = "logistic"
    n_features: int = 20
    n_classes: int = 10
    hidden: int = 32
    class_sep: float = 0.3
    l2: float = 0.0
    eta: float = 0.03
    local_iters: int = 10
    batch: int = 32
    concentration: float = 0.8
    test_fraction: float = 0.1
    images: str | None = None
    labels: str | None = None

    def train_config(self, eval_accuracy: bool = False) -> TrainConfig:
        return TrainConfig(self.eta, self.local_iters, self.batch, eval_accuracy)


@dataclass(frozen=True)
class Target:
    kind: str = "loss"
    value: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("loss", "accuracy", "grad_norm_sq"):
            raise ConfigError(f"unknown target kind {self.kind!r}")

    def stop_rule(self, max_rounds: int) -> StopRule:
        key = {"loss": "target_loss", "accuracy": "target_accuracy",
               "grad_norm_sq": "target_grad_norm_sq"}[self.kind]
        return StopRule(max_rounds=max_rounds, **{key: self.value})


@dataclass
class ExperimentPlan:
    fleet: SystemModel
    task: TaskSpec = field(default_factory=TaskSpec)
    baselines: tuple[str, ...] = BASELINES
    fixed_p: float = DEFAULT_FIXED_P
    target: Target = field(default_factory=Target)
    seeds: tuple[int, ...] = (0, 1, 2)
    pilot_rounds: int = 50
    pilot_cap_factor: int = 50
    max_rounds: int = 5000
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    bandwidth_multipliers: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("an experiment needs at least one seed")
        for b in self.baselines:
            if b not in BASELINES:
                raise ConfigError(f"unknown baseline {b!r}; expected one of {BASELINES}")
        if self.pilot_rounds < 1 or self.pilot_cap_factor < 1 or self.max_rounds < 1:
            raise ConfigError("pilot_rounds, pilot_cap_factor and max_rounds must be >= 1")


@dataclass
class PilotResult:
    constants: ConvergenceConstants
    F_s: float
    full: TrainingTrace
    uniform: TrainingTrace

    @property
    def rounds(self) -> int:
        return len(self.full) + len(self.uniform)

    @property
    def time(self) -> float:
        return self.full.total_time + self.uniform.total_time


@dataclass
class SchemeRun:
    scheme: str
    seed: int
    q: SamplingVector
    rounds: int | None
    time: float
    trace: TrainingTrace = field(repr=False)
    f_tot: float = 0.0

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "f_tot": self.f_tot,
            "rounds_to_target": self.rounds,
            "time_to_target_s": None if math.isinf(self.time) else self.time,
            "rounds_run": len(self.trace),
            "expected_participants": float(self.q.probs.sum()),
        }


def build_federation(task: TaskSpec, model: SystemModel, seed: int) -> Federation:
    """Data for one master seed: generate (or load), split off a test set, partition."""
    n_train = int(model.data_sizes.sum())
    if task.images and task.labels:
        data = load_idx(task.images, task.labels)
        n_features, n_classes = data.features.shape[1], data.num_classes
    else:
        n_total = int(round(n_train / (1.0 - task.test_fraction)))
        data = make_synthetic(n_total, task.n_features, task.n_classes, task.class_sep,
                              seed=_sub_seed(seed, _DATA_STREAM))
        n_features, n_classes = task.n_features, task.n_classes
    train, test = train_test_split(data, task.test_fraction, _sub_seed(seed, _SPLIT_STREAM))
    parts = partition_dirichlet(train, model, task.concentration, seed=_sub_seed(seed, _PARTITION_STREAM))
    return Federation(model, make_task(task.kind, n_features, n_classes, task.hidden, task.l2), parts, test)


def _sub_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def with_bandwidth(fed: Federation, total_bandwidth: float) -> Federation:
    """Same data and task on a fleet with a different bandwidth budget."""
    clone = object.__new__(Federation)
    clone.__dict__.update(fed.__dict__)
    clone.model = fed.model.with_bandwidth(total_bandwidth)
    return clone


def retime(trace: TrainingTrace, model: SystemModel) -> TrainingTrace:
    """Recompute round durations of ``trace`` for another bandwidth budget.

    Valid because bandwidth changes timing only, never the training dynamics.
    """
    out = TrainingTrace(config={**trace.config, "retimed_f_tot": model.total_bandwidth},
                        stopped_by=trace.stopped_by)
    for o in trace.outcomes:
        duration = realized_round_time(model, o.participants).duration
        out.append(replace(o, duration=duration))
    return out


def run_pilot(fed: Federation, task: TaskSpec, seed: int, pilot_rounds: int = 50,
              cap_factor: int = 50) -> PilotResult:
    """Full sampling for ``pilot_rounds`` fixes F_s; uniform then trains until F_s."""
    cfg = task.train_config()
    model = fed.model
    full = run_training(fed, np.ones(model.n), cfg, StopRule(max_rounds=pilot_rounds), seed)
    F_s = float(smoothed(full.losses)[-1])
    uniform = run_training(fed, np.full(model.n, 1.0 / model.n), cfg,
                           StopRule(max_rounds=cap_factor * pilot_rounds, target_loss=F_s), seed)
    if uniform.stopped_by != "target":
        raise PilotTooShort(f"uniform pilot did not reach F_s={F_s:.6g} within "
                            f"{cap_factor * pilot_rounds} rounds")
    return PilotResult(estimate_constants(uniform, full, F_s, model), F_s, full, uniform)


def _rounds_to_target(trace: TrainingTrace, target: Target) -> int | None:
    if trace.stopped_by != "target":
        return None
    return len(trace)


def run_scheme(fed: Federation, scheme: str, q: SamplingVector, task: TaskSpec, target: Target,
               max_rounds: int, seed: int) -> SchemeRun:
    trace = run_training(fed, q, task.train_config(), target.stop_rule(max_rounds), seed)
    rounds = _rounds_to_target(trace, target)
    return SchemeRun(scheme, seed, q, rounds, trace.time_at(rounds), trace, fed.model.total_bandwidth)


@dataclass
class SeedResult:
    seed: int
    pilot: PilotResult
    optimizer: OptimizerResult
    runs: dict[str, SchemeRun]
    sweep: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        p = self.pilot
        return {
            "seed": self.seed,
            "constants": p.constants.to_dict(),
            "F_s": p.F_s,
            "pilot_rounds": p.rounds,
            "pilot_time_s": p.time,
            "optimizer": self.optimizer.to_dict(),
            "runs": {k: r.to_dict() for k, r in self.runs.items()},
            "sweep": self.sweep,
        }


def _stage(stage: str, exc: FedSampleError) -> FedSampleError:
    exc.stage = stage
    return exc


def run_seed(plan: ExperimentPlan, seed: int) -> SeedResult:
    model = plan.fleet
    try:
        fed = build_federation(plan.task, model, seed)
    except (FedSampleError, ValueError) as exc:
        raise _stage("data", exc if isinstance(exc, FedSampleError) else ConfigError(str(exc)))
    try:
        pilot = run_pilot(fed, plan.task, seed, plan.pilot_rounds, plan.pilot_cap_factor)
    except FedSampleError as exc:
        raise _stage("pilot", exc)
    try:
        opt = optimize(pilot.constants, model, plan.optimizer)
    except FedSampleError as exc:
        raise _stage("optimize", exc)
    logger.info("seed %d: alpha=%.4g beta=%.4g, E[participants]=%.3f", seed,
                pilot.constants.alpha, pilot.constants.beta, opt.q_star.probs.sum())

    schemes = {"proposed": opt.q_star}
    for b in plan.baselines:
        schemes[b] = baseline_q(b, model, plan.fixed_p)
    runs = {}
    try:
        for name, q in schemes.items():
            runs[name] = run_scheme(fed, name, q, plan.task, plan.target, plan.max_rounds, seed)
            logger.info("seed %d %-9s rounds=%s time=%.1f", seed, name, runs[name].rounds, runs[name].time)
    except FedSampleError as exc:
        raise _stage(f"train:{name}", exc)

    result = SeedResult(seed, pilot, opt, runs)
    if plan.bandwidth_multipliers:
        result.sweep = _bandwidth_sweep(plan, fed, pilot.constants, runs, seed)
    return result


def _bandwidth_sweep(plan: ExperimentPlan, fed: Federation, consts: ConvergenceConstants,
                     runs: dict[str, SchemeRun], seed: int) -> list[dict]:
    """Re-optimize and rerun the proposed scheme at scaled bandwidths.

    The full-sampling trace is reused with recomputed round times; the pilot
    fit does not depend on bandwidth.
    """
    base_f = fed.model.total_bandwidth
    full = runs.get("full")
    out = []
    for mult in plan.bandwidth_multipliers:
        fed_m = with_bandwidth(fed, base_f * mult)
        try:
            opt = optimize(consts, fed_m.model, plan.optimizer)
            proposed = run_scheme(fed_m, "proposed", opt.q_star, plan.task, plan.target,
                                  plan.max_rounds, seed)
            if full is None:
                full_m = run_scheme(fed_m, "full", baseline_q("full", fed_m.model), plan.task,
                                    plan.target, plan.max_rounds, seed)
                full_time = full_m.time
            else:
                full_time = retime(full.trace, fed_m.model).time_at(full.rounds)
        except FedSampleError as exc:
            raise _stage(f"sweep:x{mult:g}", exc)
        out.append({
            "multiplier": mult,
            "f_tot": fed_m.model.total_bandwidth,
            "proposed_time_s": proposed.time,
            "proposed_rounds": proposed.rounds,
            "full_time_s": full_time,
            "speedup_vs_full": full_time / proposed.time,
            "expected_participants": float(opt.q_star.probs.sum()),
        })
    return out


def _stats(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "min": float(arr.min()), "max": float(arr.max())}


@dataclass
class ExperimentReport:
    plan: ExperimentPlan
    seeds: list[SeedResult]

    @property
    def schemes(self) -> list[str]:
        return list(self.seeds[0].runs)

    def summary(self) -> dict[str, dict]:
        """Per-scheme time/rounds statistics and ``xk`` factors vs. proposed."""
        out = {}
        prop = _stats([s.runs["proposed"].time for s in self.seeds])["mean"]
        for name in self.schemes:
            times = [s.runs[name].time for s in self.seeds]
            rounds = [np.inf if s.runs[name].rounds is None else s.runs[name].rounds for s in self.seeds]
            ts = _stats(times)
            out[name] = {
                "time_s": ts,
                "rounds": _stats(rounds),
                "factor_vs_proposed": ts["mean"] / prop,
                "wins_for_proposed": sum(
                    s.runs["proposed"].time < s.runs[name].time for s in self.seeds
                ),
            }
        return out

    def sweep_summary(self) -> list[dict]:
        if not self.seeds[0].sweep:
            return []
        rows = []
        for i, point in enumerate(self.seeds[0].sweep):
            full = np.mean([s.sweep[i]["full_time_s"] for s in self.seeds])
            prop = np.mean([s.sweep[i]["proposed_time_s"] for s in self.seeds])
            rows.append({
                "multiplier": point["multiplier"],
                "f_tot": point["f_tot"],
                "full_time_s": float(full),
                "proposed_time_s": float(prop),
                "speedup_vs_full": float(full / prop),
            })
        return rows

    def pilot_summary(self) -> dict:
        return {
            "rounds": _stats([s.pilot.rounds for s in self.seeds]),
            "time_s": _stats([s.pilot.time for s in self.seeds]),
        }

    def to_dict(self) -> dict:
        return {
            "plan": {
                "task": asdict(self.plan.task),
                "target": asdict(self.plan.target),
                "baselines": list(self.plan.baselines),
                "fixed_p": self.plan.fixed_p,
                "seeds": list(self.plan.seeds),
                "pilot_rounds": self.plan.pilot_rounds,
                "max_rounds": self.plan.max_rounds,
                "optimizer": asdict(self.plan.optimizer),
                "bandwidth_multipliers": list(self.plan.bandwidth_multipliers),
                "fleet": self.plan.fleet.to_dict(),
            },
            "summary": _finite(self.summary()),
            "pilot": self.pilot_summary(),
            "sweep": _finite(self.sweep_summary()),
            "per_seed": _finite([s.to_dict() for s in self.seeds]),
        }

    def format_table(self) -> str:
        target = self.plan.target
        lines = [f"Target {target.kind} {target.value:g}, seeds {list(self.plan.seeds)}",
                 f"{'scheme':<10} {'time_s (mean)':>14} {'min':>10} {'max':>10} {'rounds':>8} {'factor':>8}"]
        for name, row in self.summary().items():
            t, r = row["time_s"], row["rounds"]
            factor = "" if name == "proposed" else f"x{row['factor_vs_proposed']:.2f}"
            lines.append(f"{name:<10} {t['mean']:>14.1f} {t['min']:>10.1f} {t['max']:>10.1f} "
                         f"{r['mean']:>8.1f} {factor:>8}")
        ps = self.pilot_summary()
        lines.append(f"pilot cost (not included above): {ps['rounds']['mean']:.0f} rounds, "
                     f"{ps['time_s']['mean']:.1f} s simulated")
        sweep = self.sweep_summary()
        if sweep:
            lines.append("bandwidth sweep (speedup of proposed over full):")
            for row in sweep:
                lines.append(f"  f_tot={row['f_tot']:<10g} x{row['speedup_vs_full']:.2f}")
        return "\n".join(lines)


def _finite(obj):
    """Replace infinities with None so the summary is valid JSON."""
    if isinstance(obj, float):
        return None if math.isinf(obj) or math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def run_experiment(plan: ExperimentPlan) -> ExperimentReport:
    return ExperimentReport(plan, [run_seed(plan, seed) for seed in plan.seeds])
