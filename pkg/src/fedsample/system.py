"""Heterogeneous client fleet: profiles, validation and synthetic generation.

A fleet is a list of clients, each with a compute time (seconds for one full
local update), an upload time at one unit of bandwidth, and a local data size.
The server shares ``total_bandwidth`` units among the clients of a round.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from fedsample.errors import ConfigError

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ClientProfile:
    """One client of the fleet.

    Attributes:
        id: Client index, 1-based.
        compute_time: Seconds for one full local update (all local iterations).
        comm_time_unit_bw: Upload time when given exactly one bandwidth unit.
        data_size: Number of local samples.
    """

    id: int
    compute_time: float
    comm_time_unit_bw: float
    data_size: int


@dataclass(frozen=True)
class ClassSpec:
    """Nominal profile of one device class used by :func:`generate_fleet`."""

    compute_time: float
    comm_time_unit_bw: float
    mean_data: float


@dataclass(frozen=True, eq=False)
class SystemModel:
    """A fleet plus the shared bandwidth budget.

    Use :func:`build_system` to get a model that satisfies the ordering and
    normalization invariants; the raw constructor does not enforce them so
    that :func:`validate_system` can report violations.
    """

    clients: tuple[ClientProfile, ...]
    total_bandwidth: float
    data_weights: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def tau(self) -> np.ndarray:
        return np.array([c.compute_time for c in self.clients], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return np.array([c.comm_time_unit_bw for c in self.clients], dtype=float)

    @property
    def ids(self) -> np.ndarray:
        return np.array([c.id for c in self.clients], dtype=int)

    @property
    def data_sizes(self) -> np.ndarray:
        return np.array([c.data_size for c in self.clients], dtype=int)

    def round_costs(self) -> np.ndarray:
        """Per-client linear round cost ``t_n / f_tot + tau_n``."""
        return self.t / self.total_bandwidth + self.tau

    def with_bandwidth(self, total_bandwidth: float) -> SystemModel:
        if total_bandwidth <= 0:
            raise ConfigError(f"total_bandwidth must be > 0, got {total_bandwidth}")
        return replace(self, total_bandwidth=float(total_bandwidth))

    def to_dict(self) -> dict:
        return {
            "total_bandwidth": self.total_bandwidth,
            "clients": [
                {
                    "id": c.id,
                    "tau": c.compute_time,
                    "t": c.comm_time_unit_bw,
                    "data": c.data_size,
                }
                for c in self.clients
            ],
        }


@dataclass(frozen=True, eq=False)
class SamplingVector:
    """Independent per-client participation probabilities."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1:
            raise ValueError("sampling probabilities must be a 1-D vector")
        if not np.all((probs > 0) & (probs <= 1)):
            bad = probs[~((probs > 0) & (probs <= 1))]
            raise ValueError(f"sampling probabilities must lie in (0, 1], got {bad[:5]}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.probs)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def tolist(self) -> list[float]:
        return self.probs.tolist()


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def as_probs(q: SamplingVector | Sequence[float] | np.ndarray) -> np.ndarray:
    """Return ``q`` as a float array without re-validating it."""
    if isinstance(q, SamplingVector):
        return q.probs
    return np.asarray(q, dtype=float)


def build_system(clients: Iterable[ClientProfile], total_bandwidth: float) -> SystemModel:
    """Sort clients by compute time (ties by id) and normalize data weights."""
    ordered = tuple(sorted(clients, key=lambda c: (c.compute_time, c.id)))
    if not ordered:
        raise ConfigError("a fleet needs at least one client")
    sizes = np.array([c.data_size for c in ordered], dtype=float)
    if np.any(sizes < 1):
        raise ConfigError("every client needs data_size >= 1")
    weights = sizes / sizes.sum()
    weights.setflags(write=False)
    return SystemModel(ordered, float(total_bandwidth), weights)


def validate_system(model: SystemModel) -> ValidationReport:
    report = ValidationReport()
    v = report.violations
    weights = np.asarray(model.data_weights, dtype=float)
    if model.n == 0:
        v.append("fleet has no clients")
        return report
    if len(weights) != model.n:
        v.append(f"data_weights has length {len(weights)}, expected {model.n}")
    if model.total_bandwidth <= 0:
        v.append(f"total_bandwidth {model.total_bandwidth} is not positive")
    for c in model.clients:
        if c.compute_time <= 0:
            v.append(f"client {c.id}: compute_time {c.compute_time} is not positive")
        if c.comm_time_unit_bw <= 0:
            v.append(f"client {c.id}: comm_time_unit_bw {c.comm_time_unit_bw} is not positive")
        if c.data_size < 1:
            v.append(f"client {c.id}: data_size {c.data_size} is below 1")
    tau = model.tau
    if np.any(np.diff(tau) < 0):
        v.append("clients not sorted by compute_time")
    if np.any(weights <= 0):
        v.append("data weights must be positive")
    total = float(weights.sum())
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        v.append(f"data weights sum to {total:g} ≠ 1")
    return report


def generate_fleet(
    n_classes: int,
    per_class: int,
    class_specs: Sequence[ClassSpec | tuple[float, float, float]],
    jitter: float = 0.0,
    seed: int = 0,
    total_bandwidth: float = 100.0,
) -> SystemModel:
    """Synthesize ``n_classes * per_class`` clients around nominal class specs.

    Each of tau, t and the data size is drawn uniformly within ``±jitter``
    (relative) of its class value. Class specs are put in a canonical order
    before drawing, so permuting ``class_specs`` yields the same fleet.
    """
    if n_classes < 1 or per_class < 1:
        raise ConfigError("n_classes and per_class must be >= 1")
    if len(class_specs) != n_classes:
        raise ConfigError(f"expected {n_classes} class specs, got {len(class_specs)}")
    if not 0 <= jitter < 1:
        raise ConfigError(f"jitter must be in [0, 1), got {jitter}")
    specs = [s if isinstance(s, ClassSpec) else ClassSpec(*map(float, s)) for s in class_specs]
    for s in specs:
        if s.compute_time <= 0 or s.comm_time_unit_bw <= 0 or s.mean_data < 1:
            raise ConfigError(f"invalid class spec {s}")
    specs.sort(key=lambda s: (s.compute_time, s.comm_time_unit_bw, s.mean_data))

    rng = np.random.default_rng(seed)
    clients = []
    for spec in specs:
        scale = rng.uniform(1 - jitter, 1 + jitter, size=(per_class, 3))
        for row in scale:
            clients.append(
                ClientProfile(
                    id=len(clients) + 1,
                    compute_time=spec.compute_time * row[0],
                    comm_time_unit_bw=spec.comm_time_unit_bw * row[1],
                    data_size=max(1, int(round(spec.mean_data * row[2]))),
                )
            )
    return build_system(clients, total_bandwidth)


# Five illustrative device classes. Values are repo defaults, not
# measurements: compute spans 40x and upload 80x across classes.
DEFAULT_CLASS_SPECS: tuple[ClassSpec, ...] = (
    ClassSpec(compute_time=1.0, comm_time_unit_bw=50.0, mean_data=100),
    ClassSpec(compute_time=3.0, comm_time_unit_bw=150.0, mean_data=100),
    ClassSpec(compute_time=8.0, comm_time_unit_bw=500.0, mean_data=100),
    ClassSpec(compute_time=20.0, comm_time_unit_bw=1500.0, mean_data=100),
    ClassSpec(compute_time=40.0, comm_time_unit_bw=4000.0, mean_data=100),
)


def default_fleet(seed: int = 0, jitter: float = 0.1, total_bandwidth: float = 100.0) -> SystemModel:
    """100 clients, 20 per default device class."""
    return generate_fleet(5, 20, DEFAULT_CLASS_SPECS, jitter=jitter, seed=seed,
                          total_bandwidth=total_bandwidth)
