"""Convergence bound for independently sampled FedAvg and round-count model.

The averaged squared gradient norm after ``R`` rounds is bounded by

    4 (F(x0) - F*) / (eta R) + 4 eta L N (eps^2 + sigma^2) sum_n a_n^2 / q_n

Setting the bound equal to a threshold and solving for ``R`` gives the
round-count model ``R(q) = alpha / (beta - sum_n a_n^2 / q_n)``. In practice
``alpha`` and ``beta`` are fitted from two pilot runs (uniform and full
sampling) that train until the same estimation loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from fedsample.errors import DegeneratePilot, InfeasibleSampling, PilotTooShort
from fedsample.system import SamplingVector, SystemModel, as_probs

SMOOTHING_WINDOW = 5


@dataclass(frozen=True)
class BoundParams:
    """Problem constants of the convergence bound.

    Attributes:
        eta: Learning rate.
        L: Lipschitz constant of the local gradients.
        sigma_sq: Variance bound of the stochastic local gradients.
        eps_sq: Bound on the local/global gradient divergence.
        f_gap: Initial optimality gap F(x0) - F*.
        xi: Target bound on the averaged squared gradient norm.

    ``p`` in the step-size condition ``eta <= 1 / (4 L p)`` is any upper
    bound on ``N sum_n a_n^2 / q_n``; it does not enter the bound value and
    :meth:`step_size_ok` is provided for documentation and checks only.
    """

    eta: float
    L: float
    sigma_sq: float
    eps_sq: float
    f_gap: float
    xi: float

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.xi <= self.eps_sq + self.sigma_sq:
            raise ValueError("xi must exceed eps_sq + sigma_sq")

    def step_size_ok(self, p: float, n_clients: int) -> bool:
        return self.eta <= min(1.0 / (4 * self.L * p), 1.0 / (4 * self.L * n_clients**2))

    def alpha(self, n_clients: int) -> float:
        return self.f_gap / (self.eta**2 * self.L * n_clients * (self.eps_sq + self.sigma_sq))

    def beta(self, n_clients: int) -> float:
        return self.xi / (4 * self.eta * self.L * n_clients * (self.eps_sq + self.sigma_sq))


@dataclass(frozen=True)
class PilotMeasurements:
    R1: int
    R2: int
    C1: float
    C2: float


@dataclass(frozen=True)
class ConvergenceConstants:
    """Fitted round-count constants and the pilot data they came from."""

    alpha: float
    beta: float
    pilot: PilotMeasurements | None = None

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be > 0, got {self.alpha}, {self.beta}")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "pilot": asdict(self.pilot) if self.pilot is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ConvergenceConstants:
        pilot = d.get("pilot")
        return cls(
            alpha=float(d["alpha"]),
            beta=float(d["beta"]),
            pilot=PilotMeasurements(**pilot) if pilot else None,
        )


def sampling_sum(model: SystemModel, q: SamplingVector | np.ndarray) -> float:
    """``sum_n a_n^2 / q_n``."""
    q = as_probs(q)
    return float(np.sum(model.data_weights**2 / q))


def theorem1_rhs(params: BoundParams, model: SystemModel, q: SamplingVector | np.ndarray, R: int) -> float:
    """Value of the convergence bound after ``R`` rounds."""
    if R < 1:
        raise ValueError("R must be >= 1")
    n = model.n
    opt_term = 4 * params.f_gap / (params.eta * R)
    sampling_term = 4 * params.eta * params.L * n * (params.eps_sq + params.sigma_sq) * sampling_sum(model, q)
    return opt_term + sampling_term


def predicted_rounds(consts: ConvergenceConstants, model: SystemModel, q: SamplingVector | np.ndarray) -> float:
    """Predicted rounds to reach the threshold, ``alpha / (beta - sum a_n^2/q_n)``.

    Raises:
        InfeasibleSampling: If the sampling sum is at or above ``beta``.
    """
    s = sampling_sum(model, q)
    if s >= consts.beta:
        raise InfeasibleSampling(f"sum a_n^2/q_n = {s:.6g} >= beta = {consts.beta:.6g}")
    return consts.alpha / (consts.beta - s)


def smoothed(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries average what exists."""
    v = np.asarray(values, dtype=float)
    if window <= 1 or v.size == 0:
        return v.copy()
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, v.size + 1)
    start = np.maximum(idx - window, 0)
    return (c[idx] - c[start]) / (idx - start)


def first_crossing(values: Sequence[float], threshold: float, window: int = SMOOTHING_WINDOW) -> int | None:
    """1-based index of the first round whose smoothed value is <= ``threshold``."""
    hits = np.flatnonzero(smoothed(values, window) <= threshold)
    return int(hits[0]) + 1 if hits.size else None


def constants_from_pilot(R1: int, R2: int, C1: float, C2: float) -> ConvergenceConstants:
    """Solve the two round-count equations for ``alpha`` and ``beta``."""
    if R1 == R2:
        raise DegeneratePilot(f"R1 == R2 == {R1}: pilot rounds do not separate the schemes")
    beta = (R1 * C1 - R2 * C2) / (R1 - R2)
    alpha = R1 * R2 * (C1 - C2) / (R1 - R2)
    if alpha <= 0 or beta <= C2:
        raise DegeneratePilot(
            f"pilot gives alpha={alpha:.6g}, beta={beta:.6g} (need alpha > 0, beta > C2={C2:.6g}); "
            f"R1={R1}, R2={R2}"
        )
    return ConvergenceConstants(alpha, beta, PilotMeasurements(int(R1), int(R2), float(C1), float(C2)))


def estimate_constants(trace_uniform, trace_full, F_s: float, model: SystemModel,
                       window: int = SMOOTHING_WINDOW) -> ConvergenceConstants:
    """Fit ``alpha`` and ``beta`` from a uniform-sampling and a full-sampling pilot.

    ``R1`` and ``R2`` are the first rounds at which each trace's smoothed
    global loss reaches ``F_s``.
    """
    R1 = first_crossing(trace_uniform.losses, F_s, window)
    R2 = first_crossing(trace_full.losses, F_s, window)
    if R1 is None:
        raise PilotTooShort(f"uniform-sampling pilot never reached F_s={F_s:.6g} "
                            f"in {len(trace_uniform.losses)} rounds")
    if R2 is None:
        raise PilotTooShort(f"full-sampling pilot never reached F_s={F_s:.6g} "
                            f"in {len(trace_full.losses)} rounds")
    w2 = float(np.sum(model.data_weights**2))
    return constants_from_pilot(R1, R2, C1=model.n * w2, C2=w2)
