"""Round-time model under same-finish-time bandwidth allocation.

Within a round the server splits ``f_tot`` bandwidth units among the sampled
clients so that all of them finish together. For a participant set ``S`` the
round time ``T`` is the unique root of

    sum_{n in S} t_n / (T - tau_n) = f_tot,    T > max_{n in S} tau_n

and client ``n`` receives ``t_n / (T - tau_n)`` units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from fedsample.system import SamplingVector, SystemModel, as_probs

_MC_CHUNK = 8192


@dataclass(frozen=True, eq=False)
class RoundTiming:
    """Realized timing of one round.

    ``participants`` are client ids in fleet order and ``allocations[i]`` is
    the bandwidth given to ``participants[i]``.
    """

    duration: float
    allocations: np.ndarray
    participants: tuple[int, ...]


def _solve_slack(
    tau: np.ndarray, t: np.ndarray, f_tot: float, masks: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bisection for the round time of every row of ``masks``.

    The unknown is the slack ``s = T - max tau`` rather than ``T`` itself:
    the slowest participant's gap can be many orders of magnitude below
    ``T``, and solving for it directly keeps its full relative precision.
    Bisection runs until the bracket cannot shrink in floating point.

    Returns:
        ``(tau_max, slack)`` per row; both are 0 for empty rows.
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    nonempty = masks.any(axis=1)
    tau_out = np.zeros(masks.shape[0])
    slack_out = np.zeros(masks.shape[0])
    if not nonempty.any():
        return tau_out, slack_out
    m = masks[nonempty]
    t_m = np.where(m, t, 0.0)
    tau_max = np.where(m, tau, -np.inf).max(axis=1)
    head = np.where(m, tau_max[:, None] - tau[None, :], 1.0)

    def excess(s: np.ndarray) -> np.ndarray:
        return (t_m / (head + s[:, None])).sum(axis=1) - f_tot

    # every gap is at least s, so s = sum t / f_tot already satisfies the budget
    lo = np.zeros(len(tau_max))
    hi = t_m.sum(axis=1) / f_tot
    active = np.ones(len(lo), dtype=bool)
    for _ in range(5000):
        mid = 0.5 * (lo + hi)
        active &= (mid > lo) & (mid < hi)
        if not active.any():
            break
        above = excess(mid) > 0
        lo = np.where(active & above, mid, lo)
        hi = np.where(active & ~above, mid, hi)
    tau_out[nonempty] = tau_max
    slack_out[nonempty] = hi
    return tau_out, slack_out


def _solve_durations(tau: np.ndarray, t: np.ndarray, f_tot: float, masks: np.ndarray) -> np.ndarray:
    tau_max, slack = _solve_slack(tau, t, f_tot, masks)
    return tau_max + slack


def realized_round_time(model: SystemModel, participants: Iterable[int] | np.ndarray) -> RoundTiming:
    """Minimum round time for a given participant set.

    Args:
        model: The fleet.
        participants: Client ids, or a boolean mask over ``model.clients``.

    Returns:
        The round duration (0 for an empty set) and the per-participant
        bandwidth allocations.

    Raises:
        KeyError: If an id is not in the fleet.
    """
    if isinstance(participants, np.ndarray) and participants.dtype == bool:
        if participants.shape != (model.n,):
            raise ValueError(f"mask must have shape ({model.n},)")
        idx = np.flatnonzero(participants)
    else:
        lookup = {int(cid): i for i, cid in enumerate(model.ids)}
        idx = np.unique([lookup[int(cid)] for cid in participants]).astype(int)
    if idx.size == 0:
        return RoundTiming(0.0, np.zeros(0), ())
    tau, t = model.tau[idx], model.t[idx]
    mask = np.ones((1, idx.size), dtype=bool)
    tau_max, slack = (float(v[0]) for v in _solve_slack(tau, t, model.total_bandwidth, mask))
    alloc = t / ((tau_max - tau) + slack)
    return RoundTiming(tau_max + slack, alloc, tuple(int(i) for i in model.ids[idx]))


def expected_max_tau(model: SystemModel, q: SamplingVector | np.ndarray) -> float:
    """Closed-form expected largest compute time among sampled clients.

    Client ``n`` is the slowest participant exactly when it is sampled and no
    slower client is; the all-empty event contributes nothing.
    """
    q = as_probs(q)
    tau = model.tau
    # none_after[n] = prod_{i > n} (1 - q_i)
    none_after = np.append(np.cumprod((1.0 - q)[::-1])[::-1][1:], 1.0)
    return float(np.sum(none_after * q * tau))


def expected_round_time_bound(model: SystemModel, q: SamplingVector | np.ndarray) -> float:
    """Upper bound on E[T]: expected upload load plus expected slowest compute."""
    q = as_probs(q)
    return float(np.sum(q * model.t) / model.total_bandwidth + expected_max_tau(model, q))


def linear_round_time_bound(model: SystemModel, q: SamplingVector | np.ndarray) -> float:
    """Looser, linear bound ``sum_n q_n (t_n / f_tot + tau_n)``."""
    q = as_probs(q)
    return float(np.sum(q * model.round_costs()))


def sample_participation(q: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` independent Bernoulli(q_n) participation masks."""
    return rng.random((size, len(q))) < q


def monte_carlo_expected_round_time(
    model: SystemModel, q: SamplingVector | np.ndarray, draws: int, seed: int = 0
) -> tuple[float, float]:
    """Sample-mean estimate of E[T] and its standard error."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    q = as_probs(q)
    rng = np.random.default_rng(seed)
    tau, t, f_tot = model.tau, model.t, model.total_bandwidth
    durations = np.empty(draws)
    for start in range(0, draws, _MC_CHUNK):
        size = min(_MC_CHUNK, draws - start)
        masks = sample_participation(q, size, rng)
        # small fleets repeat participant sets constantly; solve each set once
        unique, inverse = np.unique(masks, axis=0, return_inverse=True)
        durations[start:start + size] = _solve_durations(tau, t, f_tot, unique)[inverse.ravel()]
    mean = float(durations.mean())
    stderr = float(durations.std(ddof=1) / np.sqrt(draws)) if draws > 1 else 0.0
    return mean, stderr
