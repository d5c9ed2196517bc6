"""Approximately optimal independent sampling probabilities.

The predicted wall-clock time of training under sampling vector ``q`` is

    alpha / (beta - sum_n a_n^2 / q_n)  *  sum_n q_n c_n,   c_n = t_n / f_tot + tau_n

which is non-convex in ``q``. The second factor is fixed to a value ``M`` and
the first is replaced by the convex upper bound

    sum_n alpha q_n / (N beta q_n - a_n^2 N^2)

(arithmetic mean >= harmonic mean). For each ``M`` on a grid the resulting
separable problem is solved exactly by water-filling on the multiplier of the
constraint ``sum_n q_n c_n = M``; the best grid candidate under the true
objective is returned.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedsample.convergence import ConvergenceConstants, predicted_rounds
from fedsample.errors import InfeasibleM, InfeasibleProblem, InfeasibleSampling
from fedsample.system import SamplingVector, SystemModel, as_probs
from fedsample.timing import linear_round_time_bound


@dataclass(frozen=True)
class OptimizerConfig:
    """Search settings.

    Attributes:
        m_grid_steps: Number of equal steps across ``[M_min, M_max]``.
        lower_bound_slack: Relative margin added to the open lower bound
            ``a_n^2 N / beta`` to make the box closed.
        kkt_tolerance: Allowed ``|sum_n q_n c_n - M|`` relative to ``M``.
    """

    m_grid_steps: int = 200
    lower_bound_slack: float = 1e-9
    kkt_tolerance: float = 1e-10

    def __post_init__(self) -> None:
        if self.m_grid_steps < 2:
            raise ValueError("m_grid_steps must be >= 2")
        if self.lower_bound_slack <= 0 or self.kkt_tolerance <= 0:
            raise ValueError("lower_bound_slack and kkt_tolerance must be > 0")


@dataclass(frozen=True, eq=False)
class GridPoint:
    M: float
    objective: float
    q: np.ndarray


@dataclass(frozen=True, eq=False)
class OptimizerResult:
    q_star: SamplingVector
    m_star: float
    objective: float
    grid: list[GridPoint] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "q_star": self.q_star.tolist(),
            "m_star": self.m_star,
            "objective": self.objective,
            "grid_points": len(self.grid),
        }

    def write_grid_csv(self, path: str | Path) -> None:
        n = len(self.q_star)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["M", "objective", *[f"q_{i + 1}" for i in range(n)]])
            for g in self.grid:
                w.writerow([repr(g.M), repr(g.objective), *[repr(float(x)) for x in g.q]])


def participation_floor(consts: ConvergenceConstants, model: SystemModel) -> np.ndarray:
    """Open per-client lower bound ``a_n^2 N / beta``.

    Raises:
        InfeasibleProblem: If any client's floor is at or above 1.
    """
    floor = model.data_weights**2 * model.n / consts.beta
    if np.any(floor >= 1):
        worst = int(np.argmax(floor))
        raise InfeasibleProblem(
            f"client {model.clients[worst].id} needs q > {floor[worst]:.6g} >= 1; "
            "the convergence threshold is unreachable"
        )
    return floor


def _closed_lower(consts: ConvergenceConstants, model: SystemModel, cfg: OptimizerConfig) -> np.ndarray:
    return np.minimum(participation_floor(consts, model) * (1 + cfg.lower_bound_slack), 1.0)


def _check_above_floor(consts: ConvergenceConstants, model: SystemModel, q: np.ndarray) -> None:
    floor = model.data_weights**2 * model.n / consts.beta
    if np.any(q <= floor) or np.any(q > 1):
        raise InfeasibleSampling("q must satisfy a_n^2 N / beta < q_n <= 1 for every client")


def p2_objective(consts: ConvergenceConstants, model: SystemModel, q: SamplingVector | np.ndarray) -> float:
    """Predicted total time: predicted rounds times the linear per-round bound."""
    q = as_probs(q)
    _check_above_floor(consts, model, q)
    return predicted_rounds(consts, model, q) * linear_round_time_bound(model, q)


def p3_surrogate(consts: ConvergenceConstants, model: SystemModel, q: SamplingVector | np.ndarray) -> float:
    """Convex upper bound ``sum_n alpha q_n / (N beta q_n - a_n^2 N^2)`` on the round factor."""
    q = as_probs(q)
    n = model.n
    a2 = model.data_weights**2
    if np.any(q <= a2 * n / consts.beta):
        raise InfeasibleSampling("q must exceed a_n^2 N / beta for every client")
    return float(np.sum(consts.alpha * q / (n * consts.beta * q - a2 * n * n)))


def surrogate_marginals(consts: ConvergenceConstants, model: SystemModel, q: np.ndarray) -> np.ndarray:
    """Per-client ``-d(surrogate)/dq_n / c_n``, the marginal gain per unit cost."""
    n = model.n
    b = model.data_weights**2 * n
    grad = -consts.alpha * b / (n * (consts.beta * q - b) ** 2)
    return -grad / model.round_costs()


def m_bounds(consts: ConvergenceConstants, model: SystemModel,
             cfg: OptimizerConfig | None = None) -> tuple[float, float]:
    """Range of ``M = sum_n q_n c_n`` worth searching.

    The coarse bracket ``[N min_n(floor_n c_n), N max_n c_n]`` is intersected
    with the interval actually reachable inside the box,
    ``[sum_n lower_n c_n, sum_n c_n]``.
    """
    cfg = cfg or OptimizerConfig()
    c = model.round_costs()
    floor = participation_floor(consts, model)
    coarse_lo = model.n * float(np.min(floor * c))
    coarse_hi = model.n * float(np.max(c))
    lower = _closed_lower(consts, model, cfg)
    lo = max(coarse_lo, float(np.sum(lower * c)))
    hi = min(coarse_hi, float(np.sum(c)))
    if lo > hi:
        raise InfeasibleProblem(f"empty M interval [{lo:.6g}, {hi:.6g}]")
    return lo, hi


def solve_p3_fixed_m(consts: ConvergenceConstants, model: SystemModel, M: float,
                     cfg: OptimizerConfig | None = None) -> SamplingVector:
    """Minimize the convex surrogate subject to ``sum_n q_n c_n = M`` and the box.

    Stationarity gives ``q_n = a_n^2 N / beta + (a_n / beta) sqrt(alpha / (lambda c_n))``
    clipped to ``[lower_n, 1]``. With ``mu = lambda^{-1/2}`` the constraint
    value is continuous, piecewise linear and nondecreasing in ``mu``, so we
    bisect on ``mu`` and then solve the final linear piece exactly.

    Raises:
        InfeasibleM: If ``M`` is outside ``[sum lower_n c_n, sum c_n]``.
    """
    cfg = cfg or OptimizerConfig()
    q, _ = _water_fill(consts, model, M, cfg)
    return SamplingVector(q)


def _water_fill(consts: ConvergenceConstants, model: SystemModel, M: float,
                cfg: OptimizerConfig) -> tuple[np.ndarray, float]:
    c = model.round_costs()
    a = model.data_weights
    lower = _closed_lower(consts, model, cfg)
    base = a**2 * model.n / consts.beta
    slope = (a / consts.beta) * np.sqrt(consts.alpha / c)
    m_lo, m_hi = float(np.sum(lower * c)), float(np.sum(c))
    tol = cfg.kkt_tolerance * M
    if M < m_lo - tol or M > m_hi + tol:
        raise InfeasibleM(f"M={M:.10g} outside reachable [{m_lo:.10g}, {m_hi:.10g}]")
    if M <= m_lo:
        return lower.copy(), np.inf
    if M >= m_hi:
        return np.ones_like(c), 0.0

    def fill(mu: float) -> np.ndarray:
        return np.clip(base + slope * mu, lower, 1.0)

    lo, hi = 0.0, float(np.max((1.0 - base) / slope))
    mu = hi
    for _ in range(400):
        mu = 0.5 * (lo + hi)
        resid = float(np.sum(fill(mu) * c)) - M
        if abs(resid) <= tol or not lo < mu < hi:
            break
        if resid > 0:
            hi = mu
        else:
            lo = mu
    # Exact solve on the active set at mu, kept only if it stays consistent.
    q = fill(mu)
    free = (q > lower) & (q < 1.0)
    if free.any():
        fixed_cost = float(np.sum(q[~free] * c[~free]))
        mu_exact = (M - fixed_cost - float(np.sum(base[free] * c[free]))) / float(np.sum(slope[free] * c[free]))
        q_exact = fill(mu_exact)
        if (mu_exact > 0 and np.array_equal((q_exact > lower) & (q_exact < 1.0), free)
                and abs(np.sum(q_exact * c) - M) <= abs(np.sum(q * c) - M)):
            q, mu = q_exact, mu_exact
    lam = 1.0 / mu**2 if mu > 0 else np.inf
    return q, lam


def optimize(consts: ConvergenceConstants, model: SystemModel,
             cfg: OptimizerConfig | None = None) -> OptimizerResult:
    """Grid search over ``M`` with an exact per-``M`` surrogate solve.

    Candidates are ranked by :func:`p2_objective`; ties go to the smallest ``M``.
    """
    cfg = cfg or OptimizerConfig()
    m_min, m_max = m_bounds(consts, model, cfg)
    if m_max - m_min <= cfg.kkt_tolerance * m_max:
        grid_m = np.array([m_min])
    else:
        grid_m = m_min + (m_max - m_min) * np.arange(cfg.m_grid_steps + 1) / cfg.m_grid_steps
        grid_m[-1] = m_max
    grid = []
    for M in grid_m:
        q, _ = _water_fill(consts, model, float(M), cfg)
        grid.append(GridPoint(float(M), p2_objective(consts, model, q), q))
    best = int(np.argmin([g.objective for g in grid]))
    g = grid[best]
    return OptimizerResult(SamplingVector(g.q), g.M, g.objective, grid)
