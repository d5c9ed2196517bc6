from __future__ import annotations

import numpy as np

from fedsample.system import ClientProfile, SystemModel, build_system


def make_model(tau, t, data=None, f_tot=10.0) -> SystemModel:
    """Fleet from raw arrays; sorted and normalized by ``build_system``."""
    data = data if data is not None else [1] * len(tau)
    clients = [ClientProfile(i + 1, float(a), float(b), int(d)) for i, (a, b, d) in enumerate(zip(tau, t, data))]
    return build_system(clients, f_tot)


def random_model(rng: np.random.Generator, n: int, f_tot: float | None = None) -> SystemModel:
    tau = rng.uniform(0.5, 20.0, n)
    t = rng.uniform(0.5, 50.0, n)
    data = rng.integers(10, 200, n)
    return make_model(tau, t, data, f_tot if f_tot is not None else rng.uniform(1.0, 50.0))


def random_q(rng: np.random.Generator, n: int, low: float = 0.05) -> np.ndarray:
    return rng.uniform(low, 1.0, n)


def surrogate_value(alpha, beta, a, q):
    """sum_n alpha q_n / (N beta q_n - a_n^2 N^2), evaluated elementwise over leading axes."""
    n = a.shape[-1]
    return np.sum(alpha * q / (n * beta * q - a**2 * n * n), axis=-1)


def fixed_m_grid_oracle(alpha, beta, a, c, M, lower, step=1e-3):
    """Brute-force minimum of the surrogate on sum q c = M for N = 3.

    q_1 and q_2 run over a grid anchored at their lower bounds (with 1 added);
    q_3 is fixed by the equality and kept when it lands inside its box.
    """
    axes = [np.append(np.arange(lo, 1.0, step), 1.0) for lo in lower[:2]]
    q1, q2 = np.meshgrid(*axes, indexing="ij")
    q3 = (M - q1 * c[0] - q2 * c[1]) / c[2]
    ok = (q3 >= lower[2]) & (q3 <= 1.0)
    q = np.stack([q1[ok], q2[ok], q3[ok]], axis=-1)
    values = surrogate_value(alpha, beta, a, q)
    best = int(np.argmin(values))
    return float(values[best]), q[best]


def kkt_residual(alpha, beta, a, c, q, M, lower, rel=1e-9):
    """Largest relative KKT violation of a fixed-M surrogate solution.

    With g_n = -(d surrogate / d q_n) / c_n: interior coordinates share one
    multiplier, coordinates at their floor have g_n <= lambda and
    coordinates at 1 have g_n >= lambda. Also includes the equality residual.
    """
    n = len(q)
    g = alpha * a**2 * n**2 / (n * beta * q - a**2 * n * n) ** 2 / c
    at_low = q <= lower * (1 + rel)
    at_high = q >= 1 - rel
    free = ~at_low & ~at_high
    parts = [abs(float(np.sum(q * c)) - M) / M]
    if not free.any():
        # any lambda between the two clipped groups certifies optimality
        if at_low.any() and at_high.any():
            overlap = float(np.max(g[at_low]) - np.min(g[at_high]))
            parts.append(max(0.0, overlap) / float(np.min(g[at_high])))
        return max(parts)
    lam = float(np.median(g[free]))
    parts.append(float(np.max(np.abs(g[free] - lam))) / lam)
    if at_low.any():
        parts.append(max(0.0, float(np.max(g[at_low])) - lam) / lam)
    if at_high.any():
        parts.append(max(0.0, lam - float(np.min(g[at_high]))) / lam)
    return max(parts)
