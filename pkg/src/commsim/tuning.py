"""Theory-prescribed step sizes and expected communication costs.

Every function returns the corresponding convergence-theorem bound
exactly, with no safety fraction applied; sweeps scale the returned
value by powers of two. Argument names: ``l_smooth`` is the global
smoothness constant, ``l_hetero`` and ``l_avg`` the two coefficients of
the averaged-gradient-difference bound (per-worker dispersion and mean
shift respectively), ``omega`` variance factors of unbiased compressors
(``omega_primal`` downlink, ``omega_dual`` uplink), ``theta`` the
variance factor of the averaged downlink collection, and ``mu`` the
gradient-dominance constant in the linear-rate regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


class TuningError(ValueError):
    """Invalid parameter ranges for a step-size formula."""


@dataclass(frozen=True)
class TheoryParams:
    """Step size plus the probabilities and momentum a method consumes."""

    gamma: float
    prob: Optional[float] = None
    prob_primal: Optional[float] = None
    prob_dual: Optional[float] = None
    beta: Optional[float] = None
    regime: str = "nonconvex"
    mu: Optional[float] = None


def _check_common(l_smooth, l_hetero, l_avg, omega_primal, theta, prob):
    if min(l_smooth, l_hetero, l_avg, omega_primal, theta) < 0:
        raise TuningError("constants must be nonnegative")
    if not 0 < prob <= 1:
        raise TuningError("probability must be in (0, 1]")


def step_marinap_general(l_smooth, l_hetero, l_avg, omega_primal, theta, prob):
    """Primal-compression step size for a general unbiased collection."""
    _check_common(l_smooth, l_hetero, l_avg, omega_primal, theta, prob)
    radicand = (l_hetero ** 2 * omega_primal + l_avg ** 2 * theta) * (1.0 / prob - 1.0)
    return 1.0 / (l_smooth + math.sqrt(radicand))


def step_marinap_pl(l_smooth, l_hetero, l_avg, omega_primal, theta, prob, mu):
    """Linear-rate variant: the nonconvex bound tightened by a factor of
    two under the radical, capped by prob / (2 mu)."""
    _check_common(l_smooth, l_hetero, l_avg, omega_primal, theta, prob)
    if mu <= 0:
        raise TuningError("mu must be positive in the linear-rate regime")
    radicand = 2.0 * (l_hetero ** 2 * omega_primal + l_avg ** 2 * theta) * (1.0 / prob - 1.0)
    return min(1.0 / (l_smooth + math.sqrt(radicand)), prob / (2.0 * mu))


def step_m3(l_smooth, l_hetero, l_avg, l_max, workers) -> TheoryParams:
    """Bidirectional-method parameters for the partition/sparsifier pairing
    with both sparsity levels fixed to d / n."""
    if workers < 1:
        raise TuningError("workers must be at least 1")
    n = float(workers)
    gamma = 1.0 / (l_smooth + 34.0 * (n * l_hetero + n ** (2.0 / 3.0) * l_avg
                                      + n ** (2.0 / 3.0) * l_max))
    return TheoryParams(gamma=gamma, prob_primal=1.0 / n, prob_dual=1.0 / n,
                        beta=n ** (-2.0 / 3.0))


def _m3_radicand(l_avg, l_hetero, l_max, workers, omega_primal, omega_dual,
                 theta, prob_primal, prob_dual, beta):
    avg_term = (theta / prob_primal + (1.0 + theta * prob_primal) / beta ** 2) * l_avg ** 2
    het_term = (omega_primal / prob_primal
                + (1.0 + omega_primal * prob_primal) / beta ** 2) * l_hetero ** 2
    max_term = (omega_dual * omega_primal * beta / (workers * prob_dual)
                + omega_dual * (1.0 + omega_primal * prob_primal)
                / (workers * prob_dual)) * l_max ** 2
    return avg_term + het_term + max_term


def step_m3_general(l_smooth, l_hetero, l_avg, l_max, workers, omega_primal,
                    omega_dual, theta, prob_primal, prob_dual, beta) -> TheoryParams:
    """Bidirectional-method step size for arbitrary unbiased compressors."""
    for prob in (prob_primal, prob_dual):
        if not 0 < prob <= 1:
            raise TuningError("probabilities must be in (0, 1]")
    if not 0 < beta <= 1:
        raise TuningError("momentum must be in (0, 1]")
    radicand = 288.0 * _m3_radicand(l_avg, l_hetero, l_max, workers, omega_primal,
                                    omega_dual, theta, prob_primal, prob_dual, beta)
    gamma = 1.0 / (l_smooth + math.sqrt(radicand))
    return TheoryParams(gamma=gamma, prob_primal=prob_primal,
                        prob_dual=prob_dual, beta=beta)


def step_m3_pl(l_smooth, l_hetero, l_avg, l_max, workers, omega_primal,
               omega_dual, theta, prob_primal, prob_dual, beta, mu) -> TheoryParams:
    """Linear-rate bidirectional variant: larger radical constant, capped
    by prob_primal/(2 mu), prob_dual/(2 mu) and beta/(4 mu)."""
    if mu <= 0:
        raise TuningError("mu must be positive in the linear-rate regime")
    radicand = 1536.0 * _m3_radicand(l_avg, l_hetero, l_max, workers, omega_primal,
                                     omega_dual, theta, prob_primal, prob_dual, beta)
    gamma = min(1.0 / (l_smooth + math.sqrt(radicand)),
                prob_primal / (2.0 * mu), prob_dual / (2.0 * mu), beta / (4.0 * mu))
    return TheoryParams(gamma=gamma, prob_primal=prob_primal, prob_dual=prob_dual,
                        beta=beta, regime="pl", mu=mu)


def expected_coords(prob, k, dim) -> float:
    """Average coordinates one downlink round transmits per worker."""
    if not 0 < prob <= 1:
        raise TuningError("probability must be in (0, 1]")
    if not 1 <= k <= dim:
        raise TuningError("k must be in [1, dim]")
    return prob * dim + (1.0 - prob) * k


def m3_beta_general(workers, omega_dual, omega_primal) -> float:
    """Momentum balancing the two compression directions; clipped to 1."""
    if workers < 1:
        raise TuningError("workers must be at least 1")
    if omega_dual < 0 or omega_primal < 0:
        raise TuningError("variance factors must be nonnegative")
    denom = omega_dual * omega_primal * (omega_dual + 1.0)
    if denom == 0.0:
        return 1.0
    return min((workers / denom) ** (1.0 / 3.0), 1.0)
