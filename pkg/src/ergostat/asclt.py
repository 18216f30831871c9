"""Almost-sure CLT experiments.

Along one orbit the normalized Birkhoff sums S_k/sqrt(k) (or running maxima
S*_k/sqrt(k)) are accumulated into the log-weighted empirical measure with
atom weights 1/k, and the Kantorovich distance to the limiting Gaussian
(resp. half-Gaussian) is evaluated at a ladder of checkpoints.  A single
trajectory can only be checked descriptively; almost-sure statements are
operationalized as multi-seed quantile tests by the callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVarianceError
from .maps import Observable, PiecewiseMap, orbit_value_chunks
from .measures import (
    GaussianLaw,
    HalfGaussianLaw,
    WeightedEmpiricalMeasure,
    kantorovich,
)
from .transfer import green_kubo_sigma2

SIGMA2_FLOOR = 1e-6


@dataclass(frozen=True)
class AscltDiagnostics:
    """Kantorovich distances of the log-averaged empirical measure to its
    limit law at increasing checkpoints, with the rate normalization
    kappa * (log n)^(1/3) / sqrt(log log n)."""

    statistic: str                 # "birkhoff" or "maxima"
    seed: int
    sigma_used: float
    checkpoints: np.ndarray        # integer counts; synthetic diagnostics may
    kappa_values: np.ndarray       # carry float checkpoints beyond int range
    normalized_rates: np.ndarray

    def __post_init__(self):
        cps = np.asarray(self.checkpoints, dtype=float)
        if np.any(np.diff(cps) <= 0) or cps[0] < 4:
            raise ValueError("checkpoints must be strictly increasing with first >= 4")
        if np.any(self.kappa_values < 0):
            raise ValueError("negative Kantorovich distance")


def default_checkpoints(horizon: int) -> np.ndarray:
    """Geometric ladder 10^3, 10^3.5, ... capped by the horizon (convergence
    is logarithmic in n).  Horizons under 1000 get the horizon itself."""
    if horizon < 1000:
        return np.array([horizon], dtype=np.int64)
    levels = []
    e = 3.0
    while round(10**e) <= horizon:
        levels.append(round(10**e))
        e += 0.5
    if levels[-1] != horizon:
        levels.append(horizon)
    return np.array(levels, dtype=np.int64)


def rate_normalization(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    return np.cbrt(np.log(n)) / np.sqrt(np.log(np.log(n)))


def normalized_statistic_atoms(pmap: PiecewiseMap, u: Observable, n: int, seed: int,
                               running_max: bool = False) -> np.ndarray:
    """Atoms S_k/sqrt(k), k=1..n (or S*_k/sqrt(k) with the running maximum)."""
    vals = np.concatenate(list(orbit_value_chunks(pmap, u, seed, n)))
    s = np.cumsum(vals)
    if running_max:
        s = np.maximum.accumulate(s)
    return s / np.sqrt(np.arange(1, n + 1, dtype=float))


def _run(pmap, u, n, seed, checkpoints, sigma2, sigma2_method, ulam_resolution,
         running_max: bool) -> AscltDiagnostics:
    if sigma2 is None:
        sigma2 = green_kubo_sigma2(pmap, u, method=sigma2_method, N=ulam_resolution)
    if sigma2 <= SIGMA2_FLOOR:
        raise DegenerateVarianceError(
            f"sigma^2 = {sigma2:.3g} <= {SIGMA2_FLOOR:g}: the observable is a "
            "coboundary (or numerically indistinguishable from one); the "
            "limit law degenerates and the run is refused")
    if checkpoints is None:
        checkpoints = default_checkpoints(n)
    checkpoints = np.asarray(checkpoints, dtype=np.int64)
    if checkpoints[-1] > n:
        raise ValueError("horizon must reach the last checkpoint")
    sigma = float(np.sqrt(sigma2))
    law = HalfGaussianLaw(sigma) if running_max else GaussianLaw(sigma)
    atoms = normalized_statistic_atoms(pmap, u, n, seed, running_max=running_max)
    weights = 1.0 / np.arange(1, n + 1, dtype=float)
    kappas = np.empty(len(checkpoints))
    for i, m in enumerate(checkpoints):
        emp = WeightedEmpiricalMeasure(atoms[:m], weights[:m], int(m))
        kappas[i] = kantorovich(emp, law)
    return AscltDiagnostics(
        statistic="maxima" if running_max else "birkhoff",
        seed=seed,
        sigma_used=sigma,
        checkpoints=checkpoints,
        kappa_values=kappas,
        normalized_rates=kappas * rate_normalization(checkpoints),
    )


def asclt_run(pmap: PiecewiseMap, u: Observable, n: int, seed: int,
              checkpoints=None, sigma2: float | None = None,
              sigma2_method: str = "quadrature", ulam_resolution: int = 1024,
              ) -> AscltDiagnostics:
    """Track kappa(E_n, N(0, sigma^2)) along one orbit.

    sigma^2 defaults to the Green-Kubo value for (map, u); a degenerate
    variance refuses the run.
    """
    return _run(pmap, u, n, seed, checkpoints, sigma2, sigma2_method,
                ulam_resolution, running_max=False)


def maxima_run(pmap: PiecewiseMap, u: Observable, n: int, seed: int,
               checkpoints=None, sigma2: float | None = None,
               sigma2_method: str = "quadrature", ulam_resolution: int = 1024,
               ) -> AscltDiagnostics:
    """Track kappa(M_n, G(sigma)) for the running-maximum statistic."""
    return _run(pmap, u, n, seed, checkpoints, sigma2, sigma2_method,
                ulam_resolution, running_max=True)


def rate_diagnostic(diag: AscltDiagnostics) -> tuple[np.ndarray, str]:
    """Normalized rate sequence and a descriptive boundedness verdict.

    Verdict is "bounded" when the running maximum of the normalized rates
    has stabilized (last value at most 1.5x its median); no almost-sure
    claim is implied.
    """
    if len(diag.checkpoints) < 2:
        raise ValueError("need at least two checkpoints")
    seq = diag.normalized_rates
    running = np.maximum.accumulate(seq)
    verdict = "bounded" if running[-1] <= 1.5 * float(np.median(running)) else "unbounded"
    return seq, verdict
