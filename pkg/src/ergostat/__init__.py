"""ergostat: numerical statistical laws of piecewise expanding interval maps.

Modules by concern: `maps` (dynamics, observables, orbits), `transfer`
(Ulam operator, pressure, rate functions, Green-Kubo variance),
`measures` (log-weighted empirical measures and Kantorovich distance),
`asclt` (almost-sure CLT experiments for sums and running maxima),
`erdos_renyi` (moving-average maxima, rate-function estimation,
large-deviation Monte Carlo), `entropy` (cylinders, return times,
entropy CLTs), and `config`/`cli` (experiment orchestration).
"""

__version__ = "0.1.0"

from .maps import (  # noqa: F401
    Branch,
    Observable,
    Orbit,
    PiecewiseMap,
    birkhoff_sums,
    coboundary,
    coin,
    log_derivative,
    make_map,
    make_observable,
    orbit,
    sawtooth,
)
from .measures import (  # noqa: F401
    DiracLaw,
    GaussianLaw,
    HalfGaussianLaw,
    WeightedEmpiricalMeasure,
    build_empirical,
    kantorovich,
    kantorovich_bruteforce,
    law_cdf,
)
from .transfer import (  # noqa: F401
    PressureCurve,
    RateFunction,
    UlamOperator,
    center_observable,
    green_kubo_sigma2,
    invariant_density,
    legendre,
    pressure_curve,
    ulam_matrix,
)
from .asclt import asclt_run, maxima_run, rate_diagnostic  # noqa: F401
from .erdos_renyi import (  # noqa: F401
    er_law_check,
    decoupling_check,
    ld_probability_mc,
    moving_max,
    rate_estimator,
)
from .entropy import (  # noqa: F401
    cylinder_interval,
    cylinder_measure,
    itinerary,
    ow_run,
    return_time,
    rokhlin_entropy,
    smb_run,
)
