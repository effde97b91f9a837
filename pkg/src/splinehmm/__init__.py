"""Hidden Markov models with penalized B-spline emission densities.

Fitting is by direct numerical maximization of a penalized log-likelihood,
smoothing parameters are chosen by multifold cross-validation, and
uncertainty comes from a parametric bootstrap.
"""

from .basis import KnotGrid, SplineBasis, basis_for_data, build_basis
from .densities import (
    Density,
    NormalDensity,
    NormalMixtureDensity,
    SplineDensity,
    kld,
)
from .estimation import (
    FitConfig,
    FitError,
    FitResult,
    PenaltySpec,
    fit,
    initial_points,
    roughness_penalty,
)
from .hmm import (
    ForwardPass,
    HmmModel,
    forward_pass,
    log_likelihood,
    marginal_density,
    model_acf,
    sample_acf,
    simulate,
    stationary_distribution,
    viterbi,
    viterbi_with_score,
)
from .inference import (
    BootstrapEnsemble,
    DensityBand,
    JarqueBeraResult,
    ResidualSeries,
    bootstrap,
    density_band,
    jarque_bera,
    pseudo_residuals,
    tpm_intervals,
)
from .io import DataSet, ingest, load_model, save_model
from .selection import (
    CvReport,
    Partition,
    SmoothingGrid,
    cv_score,
    grid_walk,
    make_partitions,
    parametric_scan,
    select_num_states,
    select_smoothing,
)
from .simulation import SimReport, SimScenario, default_scenario, run_study, simulate_series

__version__ = "0.1.0"
