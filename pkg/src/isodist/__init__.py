"""Distributed isotonic regression at desk scale.

Estimators for a decreasing regression function when the data sit on many
servers: bin-and-merge followed by central isotonization (pooled), the
all-data-on-one-machine fit (global), and the isotonize-then-average
baseline (bdse), plus the Monte Carlo machinery that compares them.
"""

from .chernoff import (
    ChernoffConfig,
    limit_scale_direct,
    limit_scale_inverse,
    sample_chernoff,
    scaled_argmax_check,
    two_sample_ks,
)
from .cluster import (
    AllocPolicy,
    Allocation,
    BinSummaryMatrix,
    CommLedger,
    Regressogram,
    allocate,
    bin_index,
    bin_indices,
    local_summaries,
    merge_summaries,
    regressogram_from_data,
)
from .estimators import (
    BdseFit,
    GlobalFit,
    PooledFit,
    bdse_direct,
    bdse_fit,
    bdse_inverse,
    check_switch,
    check_switch_global,
    global_fit,
    global_inverse,
    pooled_fit,
    pooled_inverse,
    tilde_F_inverse,
    v_n,
)
from .experiments import (
    ExperimentConfig,
    RiskReport,
    SweepReport,
    TailReport,
    bins_rule,
    default_levels,
    limit_law_check,
    mc_risk,
    superefficiency_sweep,
    tail_diagnostic,
)
from .isotonic import (
    AntitonicFit,
    CusumDiagram,
    WeightedSeries,
    brute_force_antitonic,
    lcm_left_slopes,
    pava_antitonic,
)
from .models import (
    Constants,
    Dataset,
    LinearDensity,
    LinearMu,
    ModelSpec,
    PerturbedMu,
    PopulationSpec,
    TabulatedMu,
    UniformDensity,
    f_infinity,
    generate_dataset,
    growing_mixture_model,
    sigma_infinity_sq,
    uniform_model,
    validate_assumptions,
)
from .stepfn import Side, StepFunction, extend_g, generalized_inverse

__version__ = "0.1.0"
