"""Numerical laboratory for transfer operators of coupled expanding map
lattices: finite-window states and couplings, Ulam-discretized operators
with leading eigen-data, spectral gap and correlation decay, and
trajectory-level CLT / invariance-principle diagnostics."""

__version__ = "0.1.0"

from .lattice import (
    Coupling,
    CouplingConstantEstimate,
    FiniteState,
    MetricParams,
    NodeMap,
    Potential,
    apply_T,
    apply_bar_tau,
    apply_coupling,
    doubling_map,
    embed,
    enumerate_inverse_branches,
    estimate_coupling_constant,
    invert_coupling,
    metric_d,
    perturbed_doubling_map,
    project,
    state,
)
from .observables import (
    constant_potential,
    decaying_sine_potential,
    node_coordinate,
    node_sine_potential,
    random_trig_observable,
    srb_potential,
    zero_potential,
)
from .transfer import (
    ConeParams,
    EigenData,
    Grid,
    UlamOperator,
    check_conformality,
    check_lasota_yorke,
    check_Pk_cauchy,
    cone_membership,
    estimate_holder_seminorm,
    eval_coupled_L,
    eval_Pk,
    leading_eigenpair,
    load_operator,
    random_admissible_box,
    save_eigen_data,
    save_operator,
    ulam_matrix,
)
from .spectral import (
    SpectrumReport,
    TwistedOperator,
    check_twisted_bound,
    operator_correlation,
    spectral_gap,
    stationary_distribution,
    twisted_matrix,
    variance_from_twisted_curvature,
    variance_green_kubo,
)
from .harness import (
    AsipDiagnostics,
    AutocorrelationFit,
    CltResult,
    EnsembleConfig,
    asip_diagnostic,
    autocorrelation_fit,
    clt_test,
    ks_distance_to_normal,
    simulate_ensemble,
)
from .cli import (
    ConfigError,
    ExperimentConfig,
    RunReport,
    emit_report,
    parse_config,
    run_experiment,
)
