"""Deterministic simulator and benchmark harness for distributed
optimization under bidirectional lossy compression."""

from .compressors import (
    CompressorError,
    CompressorSpec,
    SparseMessage,
    apply_collection,
    apply_compressor,
    apply_natural,
    apply_perm_k_collection,
    apply_rand_k,
    apply_top_k,
    collection_theta,
    compose_spec,
    estimate_omega,
    estimate_theta,
    natural_spec,
    perm_k_spec,
    rand_k_spec,
    same_rand_k_spec,
    top_k_spec,
)
from .problems import (
    ChainProblem,
    MatrixFactorizationProblem,
    ProblemConstants,
    ProblemError,
    QuadraticEnsemble,
    SpectralNormError,
    chain_base_grad,
    chain_base_value,
    chain_eval,
    estimate_hessian_spread,
    generate_het_quadratic,
    load_ensemble,
    matfac_eval,
    prog,
    quad_constants,
    quad_grad,
    save_ensemble,
    spectral_norm,
    synthetic_matfac,
    tridiagonal_base,
    tridiagonal_norm,
    verify_functional_inequality,
)
from .algorithms import (
    AlgoConfig,
    AlgorithmError,
    DivergenceError,
    RunState,
    RunStreams,
    run_experiment,
)
from .tuning import (
    TheoryParams,
    TuningError,
    expected_coords,
    m3_beta_general,
    step_m3,
    step_m3_general,
    step_m3_pl,
    step_marinap_general,
    step_marinap_pl,
)
from .telemetry import (
    CommEvent,
    CostModel,
    TraceRecord,
    average_traces,
    charge,
    coords_to_target,
    read_trace_csv,
    trace_to_csv,
    write_trace,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    build_algo_config,
    build_problem,
    cmd_estimate,
    cmd_run,
    cmd_sweep,
    parse_config,
)

__version__ = "0.1.0"
