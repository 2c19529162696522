"""Weighted-sum-rate beamforming for downlink MISO rate-splitting.

Classic solvers (FP alternation, single-loop PGD) and a deep-unfolded
learned counterpart, plus dataset tooling and an experiment harness.
"""

from .model import (
    BeamformerSet,
    FeasibilityReport,
    ProblemInstance,
    RateAllocation,
    RateReport,
    SystemConfig,
    check_feasibility,
    compute_rates,
    dbm_to_watts,
    make_instance,
    wsr,
)
from .transform import (
    AuxState,
    NonPositivePhiError,
    SurrogateTerms,
    penalized_objective,
    surrogate_terms,
    update_aux,
)
from .pgd import (
    GradientSet,
    SolverOptions,
    SolverTrace,
    StepSizes,
    ascent_step,
    gradients,
    init_beamformers,
    mrt_beamformers,
    project_beamformers,
    project_common_rate,
    solve_fp_oracle,
    solve_pgd,
)
from .unfold import (
    EnvVector,
    ForwardTrace,
    LayerParams,
    NetworkParams,
    TrainConfig,
    batch_loss,
    env_vector,
    init_params,
    layer_forward,
    network_forward,
    param_gradients,
    params_from_json,
    params_to_json,
    train,
)
from .datagen import (
    DatasetFile,
    DatasetRecord,
    generate_dataset,
    label_dataset,
    label_instance,
    read_dataset,
    sample_instance,
    write_dataset,
)
from .metrics import Metrics, TimingStats, asr, bench, evaluate, ood_transform

__version__ = "0.1.0"
