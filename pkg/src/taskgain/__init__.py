"""Active task selection for multi-agent communication graphs.

The package picks which training tasks are worth running through an
expensive agent simulator.  It treats the graph's edge logits as the unknown
in an ensemble Kalman inversion, scores each candidate task by how much one
assimilation step would move the ensemble (Gaussian information gain), and
spends the evaluation budget through a low-dimensional surrogate.  Selected
tasks then drive score-maximizing policy-gradient training of the edge
probabilities, and matched-budget baselines plus bootstrap comparisons
quantify what the selection bought.
"""

from .baselines import egl_score, emc_score, fisher_greedy, fisher_matrix
from .config import load_config
from .eki import (
    EkiConfig,
    Ensemble,
    ScoreCache,
    batch_update,
    draw_prior_ensemble,
    one_step_utility,
    predict,
    update,
)
from .errors import ConfigError, NumericalError
from .experiment import (
    METHODS,
    ExperimentConfig,
    RunResult,
    compare_methods,
    evaluate_logits,
    run_experiment,
    select_once,
    sensitivity_suite,
    train_once,
)
from .gain import UtilityRecord, diagnostics, kl_diag_gauss, rank_records
from .graph import (
    CommMask,
    GraphLogits,
    edge_probs,
    enumerate_masks,
    flatten,
    load_checkpoint,
    mask_log_prob,
    sample_mask,
    save_checkpoint,
    unflatten,
)
from .selection import (
    FarthestPointSelector,
    SelectionBudgets,
    SelectionResult,
    farthest_point_select,
    run_selection_pipeline,
    top_k,
)
from .simulate import (
    AgentProfile,
    ForwardModel,
    SimConfig,
    TaskRecord,
    default_profiles,
    exact_expected_score,
    make_pool,
    read_pool,
    rollout,
    write_pool,
)
from .stats import ReuseReport, SummaryStats, bench_reuse, bootstrap_ci, summary_stats
from .surrogate import (
    AcquisitionSchedule,
    MaternGP,
    PLSReducer,
    acquisition_loop,
    thompson_batch,
)
from .training import AdamState, TrainSchedule, adam_step, reinforce_gradient, train

__version__ = "0.1.0"

__all__ = [
    "AcquisitionSchedule",
    "AdamState",
    "AgentProfile",
    "CommMask",
    "ConfigError",
    "EkiConfig",
    "Ensemble",
    "ExperimentConfig",
    "FarthestPointSelector",
    "ForwardModel",
    "GraphLogits",
    "METHODS",
    "MaternGP",
    "NumericalError",
    "PLSReducer",
    "ReuseReport",
    "RunResult",
    "ScoreCache",
    "SelectionBudgets",
    "SelectionResult",
    "SimConfig",
    "SummaryStats",
    "TaskRecord",
    "TrainSchedule",
    "UtilityRecord",
    "acquisition_loop",
    "adam_step",
    "batch_update",
    "bench_reuse",
    "bootstrap_ci",
    "compare_methods",
    "default_profiles",
    "diagnostics",
    "draw_prior_ensemble",
    "edge_probs",
    "egl_score",
    "emc_score",
    "enumerate_masks",
    "evaluate_logits",
    "exact_expected_score",
    "farthest_point_select",
    "fisher_greedy",
    "fisher_matrix",
    "flatten",
    "kl_diag_gauss",
    "load_checkpoint",
    "load_config",
    "make_pool",
    "mask_log_prob",
    "one_step_utility",
    "predict",
    "rank_records",
    "read_pool",
    "reinforce_gradient",
    "rollout",
    "run_experiment",
    "run_selection_pipeline",
    "sample_mask",
    "save_checkpoint",
    "select_once",
    "sensitivity_suite",
    "summary_stats",
    "thompson_batch",
    "top_k",
    "train",
    "train_once",
    "unflatten",
    "update",
    "write_pool",
]
