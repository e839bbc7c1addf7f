"""Deep Q-learning variants for resource allocation under uncertainty."""

from .agents import (
    AgentConfig,
    DqnAgent,
    VARIANTS,
    VariantSpec,
    aggregate_votes,
    double_q_targets,
    load_checkpoint,
    make_agent,
)
from .env import EnvConfig, ResourceAllocEnv, StepResult, write_trajectory_csv
from .errors import ConfigurationError, NumericError
from .harness import (
    ComparisonTable,
    MetricsReport,
    RandomPolicy,
    RunConfig,
    TrainingLog,
    compare_variants,
    efficiency,
    emit_plot_data,
    evaluate,
    load_run_config,
    make_run_matrix,
    run_single,
    train,
)
from .nets import (
    NetworkParams,
    NetworkSpec,
    NoiseSample,
    adam_step,
    backward,
    clone_params,
    forward,
    init_params,
    load_params,
    sample_noise,
    save_params,
)
from .replay import (
    MaskedMemory,
    PrioritizedMemory,
    SumTree,
    Transition,
    UniformMemory,
    export_transitions_csv,
)

__version__ = "0.1.0"
