"""rlab: query-efficient black-box adversarial attacks with pluggable
patch-level distortion filters, steered by a dueling-DQN agent."""

from .agent import (
    ActionCodec,
    AgentConfig,
    AttackAction,
    DQNAgent,
    DuelingQNet,
    ReplayBuffer,
    action_space_size,
    q_values,
    select_action,
    sync_target,
    td_update,
)
from .engine import (
    AttackResult,
    EpisodeState,
    PDParams,
    StepOutcome,
    cleanup,
    evaluate,
    execute_step,
    greedy_policy,
    pd_targeted,
    pd_untargeted,
    random_policy,
    run_episode,
    train_agent,
)
from .exceptions import (
    CalibrationError,
    ConfigError,
    FormatError,
    GeometryError,
    NoDistortionError,
    ProtocolError,
    RlabError,
    ShapeError,
    TransportError,
)
from .filters import (
    DistortionLedger,
    FilterSpec,
    MaskCache,
    apply_filter_patch,
    calibrate_filters,
    register_filter,
    revert_patch,
)
from .image import (
    PatchGrid,
    apply_perturbation,
    l2_distance,
    linf_distance,
    make_patch_grid,
    perturbation,
    read_png,
    read_raw,
    write_png,
    write_raw,
)
from .metrics import (
    AttackSummary,
    CorruptionErrorMatrix,
    adversarial_error,
    mce_and_degradation,
    summarize,
    uce,
)
from .sensitivity import (
    SensitivityReport,
    StateVector,
    build_state,
    probe_add_sensitivity,
    probe_remove_sensitivity,
)
from .target import (
    ClassifierHandle,
    ReferenceModel,
    top_label,
    train_reference,
)

__version__ = "0.1.0"
