"""Role-play scenes for language models: craft scenes, run them with a
narrator and character agents, judge the trajectories, and export
fine-tuning data. Everything replays deterministically from recorded
script stores."""

from .domain import (
    Action,
    CharacterProfile,
    Environment,
    MetricScores,
    Scene,
    SceneQuality,
    Trajectory,
    TrajectoryStep,
    load_scene,
    load_scene_dir,
    load_trajectory,
    scene_errors,
    store_scene,
    store_trajectory,
    validate_scene,
)
from .engine import SceneRun, run_batch, run_scene
from .evaluation import (
    EvaluationRecord,
    aggregate,
    cronbach_alpha,
    evaluate_runs,
    pearson,
    score_trajectory,
    validity_report,
)
from .factory import (
    SftExample,
    build_sft,
    export_dataset,
    reflective_rewrite,
    select_guided,
)
from .forge import AcceptancePolicy, CraftConfig, SceneForge, craft
from .gateway import (
    ChatRequest,
    ChatResponse,
    Gateway,
    GatewayConfig,
    PriceTable,
    UsageLedger,
    build_gateway,
    scene_cost_report,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AcceptancePolicy",
    "ChatRequest",
    "ChatResponse",
    "CharacterProfile",
    "CraftConfig",
    "Environment",
    "EvaluationRecord",
    "Gateway",
    "GatewayConfig",
    "MetricScores",
    "PriceTable",
    "Scene",
    "SceneForge",
    "SceneQuality",
    "SceneRun",
    "SftExample",
    "Trajectory",
    "TrajectoryStep",
    "UsageLedger",
    "aggregate",
    "build_gateway",
    "build_sft",
    "craft",
    "cronbach_alpha",
    "evaluate_runs",
    "export_dataset",
    "load_scene",
    "load_scene_dir",
    "load_trajectory",
    "pearson",
    "reflective_rewrite",
    "run_batch",
    "run_scene",
    "scene_cost_report",
    "scene_errors",
    "score_trajectory",
    "select_guided",
    "store_scene",
    "store_trajectory",
    "validate_scene",
    "__version__",
]
