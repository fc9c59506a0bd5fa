"""Desk-scale laboratory for class-incremental semantic segmentation.

Synthetic scenes, a tiny per-pixel classifier, pseudo-label fusion with
conflict reduction, self-entropy-regularized retraining, and the
FT/Joint reference methods, all bit-reproducible from a single seed.
"""

from .continual import (
    METHODS,
    MethodConfig,
    RunRecord,
    build_joint_init,
    evaluate_model,
    finetune_new_task,
    persist_run_record,
    run_scenario,
    self_train_retrain,
    train_first_task,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    GenerationExhausted,
)
from .features import FEATURE_DIM, extract_features, feature_map
from .fileio import (
    load_checkpoint,
    read_label_file,
    read_ppm,
    render_labels,
    save_checkpoint,
    write_label_file,
    write_ppm,
)
from .metrics import IoUReport, accumulate, iou_report, new_confusion, write_iou_csv
from .model import (
    ModelParams,
    TrainConfig,
    expand_head,
    gradient,
    init_params,
    predict_map,
    total_loss,
)
from .pseudo import PseudoLabelMap, fuse_conflict_reduction, fuse_naive, pseudo_label
from .relatedness import (
    FeatureStats,
    collection_stats,
    fit_stats,
    frechet_distance,
    pool_features,
    sym_sqrt,
)
from .scenes import (
    PRESETS,
    AuxiliaryPool,
    GeneratorConfig,
    GeneratorShift,
    ScenarioSpec,
    SceneItem,
    SessionDataset,
    build_aux_pool,
    build_eval_set,
    build_sessions,
    default_universe,
    generate_scene,
    mask_labels,
)
from .seeding import derive_rng

__version__ = "0.1.0"
