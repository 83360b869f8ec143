"""brainunet: a lightweight 3D residual-attention U-Net segmentation toolkit.

Multi-modal (FLAIR, T1CE, T2W) brain tumor segmentation with a two-stage
pretrain/fine-tune training regime, Tversky-loss optimization, simulated MRI
artifact augmentation, Dice/IoU/HD95 evaluation, and sliding-window
full-volume inference.  Designed to stay small (~24M parameters, ~95 MB
checkpoints) so it runs on commodity hardware.
"""

from .augment import (
    AugmentConfig,
    apply_pipeline,
    ghosting_artifact,
    motion_artifact,
    random_flip,
    random_gamma,
    random_scale,
)
from .checkpoint import (
    CheckpointError,
    TransferReport,
    load_checkpoint,
    read_checkpoint_manifest,
    save_checkpoint,
    serialized_size,
    transfer_load,
)
from .inference import (
    SlidingWindowSpec,
    TimingRow,
    TimingTable,
    benchmark_inference,
    crop_predict,
    sliding_window_predict,
)
from .io import (
    CaseRecord,
    GeometryMismatchError,
    LabelMask,
    MultiModalVolume,
    NiftiFormatError,
    ScalarVolume,
    load_case,
    load_mask,
    load_volume,
    read_manifest,
    save_volume,
    stack_modalities,
    write_manifest,
)
from .losses import TverskyParams, tversky_index, tversky_loss
from .metrics import (
    HD95_EMPTY_SENTINEL,
    MetricsReport,
    compose_regions,
    dice_score,
    evaluate_case,
    hd95,
    iou_score,
    lesion_wise_dice,
    reports_to_csv,
    reports_to_json,
)
from .model import (
    AttentionGate3d,
    BrainUNet,
    ModelConfig,
    ResidualBlock3d,
    build_model,
    count_parameters,
    predict_probabilities,
)
from .optim import AdamState, adam_step, init_adam_state
from .phantom import generate_phantom
from .preprocess import (
    CropSpec,
    apply_crop,
    compute_crop,
    normalize,
    one_hot_decode,
    one_hot_encode,
    percentile_clip,
    restore_prediction,
)
from .train import (
    CrossValResult,
    EpochLog,
    TrainConfig,
    TrainResult,
    TrainingCase,
    cross_validate,
    finetune,
    make_folds,
    manifest_dataset,
    phantom_dataset,
    train,
)

__version__ = "0.1.0"
