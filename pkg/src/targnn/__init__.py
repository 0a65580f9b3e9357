"""Cross-subject EEG emotion recognition over learnable channel graphs.

Pipeline: band-power differential entropy per channel, a channel graph
initialized from normalized mutual information, simple graph convolution with
a trainable adjacency, per-node adversarial domain heads whose uncertainty
drives an attention re-weighting, and a leave-one-subject-out harness.
"""

from .dataio import (
    BAND_NAMES,
    Epoch,
    FeatureSample,
    RawRecording,
    SyntheticSpec,
    generate_synthetic,
    load_features,
    load_raw,
    save_features,
    slice_epochs,
)
from .features import (
    BANDS,
    VAR_FLOOR,
    BandDefinition,
    band_power,
    bandlimit,
    differential_entropy,
    extract_features,
)
from .graph import (
    AdjacencyState,
    build_initial_adjacency,
    mutual_information,
    normalize,
    normalized_mi,
    symmetrize,
)
from .model import (
    ForwardTrace,
    ModelHyper,
    ModelParams,
    attention_weights,
    domain_heads,
    emotion_head,
    forward,
    grl,
    grl_backward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sgc_forward,
)
from .montage import CHANNELS, ELECTRODE_COORDS, GLOBAL_PAIRS, LABELS
from .train import (
    VARIANTS,
    DomainBatch,
    FoldReport,
    Gradients,
    LossParts,
    LosoResult,
    SweepPoint,
    TrainConfig,
    backward,
    distance_init_adjacency,
    evaluate,
    frozen_attention,
    loso,
    loss,
    predict_logits,
    sgd_step,
    sweep,
    train_fold,
)

__version__ = "0.1.0"

__all__ = [
    "BAND_NAMES",
    "BANDS",
    "CHANNELS",
    "ELECTRODE_COORDS",
    "GLOBAL_PAIRS",
    "LABELS",
    "VARIANTS",
    "VAR_FLOOR",
    "AdjacencyState",
    "BandDefinition",
    "DomainBatch",
    "Epoch",
    "FeatureSample",
    "FoldReport",
    "ForwardTrace",
    "Gradients",
    "LossParts",
    "LosoResult",
    "ModelHyper",
    "ModelParams",
    "RawRecording",
    "SweepPoint",
    "SyntheticSpec",
    "TrainConfig",
    "attention_weights",
    "backward",
    "band_power",
    "bandlimit",
    "build_initial_adjacency",
    "differential_entropy",
    "distance_init_adjacency",
    "domain_heads",
    "emotion_head",
    "evaluate",
    "extract_features",
    "forward",
    "frozen_attention",
    "generate_synthetic",
    "grl",
    "grl_backward",
    "init_params",
    "load_checkpoint",
    "load_features",
    "load_raw",
    "loso",
    "loss",
    "mutual_information",
    "normalize",
    "normalized_mi",
    "predict_logits",
    "save_checkpoint",
    "save_features",
    "sgc_forward",
    "sgd_step",
    "slice_epochs",
    "sweep",
    "symmetrize",
    "train_fold",
]
