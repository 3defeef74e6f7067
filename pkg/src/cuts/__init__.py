"""Unsupervised multi-scale image segmentation toolkit.

Pipeline: a small convolutional encoder is trained on unlabeled images
with a combined contrastive + patch-reconstruction objective, producing
one embedding per pixel; diffusion condensation then coarse-grains the
embeddings into a hierarchy of segmentations, from which label maps,
persistent structures, and hint-binarized masks are derived and scored.
"""

from .condense import (
    CondensationTrace,
    CondenseConfig,
    PointCloud,
    condense_run,
    diffusion_operator,
    persistent_structures,
    spectral_kmeans,
)
from .encoder import (
    AdamState,
    ArchSpec,
    EmbeddingField,
    EncoderParams,
    Patch,
    extract_patch,
    forward,
    init_params,
    load_model,
    reconstruct_patch,
    save_model,
)
from .imgio import (
    BinaryMask,
    Image,
    LabelMap,
    load_image,
    read_label_map,
    render_label_map,
    resize_bilinear,
    save_image,
    write_label_map,
)
from .metrics import (
    MetricsReport,
    binary_summary,
    dice,
    ergas,
    hausdorff,
    multiclass_summary,
    permute_match,
    rmse,
    ssim_image,
)
from .mining import PairSet, mine_pairs, sample_anchors, ssim_patch
from .objective import (
    LossBreakdown,
    TrainConfig,
    combined_loss,
    contrastive_loss,
    reconstruction_loss,
    train,
    train_step,
)
from .segment import GranularitySelector, binarize_with_hint, label_map_at
from .synth import generate_corpus, synth_pair

__version__ = "0.1.0"
