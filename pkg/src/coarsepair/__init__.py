"""Image-to-image translation supervised by coarsely aligned image pairs.

Frames from repeated traversals of one route are paired by nearest GPS pose;
such pairs share background context but differ in foreground objects, camera
pose, and stochastic appearance. The package provides the pairing machinery,
misalignment-aware loss terms (foreground-masked window-searched L1 and a
masked patch-contrastive loss), toy-scale models and training, a synthetic
benchmark with exact ground truth, and evaluation/ablation protocols.
"""

from .errors import (
    ConfigError,
    DegenerateInputError,
    IntegrityError,
    InvalidInputError,
    NumericAbortError,
)
from .losses import (
    NCEConfig,
    ObjectiveWeights,
    WindowSpec,
    combined_objective,
    discriminator_batch,
    gan_loss_d,
    gan_loss_g,
    l1_misalign,
    l1_plain,
    l1_star,
    misalign_map,
    nce_cross_entropy,
    patchnce_star,
    window_indices,
)
from .masking import (
    InstanceProposals,
    Region,
    build_foreground_mask,
    downsample_mask,
    joint_background,
)
from .models import (
    DiscriminatorSpec,
    ExtractorSpec,
    FeatureExtractor,
    Generator,
    GeneratorSpec,
    ModelBundle,
    MultiScaleDiscriminator,
    RandomConvEmbedder,
    build_models,
    load_checkpoint,
    restore_models,
    save_checkpoint,
)
from .pairing import (
    CoarsePairManifest,
    PairRecord,
    PoseLog,
    pair_traversals,
    split_by_location,
)
from .evaluation import (
    FeatureStats,
    MetricsReport,
    evaluate_translations,
    feature_stats,
    frechet_distance,
    localize,
    masked_psnr,
    stats_from_embeddings,
)
from .synthdata import (
    AdverseTransform,
    SynthConfig,
    SynthDataset,
    SynthPairRecord,
    apply_adverse,
    generate_dataset,
    generate_scene,
    invert_adverse,
)
from .training import (
    LossTerms,
    LossToggles,
    ModelConfig,
    RunManifest,
    TrainConfig,
    apply_preset,
    lr_at,
    run_training,
    train_step,
)

__version__ = "0.1.0"
