"""Adversarially trained tri-planar spleen segmentation on synthetic phantoms.

Large-kernel encoder-decoder generators (one per anatomical view) train
against a patch discriminator on 2D slices; per-view predictions are
assembled into 3D masks and fused by union plus morphology. A synthetic
enlarged-spleen phantom cohort makes the whole pipeline runnable and
testable without clinical data.
"""

from .fusion import FusionConfig, fuse_views, multi_view_segment, segment_volume
from .metrics import MetricsReport, dsc, volume_cc
from .models.gcn import GcnGenerator, GeneratorSpec
from .models.patchgan import DiscriminatorSpec, PatchDiscriminator, receptive_field
from .phantom import PhantomConfig, PhantomScan, generate_phantom, sample_cohort
from .pipeline import RunConfig, run_desk_pipeline
from .stats import wilcoxon_signed_rank
from .training import TrainConfig, Trainer, train_experiment
from .volio import ContrastMode, Mask, ViewAxis, Volume, read_mvol, write_mvol

__version__ = "0.1.0"

__all__ = [
    "ContrastMode",
    "DiscriminatorSpec",
    "FusionConfig",
    "GcnGenerator",
    "GeneratorSpec",
    "Mask",
    "MetricsReport",
    "PatchDiscriminator",
    "PhantomConfig",
    "PhantomScan",
    "RunConfig",
    "TrainConfig",
    "Trainer",
    "ViewAxis",
    "Volume",
    "__version__",
    "dsc",
    "fuse_views",
    "generate_phantom",
    "multi_view_segment",
    "read_mvol",
    "receptive_field",
    "run_desk_pipeline",
    "sample_cohort",
    "segment_volume",
    "train_experiment",
    "volume_cc",
    "wilcoxon_signed_rank",
    "write_mvol",
]
