"""Bridge from real images to SSPT episode manifests.

Runs a truncated pretrained-style convolutional backbone over image/mask
pairs and writes float32 feature maps plus nearest-neighbor-aligned binary
masks in the SSPT container, grouped into episodes by a JSON manifest. The
output directory is directly consumable by the matching harness; the two
packages share only the file formats.
"""

from .backbone import (
    FEATURE_STAGE,
    FeatureBackbone,
    WEIGHTS_AUTO,
    WEIGHTS_RANDOM,
    available_backbones,
)
from .errors import (
    BackboneError,
    DecodeError,
    ExportError,
    JobError,
    ShapeError,
)
from .export import (
    EpisodeJob,
    ExportJob,
    MASK_DOWNSAMPLING,
    export,
    job_from_file,
    self_episode_job,
)
from .imaging import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    downsample_mask,
    load_image,
    load_mask,
)
from .sspt_writer import (
    binary_mask_bytes,
    feature_bytes,
    write_binary_mask,
    write_feature,
)

__version__ = "0.1.0"

__all__ = [
    "BackboneError",
    "DecodeError",
    "EpisodeJob",
    "ExportError",
    "ExportJob",
    "FEATURE_STAGE",
    "FeatureBackbone",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "JobError",
    "MASK_DOWNSAMPLING",
    "ShapeError",
    "WEIGHTS_AUTO",
    "WEIGHTS_RANDOM",
    "available_backbones",
    "binary_mask_bytes",
    "downsample_mask",
    "export",
    "feature_bytes",
    "job_from_file",
    "load_image",
    "load_mask",
    "self_episode_job",
    "write_binary_mask",
    "write_feature",
]
