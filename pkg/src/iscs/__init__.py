"""Invariant salient channel space discovery and desk-scale validation.

The package finds grouped channel structure in convolutional compression
encoders purely from their weights, emits a deterministic permutation plus a
slice-interleaved grouping plan, and checks the resulting importance claims
with a self-contained patch-PCA codec, an ablation harness, and a
slice-parallel scheduling simulator.
"""

__version__ = "0.1.0"

from .bitstream import RateReport, StreamHeader, decode_image, encode_image
from .codec import (
    LatentBlock,
    ToyCodecModel,
    encode_latents,
    export_encoder_weights,
    fit,
    jacobi_eigendecompose,
    load_model,
    save_model,
    synthesize,
)
from .discovery import (
    ChannelGroup,
    DiscoveryParams,
    IscsStructure,
    discover,
    flag_bias_dominated,
)
from .errors import (
    ConfigError,
    Error,
    ImageFormatError,
    IntegrityError,
    ModelError,
    TensorFileError,
)
from .evaluation import ablation_sweep, ms_ssim, psnr, spearman, ssim
from .grouping import (
    GroupingPlan,
    IscsManifest,
    build_manifest,
    build_plan,
    invert_permutation,
    load_manifest,
    save_manifest,
    slice_group,
)
from .importance import ChannelScores, compute_scores, rank_descending
from .scheduler import CostModel, build_flat_dag, build_grouped_dag, simulate
from .synthetic import one_over_f_images, plant_kernel_set
from .tensor_io import (
    ConvKernelSet,
    Image,
    extract_kernel_set,
    read_image,
    read_tensor_file,
    write_image,
)

__all__ = [
    "__version__",
    "ChannelGroup",
    "ChannelScores",
    "ConfigError",
    "ConvKernelSet",
    "CostModel",
    "DiscoveryParams",
    "Error",
    "GroupingPlan",
    "Image",
    "ImageFormatError",
    "IntegrityError",
    "IscsManifest",
    "IscsStructure",
    "LatentBlock",
    "ModelError",
    "RateReport",
    "StreamHeader",
    "TensorFileError",
    "ToyCodecModel",
    "ablation_sweep",
    "build_flat_dag",
    "build_grouped_dag",
    "build_manifest",
    "build_plan",
    "compute_scores",
    "decode_image",
    "discover",
    "encode_image",
    "encode_latents",
    "export_encoder_weights",
    "extract_kernel_set",
    "fit",
    "flag_bias_dominated",
    "invert_permutation",
    "jacobi_eigendecompose",
    "load_manifest",
    "load_model",
    "ms_ssim",
    "one_over_f_images",
    "plant_kernel_set",
    "psnr",
    "rank_descending",
    "read_image",
    "read_tensor_file",
    "save_manifest",
    "save_model",
    "simulate",
    "slice_group",
    "spearman",
    "ssim",
    "synthesize",
    "write_image",
]
