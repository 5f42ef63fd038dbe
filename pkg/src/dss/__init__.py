"""Training-free multi-instance camouflaged object segmentation.

Discover: cluster patch features and refine clusters into object-coherent
soft masks. Segment: turn similarity maps into box prompts for a promptable
segmenter. Select: score candidates heuristically, then run an ascending
pairwise judge tournament to pick the final mask.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    BackendError,
    Box,
    Config,
    ConfigError,
    ContractError,
    DegenerateClusterError,
    DimensionError,
    PatchFeatureMap,
    PixelMask,
    ProtocolError,
    SoftPatchMask,
    iou,
    load_config,
    or_merge,
    pca_reduce,
    upsample_mask,
    upsample_values,
)
