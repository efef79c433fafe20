"""Self-supervised pre-training for scene-scale point clouds.

Pipeline: stochastic two-view generation over scene point clouds, point
correspondence in the original coordinate frame, contrastive cross masks
with a learnable token, and a combined contrastive + masked color/normal
reconstruction objective, all with exact analytic gradients and a small
trainable encoder for end-to-end runs at desk scale.
"""

from .augment import AugmentParams
from .cloud import PointCloud, SceneSpec, synth_scene
from .config import Config
from .correspond import CorrespondenceMap, SpatialIndex, match_views, match_views_bruteforce
from .errors import (
    DataError,
    EmptyViewError,
    MscError,
    NoPositivePairsError,
    NumericalError,
    ParseError,
    UsageError,
)
from .io import load_cloud, save_cloud
from .maskgen import CrossMaskPair, PatchPartition, apply_mask_token, partition_patches, sample_cross_masks
from .objective import LossBreakdown, ReconHeads, combined_loss, info_nce, similarity_matrix
from .rng import Rng
from .surfel import NormalEstimate, estimate_normals
from .viewgen import MixedBatch, View, ViewPair, generate_pair, generate_view, mix_queries

__version__ = "0.1.0"
