"""Transfer 3D Gaussian Splatting scale and opacity onto point clouds.

The package covers the preprocessing side of Gaussian-guided point-cloud
segmentation: Mahalanobis correspondence between points and splats, attribute
aggregation, scale/semantic boundary pseudo-labels, the training-loss kernels
and segmentation metrics.
"""
from .augment import aggregate_attributes, augment_cloud, compute_weights, match_point
from .boundary import (
    extract_boundaries,
    extract_scale_boundary,
    extract_semantic_boundary,
    scale_magnitude,
    union_boundary,
)
from .config import PipelineConfig, load_config
from .spatial import CentroidIndex, build_index, radius_query
from .types import (
    AugmentedCloud,
    AugmentedPoint,
    BoundaryLabels,
    CloudPoint,
    CorrespondenceSet,
    Covariance3,
    GaussianPrimitive,
    GaussianSet,
    PointCloud,
    ValidationError,
    covariance_from,
    mahalanobis_distance,
)

__version__ = "0.1.0"
