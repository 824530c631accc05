"""Room-envelope dataset construction and layout-reconstruction evaluation."""

from .core import (
    AxisConvention,
    CameraModel,
    FrameBundle,
    LayoutClassSet,
    Ray,
    default_layout_classes,
    pixel_ray,
    point_to_ray_distance,
    project,
    world_to_canonical_camera,
)
from .aggregate import AttributedPointCloud, VoxelParams, aggregate_frames, voxel_downsample
from .envelope import (
    EnvelopeSample,
    RasterConfig,
    Visibility,
    build_envelope,
    classify_visibility,
    filter_layout,
    render_layout_view,
)
from .metrics import (
    AlignmentResult,
    ChamferMode,
    EvalReport,
    align_scale_shift,
    chamfer,
    evaluate_sample,
    f_score,
)
from .normalstats import VmfKde, estimate_normals, normal_likelihood_analysis, vmf_density

__version__ = "0.1.0"
