"""langfield: a trainable neural implicit field that fuses scene geometry with
vision-language embeddings, trained by differentiable volume rendering from
posed RGB-D frames and queried for open-vocabulary segmentation."""

from .errors import FormatError, LangfieldError, TrainingDiverged, ValidationError
from .field import FieldConfig, FieldParams, MlpConfig, PointOutput, eval_point, eval_points_batch
from .geometry import (
    Box,
    CameraIntrinsics,
    Dataset,
    Frame,
    Pose,
    Ray,
    load_dataset,
    pixel_to_ray,
    sample_ray_batch,
    save_dataset,
)
from .hashgrid import HashGridConfig, HashGridParams, encode, encode_backward
from .kernels import BACKEND as KERNEL_BACKEND
from .render import (
    RenderOutput,
    SampleSet,
    composite,
    composite_backward,
    render_pixel,
    render_view,
    stratified_samples,
)
from .segmentation import (
    LabelCatalog,
    SegMetrics,
    classify_features,
    compute_metrics,
    query_heatmap,
    render_feature_map,
)
from .synthetic import SceneSpec, analytic_render, default_scene, generate_dataset
from .training import LossReport, LossWeights, TrainConfig, compute_loss, grad_check, train

__version__ = "0.1.0"
