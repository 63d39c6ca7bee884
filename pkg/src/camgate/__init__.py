"""Activation-heatmap quality gate for CNN image classifiers.

The library runs a portable sequential CNN, attributes each prediction to a
convolutional layer's feature maps (gradient-weighted class activation
mapping), and judges every annotated test sample by how much of the
activation mass lands inside its ground-truth bounding boxes. The ``camgate``
command wraps the same pipeline for CI use.
"""

from .errors import CamGateError, ConfigurationError, InputError, UsageError
from .gradcam import (
    CombinedHeatmap,
    Heatmap,
    cam,
    channel_weights,
    combined,
    gradcam_for,
    normalize,
)
from .harness import (
    AnnotatedSample,
    BoundingBox,
    Policy,
    TestReport,
    Verdict,
    judge,
    load_annotations,
    overlap_score,
    run_suite,
)
from .imaging import ColorMap, Image, colorize, decode, resize_bilinear, superimpose
from .model import (
    InferenceRecord,
    LayerSpec,
    Model,
    class_score_gradient,
    forward,
    load_model,
)

__version__ = "0.1.0"

__all__ = [
    "CamGateError",
    "ConfigurationError",
    "InputError",
    "UsageError",
    "Heatmap",
    "CombinedHeatmap",
    "channel_weights",
    "cam",
    "normalize",
    "gradcam_for",
    "combined",
    "BoundingBox",
    "AnnotatedSample",
    "Policy",
    "Verdict",
    "TestReport",
    "load_annotations",
    "overlap_score",
    "judge",
    "run_suite",
    "Image",
    "ColorMap",
    "decode",
    "resize_bilinear",
    "colorize",
    "superimpose",
    "LayerSpec",
    "Model",
    "InferenceRecord",
    "load_model",
    "forward",
    "class_score_gradient",
    "__version__",
]
