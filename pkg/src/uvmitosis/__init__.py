"""UV-Net mitosis detection on H&E patches.

Submodules: :mod:`tensor` (autodiff engine), :mod:`uvnet` (architecture),
:mod:`stain` (Macenko normalisation), :mod:`targets` (Gaussian heatmaps),
:mod:`postprocess` (Otsu/median/watershed), :mod:`evaluation` (matching and
metrics) and :mod:`pipeline` (data, training, inference, CLI plumbing).
"""

from .evaluation import MetricsReport, compute_metrics, match_detections
from .postprocess import Detection, PostprocessConfig, detect
from .stain import StainParams, estimate_stain_matrix, normalize_to_target
from .targets import BoxAnnotation, GaussianSpec, render_heatmap
from .tensor import AdamConfig, HuberConfig, Parameter, Tensor, adam_step, huber_loss
from .uvnet import UVNetConfig, VBlockConfig, build_uvnet, uvnet_forward

__version__ = "0.1.0"
