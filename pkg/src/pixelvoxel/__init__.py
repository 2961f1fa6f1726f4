"""Desk-scale semantic RGB-D mapping with a two-branch pixel/point
segmentation network, softmax-weighted score-map fusion and a Bayesian
semantic voxel map."""

from .autodiff import (NonFiniteError, Parameter, ShapeError, Tensor,
                       finite_difference_gradcheck, load_checkpoint,
                       save_checkpoint, sgd_momentum_step)
from .config import PipelineConfig, load_config, palette, save_config
from .fusion import FusionStack, build_fusion_topology, softmax_weighted_fusion
from .geometry import (CameraIntrinsics, PointCloud, Pose, backproject_depth,
                       load_trajectory, transform_cloud, uniform_downsample)
from .losses import (ClassStats, ConfusionMatrix, class_frequencies,
                     class_weight, lr_poly, lr_step, seg_metrics,
                     weighted_nll_loss)
from .mapping import (LabeledVoxel, VoxelMap, bayes_update, export_ply,
                      integrate_labeled_cloud, map_from_ply, parse_ply,
                      voxel_accuracy)
from .model import PixelVoxelNet, build_network
from .pixelnet import LayerSpec, PixelNet, receptive_field, vgg16_prefix_layers
from .synth import synth_scene
from .voxelnet import VoxelNet, reshape_backproject

__version__ = "0.1.0"
