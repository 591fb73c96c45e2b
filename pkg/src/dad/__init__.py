"""Difference-aware decoder for binary segmentation."""
from .backbones import FeaturePyramid, LayerPartition, build_backbone, extract_features, parse_partition, partition
from .blocks import FEM, FEMConfig, ConvBlockSpec, conv_block, fem, receptive_field
from .attention import DRA, ChannelAttention, PositionAttention
from .decoder import DAD, DAE, GMG, MFF, DecoderOutputs, ModelConfig, dad_forward, dem, dgm
from .errors import ConfigError, DADError, LoadError, ResourceError, ShapeError, ValidationError
from .losses import LossConfig, pixel_weights, total_loss, weighted_bce, weighted_iou
from .metrics import MetricReport, e_measure, mae, region_metrics, s_measure, weighted_f

__version__ = "0.1.0"
