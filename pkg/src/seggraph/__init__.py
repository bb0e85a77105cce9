"""Few-shot 3D part segmentation via multi-view mask lifting and segment-graph propagation."""

from .geometry import CameraView, PointCloud, make_cameras, normalize_cloud, project_point, rasterize_visibility
from .graph import SegmentGraph, build_segment_graph, min_pairwise_distance, point_set_iou
from .masks import MaskStack, RegionImage, Segment, SegmentSet, decompose_view_masks, lift_segments
from .model import AblationFlags, ModelConfig
from .train import TrainConfig, mean_iou, predict_labels, train_fewshot

__version__ = "0.1.0"
