"""YOLOv1 single-shot detection pipeline at desk scale.

Label conversion, grid-tensor codec, box-aware augmentation, the composite
loss with its gradient, forward-only inference for three architecture
variants, NMS and VOC mAP.
"""
from .geometry import BoxXYXY, BoxYolo, clamp_box, iou, voc_to_yolo, yolo_to_voc
from .tensor_codec import Detection, GridConfig, TargetTensor, decode, encode

__all__ = [
    "BoxXYXY", "BoxYolo", "Detection", "GridConfig", "TargetTensor",
    "clamp_box", "decode", "encode", "iou", "voc_to_yolo", "yolo_to_voc",
]
__version__ = "0.1.0"
