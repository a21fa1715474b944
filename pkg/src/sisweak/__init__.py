"""Inexact-supervision tooling for salient instance segmentation."""

from .core import BoundingBox, connected_components, iou, mask_iou, read_tensor, write_tensor

__all__ = ["BoundingBox", "connected_components", "iou", "mask_iou", "read_tensor", "write_tensor"]
__version__ = "0.1.0"
