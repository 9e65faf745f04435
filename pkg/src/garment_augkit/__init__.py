"""Garment-image augmentation with landmark tracking, heatmap codecs and evaluation tools."""
from .core import (
    LANDMARK_NAMES,
    CategoryDistribution,
    Image,
    Landmark,
    LandmarkSet,
    RngStream,
    Visibility,
    derive_stream,
    uniform,
)
from .warp import ElasticParams, elastic_warp, rotate_image, rotate_landmarks

__version__ = "0.1.0"

__all__ = [
    "LANDMARK_NAMES",
    "CategoryDistribution",
    "ElasticParams",
    "Image",
    "Landmark",
    "LandmarkSet",
    "RngStream",
    "Visibility",
    "derive_stream",
    "elastic_warp",
    "rotate_image",
    "rotate_landmarks",
    "uniform",
]
