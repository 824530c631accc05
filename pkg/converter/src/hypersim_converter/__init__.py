"""Hypersim to frame-bundle converter.

Reads Hypersim's on-disk layout (HDF5 rasters, camera keyframe files,
per-scene metadata CSVs) and writes the neutral frame-bundle directory
format: one directory per frame holding meta.json plus flat little-endian
binary rasters. Nothing here imports the downstream toolkit; the bundle
format is the only contract between the two.
"""

from .convert import DEFAULT_REMAP, convert_frame, convert_scene, write_split_manifest
from .index import (
    BadIndex,
    HypersimSceneIndex,
    MissingAsset,
    UnknownSemanticId,
    build_index,
)

__version__ = "0.1.0"

__all__ = [
    "BadIndex",
    "DEFAULT_REMAP",
    "HypersimSceneIndex",
    "MissingAsset",
    "UnknownSemanticId",
    "build_index",
    "convert_frame",
    "convert_scene",
    "write_split_manifest",
]
