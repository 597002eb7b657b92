"""Hierarchical spatio-temporal segmentation and ejection-fraction toolkit.

Thin wrapper over the C++ core: model inference, scan orders, segmentation
metrics, disk-method EF geometry, synthetic clip rendering, and PGM I/O.
"""

from ._core import (
    Model,
    dice,
    ef_from_masks,
    ef_from_masks_biplane,
    ef_stats,
    extract_geometry,
    hd95,
    read_pgm,
    scan_order,
    synth_clip,
    total_loss,
    write_pgm,
)

__all__ = [
    "Model",
    "dice",
    "ef_from_masks",
    "ef_from_masks_biplane",
    "ef_stats",
    "extract_geometry",
    "hd95",
    "read_pgm",
    "scan_order",
    "synth_clip",
    "total_loss",
    "write_pgm",
]

__version__ = "0.1.0"
