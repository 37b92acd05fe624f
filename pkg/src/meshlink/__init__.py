"""Association of point clouds, tiled meshes and oriented images.

The mesh is the hub: points are linked to faces by distance thresholds
(:mod:`meshlink.pcma`), pixels are linked to faces by ray casting
(:mod:`meshlink.imgma`), and points meet pixels through those two links
(:mod:`meshlink.pcimga`).  :mod:`meshlink.transfer` moves labels and
features along any of the links.
"""

from .errors import InputError, InvariantViolation, MeshlinkError
from .imgma import ImgmaConfig, SparsePixelCloud, imgma_run, select_visible_tiles
from .metrics import association_rates, forward_backward_check, weighted_average_precision
from .pcimga import pcimga_explicit, visible_points
from .pcma import (H3D_SCHEDULE, V3D_SCHEDULE, BoundaryPolicy, FaceAssociation, PcmaConfig,
                   ThresholdSchedule, association_radius, pcma_run)
from .scene import CameraModel, LabelScheme, MeshTile, PointCloud, TiledMesh
from .transfer import Direction, Kind, Mode, TransferSpec, run_transfer

__version__ = "0.1.0"

__all__ = [
    "InputError", "InvariantViolation", "MeshlinkError",
    "ImgmaConfig", "SparsePixelCloud", "imgma_run", "select_visible_tiles",
    "association_rates", "forward_backward_check", "weighted_average_precision",
    "pcimga_explicit", "visible_points",
    "H3D_SCHEDULE", "V3D_SCHEDULE", "BoundaryPolicy", "FaceAssociation", "PcmaConfig",
    "ThresholdSchedule", "association_radius", "pcma_run",
    "CameraModel", "LabelScheme", "MeshTile", "PointCloud", "TiledMesh",
    "Direction", "Kind", "Mode", "TransferSpec", "run_transfer",
]
