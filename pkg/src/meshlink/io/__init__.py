"""Readers and writers for every persisted artifact.

Binary formats are little-endian; every writer goes through a temporary
file and a rename, so failures leave no partial output behind.
"""

from .cameras import read_cameras, reprojection_error, write_cameras
from .config import RunConfig, read_config, write_config
from .fasc import read_face_assoc, write_face_assoc
from .labels import read_label_scheme, write_label_scheme
from .mesh import FileManifest, ManifestEntry, read_mesh_tiles, write_mesh_tiles
from .ply import read_point_cloud, write_point_cloud
from .reports import write_report
from .spxc import read_spxc, write_spxc

__all__ = [
    "read_cameras", "write_cameras", "reprojection_error",
    "RunConfig", "read_config", "write_config",
    "read_face_assoc", "write_face_assoc",
    "read_label_scheme", "write_label_scheme",
    "FileManifest", "ManifestEntry", "read_mesh_tiles", "write_mesh_tiles",
    "read_point_cloud", "write_point_cloud",
    "write_report",
    "read_spxc", "write_spxc",
]
