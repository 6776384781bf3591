"""Point cloud compression: octree/trisoup geometry, RAHT/predict/lifting colors, projection coding."""

from .attributes import attribute_decode, attribute_encode, generate_lod
from .cloud import PointCloud
from .codec import AttributeCodec, GeometryCodec, PointCloudCodec
from .container import CorruptStreamError
from .geometry import decode_geometry, encode_geometry_lossless, encode_geometry_trisoup
from .metrics import bd_stats, d_rms, d_s_rms, evaluate, psnr_color, psnr_geometry
from .ply import PlyError, read_ply, write_ply

__version__ = "0.1.0"

__all__ = [
    "AttributeCodec", "CorruptStreamError", "GeometryCodec", "PlyError", "PointCloud",
    "PointCloudCodec", "attribute_decode", "attribute_encode", "bd_stats", "d_rms", "d_s_rms",
    "decode_geometry", "encode_geometry_lossless", "encode_geometry_trisoup", "evaluate",
    "generate_lod", "psnr_color", "psnr_geometry", "read_ply", "write_ply",
]
