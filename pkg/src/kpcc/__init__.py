"""kpcc: lossless voxel point cloud compression.

Pipeline: cluster -> offset-normalize -> K-tree occupancy serialization ->
chunking -> codebook tokens -> probability model -> range coding. The
probability model is pluggable; see kpcc.models.
"""

from .cluster import cluster_points, merge_clusters
from .errors import (
    DomainError,
    FormatError,
    IntegrityError,
    KpccError,
    MappingError,
    ModelError,
    ParameterError,
    TransportError,
)
from .ktree import build_sequence, default_schedule, reconstruct_points
from .models import session_start
from .pipeline import (
    DecodeReport,
    EncodeReport,
    bench,
    decode_cloud,
    decode_file,
    encode_cloud,
    encode_file,
    export_corpus,
    gain_percent,
)
from .pointcloud import PointCloud, load_ply, save_ply, voxelize
from .tokenmap import default_codebook, detokenize_chunks, tokenize_chunks

__version__ = "0.1.0"

__all__ = [
    "PointCloud",
    "load_ply",
    "save_ply",
    "voxelize",
    "cluster_points",
    "merge_clusters",
    "default_schedule",
    "build_sequence",
    "reconstruct_points",
    "default_codebook",
    "tokenize_chunks",
    "detokenize_chunks",
    "session_start",
    "encode_cloud",
    "decode_cloud",
    "encode_file",
    "decode_file",
    "export_corpus",
    "bench",
    "gain_percent",
    "EncodeReport",
    "DecodeReport",
    "KpccError",
    "FormatError",
    "DomainError",
    "ParameterError",
    "MappingError",
    "IntegrityError",
    "ModelError",
    "TransportError",
    "__version__",
]
