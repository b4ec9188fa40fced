"""Tumor-vessel involvement assessment from 3D segmentation volumes."""

__version__ = "0.1.0"

from .involvement import DpcgCategory, InvolvementReport, dpcg_classify, scan_involvement
from .volume import (
    ChannelId,
    LayeredLabelVolume,
    MaskVolume,
    MissingChannelError,
    ProbVolume,
    Spacing,
    VolumeFormatError,
    decode_layered,
    encode_layered,
    read_volume,
    write_volume,
)

__all__ = [
    "ChannelId",
    "DpcgCategory",
    "InvolvementReport",
    "LayeredLabelVolume",
    "MaskVolume",
    "MissingChannelError",
    "ProbVolume",
    "Spacing",
    "VolumeFormatError",
    "decode_layered",
    "dpcg_classify",
    "encode_layered",
    "read_volume",
    "scan_involvement",
    "write_volume",
    "__version__",
]
