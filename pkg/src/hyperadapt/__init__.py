"""Adapt pretrained RGB convolutional filter banks to hyperspectral inputs.

The pipeline: decompose each first-layer filter into spatial and spectral
components (CP or channel-mode Tucker), replace the 3-channel spectral parts
with trainable wide-channel ones, realize the adapted layer as separable
convolutions, and train only the spectral parts plus a classifier head on
hyperspectral tiles. Spatial patterns of the original filters are preserved
exactly throughout training.
"""

from . import cli, data, decomp, filteradapt, linalg, nn, tensor
from .decomp import (
    CP,
    TUCKER,
    CpDecomp,
    CpOptions,
    Tucker1Decomp,
    cp_decompose,
    cp_reconstruct,
    decompose_bank,
    tucker1_decompose,
    tucker1_reconstruct,
)
from .filteradapt import AdaptedLayer, FilterBank, adapt, decompress

__version__ = "0.1.0"

__all__ = [
    "cli", "data", "decomp", "filteradapt", "linalg", "nn", "tensor",
    "CP", "TUCKER", "CpDecomp", "CpOptions", "Tucker1Decomp",
    "cp_decompose", "cp_reconstruct", "decompose_bank",
    "tucker1_decompose", "tucker1_reconstruct",
    "AdaptedLayer", "FilterBank", "adapt", "decompress",
    "__version__",
]
