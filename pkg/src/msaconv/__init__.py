"""Windowed multi-head self-attention with convolution-style kernels (MSA-Conv)
and the TiC hierarchical backbone, in plain numpy with hand-written backward
passes."""
from .attention import MsaConvLayer, init_msa_conv, msa_conv_backward, msa_conv_forward
from .model import TIC_B, TIC_TINY, StageConfig, TicConfig, TicModel, init_model, tic_backward, tic_forward
from .windows import HeadPlan, WindowSpec

__version__ = "0.1.0"

__all__ = [
    "HeadPlan", "MsaConvLayer", "StageConfig", "TIC_B", "TIC_TINY", "TicConfig", "TicModel", "WindowSpec",
    "init_model", "init_msa_conv", "msa_conv_backward", "msa_conv_forward", "tic_backward", "tic_forward",
]
