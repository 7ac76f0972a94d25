"""Link-level beam-management simulator with a learned SSB codebook generator."""

from .channel import ArrayGeometry, ChannelTensor, ScenarioConfig, UserPool, array_response, generate_channels
from .codebooks import Codebook, FbCodebook, OversamplingSpec, dft_matrix, oversampled_dft, rsv_codebook
from .datafile import load_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry", "ChannelTensor", "ScenarioConfig", "UserPool", "array_response",
    "generate_channels", "Codebook", "FbCodebook", "OversamplingSpec", "dft_matrix",
    "oversampled_dft", "rsv_codebook", "load_dataset", "save_dataset",
]
