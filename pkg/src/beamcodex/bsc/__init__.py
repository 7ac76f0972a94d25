"""Beamspace codebook generator: transforms, samples, network and estimators."""

from .beamspace import (BeamspaceSample, build_input, build_sample, build_target, from_beamspace,
                        merge_complex, split_complex, to_beamspace)
from .codex import BeamspaceCodex, BeamspaceTransformer, infer_codebook
from .mlp import MlpModel, TrainConfig, adam_update, cosine_loss, cosine_lr, train

__all__ = [
    "BeamspaceSample", "build_input", "build_sample", "build_target", "from_beamspace",
    "merge_complex", "split_complex", "to_beamspace", "BeamspaceCodex", "BeamspaceTransformer",
    "infer_codebook", "MlpModel", "TrainConfig", "adam_update", "cosine_loss", "cosine_lr", "train",
]
