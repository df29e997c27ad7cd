"""Partially trained graph convolutional networks and oversmoothing diagnostics."""

from frozen_gcn.graph import (GraphBundle, NormalizedAdjacency, cold_start_transform,
                              karate_bundle, load_bundle, make_split, normalize_adjacency,
                              save_bundle, synth_sbm)
from frozen_gcn.model import (LayerSpec, ModelParams, TrainConfig, TrainReport,
                              build_model, evaluate, forward, gcn_specs, loss_and_grads,
                              train)

__version__ = "0.1.0"

__all__ = [
    "GraphBundle", "NormalizedAdjacency", "cold_start_transform", "karate_bundle",
    "load_bundle", "make_split", "normalize_adjacency", "save_bundle", "synth_sbm",
    "LayerSpec", "ModelParams", "TrainConfig", "TrainReport", "build_model", "evaluate",
    "forward", "gcn_specs", "loss_and_grads", "train",
]
