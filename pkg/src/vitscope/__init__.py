"""ViT-B/16 inference with trace capture, attention-weighted neuron
visualization, patch perturbations and clustering analysis of patch
embeddings, in numpy."""

from . import cluster, perturb, patch_labels, tensor_core, theorem_lab, vis_field, vit_engine
from .archive import load_archive, read_header, read_metadata, write_archive
from .cluster import DBSCAN, ExactTSNE, ClusterReport, cluster_layer, layer_sweep
from .exceptions import (
    ArchiveFormatError,
    InfeasibleInstanceError,
    InvariantError,
    ManifestError,
    NotStochasticError,
    ShapeError,
    VitscopeError,
)
from .patch_labels import PatchLabelMap, label_patches, load_mask, remap_labels, select_image
from .perturb import DropMask, ShuffleSpec, SplitMix64, apply_mask, random_drop, shuffle
from .vis_field import CoefficientField, NeuronVisualizer, TileBasis, coefficient_fields, render
from .vit_engine import (
    ForwardTrace,
    ModelConfig,
    VisionTransformer,
    forward_trace,
    infer_config,
    preprocess,
    random_weights,
)

__version__ = "0.1.0"
