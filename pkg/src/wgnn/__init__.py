"""Wasserstein graph neural networks for graphs with missing node attributes."""

from .datasets import (
    MaskSpec,
    NodeClassificationDataset,
    RatingsDataset,
    SyntheticConfig,
    apply_mask,
    gen_synthetic,
    load_citation,
    load_ratings,
)
from .errors import WGNNError
from .linalg import MaskedMatrix, SpectralFactors, gram_schmidt_ortho, truncated_svd
from .ot import GroundMetric, IBPConfig, entropic_w2, gibbs_kernel, ground_metric, ibp_barycenter
from .pipelines import RunReport, TrainConfig, evaluate, run_matrix_completion, run_node_classification
from .propagation import SparseGraph, barycenter_update, euclidean_embedding, wgnn_propagate

__version__ = "0.1.0"
