"""LEt-SNE: parametric Laplacian-Eigenmaps / t-SNE embeddings with a compression factor."""

from .data import DataMatrix, load_cube, load_tabular, make_blobs, make_swiss_roll, standardize
from .graph import (
    SparseAdjacency,
    knn_adjacency,
    label_adjacency,
    laplacian_quadratic,
    region_adjacency,
    restrict_to_batch,
)
from .affinity import calibrate_sigma, compress, conditional_p, conditional_q
from .network import MlpModel, init_model, load_model, save_model
from .objective import EmbeddingResult, TrainConfig, kl_forward, kl_reverse, train
from .segmentation import RegionMap, merge_regions, slic
from .evaluation import EvalReport, evaluate, knn_classify_accuracy, pca_project

__version__ = "0.1.0"
