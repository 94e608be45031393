"""Unrolled graph-regularized sparse coding networks (TAGnet / DTAGnet) for clustering."""

from .data import Dataset, add_noise, load_csv, load_idx, normalize, synth_blobs, synth_hierarchical
from .graph import GraphPair, build_affinity, build_graph, build_laplacian, median_bandwidth, restrict
from .losses import LossHead, eml_loss, init_head, mml_loss, predict
from .metrics import clustering_accuracy, hungarian, nmi
from .network import TagNetParams, backward, forward, init_from_dictionary, stage_taps
from .numeric import DegenerateDataError, DomainError, frobenius_norm_sq, make_rng, spectral_bound
from .sparse_coding import Dictionary, SolverConfig, gsc_objective, gsc_solve, ksvd, omp, shrink, shrink_decomposed
from .trainer import Checkpoint, TrainConfig, Trainer, load_checkpoint, run_baseline_sc, save_checkpoint, train

__version__ = "0.1.0"
