"""Edge reconstruction attacks on GNN node representations and the
noisy-aggregation defense."""

from .attack import SimilarityKind, auroc, best_threshold, rates, score_pairs
from .defense import edge_rr, edge_rr_bound, empirical_edge_error, nag_bound
from .encoders import Arch, EncoderWeights, NagConfig, encode, init_weights, operator_norm
from .generators import ErSpec, SbmSpec, gen_er, gen_features, gen_sbm
from .graph import DatasetBundle, Graph, NodeSubset, induced_subgraph, load_bundle, save_bundle
from .training import TrainConfig, train

__version__ = "0.1.0"
