"""Domain-specific retrievers by layer-segmented linear weight interpolation."""

from .encoder import EncoderConfig, TokenizerSpec, encode, init_encoder, make_domain_variant, tokenize
from .evaluation import AggregateStats, PerQueryScores, TTestResult, aggregate, mean_ndcg, ndcg_at_k, paired_t_test
from .merge import LayerPartition, MergeSpec, Segment, classify_tensor, merge_archives, merge_tensor
from .tensor_store import Tensor, TensorArchive, load_archive, save_archive

__version__ = "0.1.0"
