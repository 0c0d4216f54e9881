"""LBS-aware heterogeneous-relations model for cold-start travel recommendation."""

from .embedding import EmbeddingTable, SkipGramEmbedder, build_sequences, train_skipgram, user_vector
from .evaluation import (HotRecommender, MaxCoverageRecommender, RankedList, EvalCase,
                         conditioned_hr, hr_at_k, ndcg_at_k)
from .geocode import GeoPoint, encode_geohash, token_for_event
from .model import AttributeEncoder, LHRMScorer, ModelParams, cold_start_recommend
from .relations import KMeans, build_item_group, build_user_group, i2i_recall, kmeans

__version__ = "0.1.0"
