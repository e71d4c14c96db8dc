"""Personalized DPP re-ranking for recommendation lists."""

from pdpp.dpp import Selection, exhaustive_map, fast_greedy_map, naive_greedy_map
from pdpp.kernel import KernelSpec, build_dense_kernel, kernel_row
from pdpp.personalization import (
    EntropyStats,
    PersonalizationParams,
    UserProfile,
    alpha_for_user,
    compute_entropy,
    compute_population_stats,
    normalize_f,
)
from pdpp.similarity import (
    ItemCatalog,
    SimilarityMatrix,
    build_genre_similarity,
    build_interaction_similarity,
)

__version__ = "0.1.0"

__all__ = [
    "EntropyStats",
    "ItemCatalog",
    "KernelSpec",
    "PersonalizationParams",
    "Selection",
    "SimilarityMatrix",
    "UserProfile",
    "alpha_for_user",
    "build_dense_kernel",
    "build_genre_similarity",
    "build_interaction_similarity",
    "compute_entropy",
    "compute_population_stats",
    "exhaustive_map",
    "fast_greedy_map",
    "kernel_row",
    "naive_greedy_map",
    "normalize_f",
]
