from .glcm import (
    BACKEND,
    DEFAULT_ANGLES,
    DEFAULT_DISTANCES,
    GlcmConfig,
    PopulationStats,
    fingerprint_correlation_vector,
    glcm,
    glcm_correlation,
    offset_for,
    pair_labels,
    population_stats,
    quantize,
    to_gray,
)

__all__ = [
    "BACKEND",
    "DEFAULT_ANGLES",
    "DEFAULT_DISTANCES",
    "GlcmConfig",
    "PopulationStats",
    "fingerprint_correlation_vector",
    "glcm",
    "glcm_correlation",
    "offset_for",
    "pair_labels",
    "population_stats",
    "quantize",
    "to_gray",
]
