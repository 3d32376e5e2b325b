"""Statistically validated semantic networks from tagged message corpora."""

__version__ = "0.1.0"

from .bigraph import BipartiteGraph, MonoGraph, cooccurrence, degrees, naive_projection, vmotif_count
from .ingest import (
    MergeMap,
    RecordError,
    TaggedRecord,
    build_daily_hashtag_graphs,
    build_merge_map,
    build_retweet_graph,
    edit_distance,
    parse_records,
)
from .nullmodels import NullModel, SolverReport, fit_bicm, fit_bipcm, fit_birgm, fit_model, sample_graph
from .validation import binomial_sf, fdr_select, pair_pvalue, poisson_binomial_sf, validated_projection
from .mesoscale import (
    CorePeripheryAssignment,
    Partition,
    bimodular_surprise,
    core_jaccard,
    detect_core_periphery,
    kcore_decomposition,
    louvain,
    modularity,
)
from .metrics import (
    annd,
    betweenness,
    clustering_coefficient,
    hashtag_persistence,
    polarization,
    triadic_persistence,
)
