"""Python bindings for the pplr pseudo-label refinement engine."""

import json

from . import _core
from ._core import (
    ConfigError,
    FormatError,
    NumericalError,
    aals_target,
    average_precision,
    cross_agreement,
    dbscan,
    k_reciprocal_jaccard,
    l2_normalize,
    label_quality,
    map_cmc,
    pairwise_sq_euclidean,
    pglr_target,
    pglr_weights,
    read_feature_bank,
    set_num_threads,
    topk_ranked_lists,
    write_feature_bank,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "NumericalError",
    "aals_target",
    "average_precision",
    "cross_agreement",
    "dbscan",
    "default_config",
    "generate_synthetic",
    "k_reciprocal_jaccard",
    "l2_normalize",
    "label_quality",
    "map_cmc",
    "pairwise_sq_euclidean",
    "pglr_target",
    "pglr_weights",
    "read_feature_bank",
    "run_pipeline",
    "set_num_threads",
    "topk_ranked_lists",
    "write_feature_bank",
]


def default_config():
    return json.loads(_core.default_config())


def generate_synthetic(**synth):
    """Synthetic bank as a dict of numpy arrays. Keywords are synth fields or seed."""
    return _core.generate_synthetic(json.dumps(synth) if synth else "")


def run_pipeline(bank, config=None):
    """Runs the alternating pipeline; config is a (partial) config dict."""
    out = _core.run_pipeline(bank, json.dumps(config or {}))
    out["reports"] = [json.loads(r) for r in out["reports"]]
    return out
