"""Offline training: reviews -> clusters -> CUPs -> per-CUP rankers."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .clustering import ClusterModel, SilhouetteReport, _unique_rows, select_k
from .core import ContextSchema, ContextualReview, EndorsementVocabulary, encode_matrix
from .profiles import (DEFAULT_THRESHOLD, ModelArtifact, compute_weights, project_to_context,
                       prune_cups, review_cups)
from .ranker import train_suite

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    k_min: int = 2
    k_max: int = 30
    seed: int = 0
    restarts: int = 8
    max_iter: int = 300
    tol: float = 1e-6
    sample_cap: int = 10_000
    threshold: float = DEFAULT_THRESHOLD
    alpha: float = 1.0
    min_support: int = 50
    uniform_prior: bool = False
    endorsement_scale: float = 1.0
    context_scale: float = 1.0

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        data = dict(data)
        if "k_range" in data:
            data["k_min"], data["k_max"] = parse_k_range(data.pop("k_range"))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)


def parse_k_range(value) -> tuple[int, int]:
    """Accept "2..30", "4", [2, 30] or 4."""
    if isinstance(value, int):
        return value, value
    if isinstance(value, (list, tuple)) and len(value) == 2:
        lo, hi = int(value[0]), int(value[1])
    else:
        text = str(value).strip()
        lo_s, sep, hi_s = text.partition("..")
        lo = int(lo_s)
        hi = int(hi_s) if sep else lo
    if lo < 1 or hi < lo:
        raise ValueError(f"bad k range {value!r}")
    return lo, hi


@dataclass
class TrainResult:
    artifact: ModelArtifact
    silhouette: SilhouetteReport
    clusters: ClusterModel
    review_cups: np.ndarray = field(repr=False)


def _coord_scale(config: TrainConfig, n_end: int, n_ctx: int):
    if config.endorsement_scale == 1.0 and config.context_scale == 1.0:
        return None
    return np.concatenate([np.full(n_end, config.endorsement_scale),
                           np.full(n_ctx, config.context_scale)])


def train_pipeline(reviews: Sequence[ContextualReview], schema: ContextSchema,
                   vocab: EndorsementVocabulary, config: TrainConfig = TrainConfig()
                   ) -> TrainResult:
    if not reviews:
        raise ValueError("no reviews to train on")
    X = encode_matrix(reviews, schema, vocab)
    n_distinct = len(_unique_rows(X)[0])
    ks = [k for k in config.k_range if k <= n_distinct]
    if not ks:
        raise ValueError(f"only {n_distinct} distinct vectors; k range {config.k_min}.."
                         f"{config.k_max} is infeasible")
    scale = _coord_scale(config, len(vocab), schema.n_coordinates)
    report, model = select_k(X, ks, seed=config.seed, restarts=config.restarts,
                             max_iter=config.max_iter, tol=config.tol,
                             sample_cap=config.sample_cap, coord_scale=scale)
    log.info("chose k=%d (silhouette %.4f)", report.chosen_k, report.scores[report.chosen_k])
    counts = project_to_context(model, X, schema)
    weights = compute_weights(counts)
    cups = prune_cups(weights, config.threshold, dim=schema.n_coordinates,
                      schema_digest=schema.digest())
    assigned = review_cups(model, cups, X, schema)
    suite = train_suite(reviews, assigned.tolist(), vocab, alpha=config.alpha,
                        min_support=config.min_support, uniform_prior=config.uniform_prior)
    summary = {
        "reviews": len(reviews),
        "chosen_k": report.chosen_k,
        "silhouette": {str(k): (None if np.isnan(v) else round(v, 12))
                       for k, v in report.scores.items()},
        "cups": len(cups),
        "dropped_clusters": report.chosen_k - len(cups),
        "contextual_rankers": len(suite.per_cup),
        "config": asdict(config),
    }
    artifact = ModelArtifact(schema, vocab, cups, suite, summary)
    return TrainResult(artifact, report, model, assigned)
