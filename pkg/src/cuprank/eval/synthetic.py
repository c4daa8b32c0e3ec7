"""Seeded synthetic continuous-cold-start workloads.

A latent world of personas drives everything: each persona has a
preference distribution over destinations, an interest distribution over
endorsements (used for queries) and one categorical distribution per
context feature. Destinations carry endorsement profiles. Users are
sparse (few reviews), volatile (their dominant persona drifts), mixed
(some reviews come from a secondary persona) and fragmented (a review
may carry a fresh user id).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..core import ContextSchema, ContextualReview, EndorsementVocabulary

DAY = 86_400.0
EPOCH = 1_388_534_400.0  # 2014-01-01T00:00:00Z


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int
    users: int = 20_000
    destinations: int = 40
    personas: int = 3
    reviews_per_user: float = 2.5
    drift_rate: float = 0.0
    fragmentation: float = 0.0
    persona_mixing: float = 0.0
    context_dependent: bool = True
    persona_weights: tuple[float, ...] | None = None
    preference_concentration: float = 0.3
    interest_concentration: float = 0.5
    signature_endorsements: int = 3
    signature_rate: float = 0.6
    background_rate: float = 0.04
    context_categories: int = 4
    missing_context_rate: float = 0.0

    def __post_init__(self):
        if self.seed is None:
            raise ScenarioError("seed is mandatory")
        for name in ("users", "destinations", "personas", "signature_endorsements",
                     "context_categories"):
            if getattr(self, name) < 1:
                raise ScenarioError(f"{name} must be >= 1")
        if self.reviews_per_user < 1:
            raise ScenarioError("reviews_per_user must be >= 1")
        for name in ("drift_rate", "fragmentation", "persona_mixing", "signature_rate",
                     "background_rate", "missing_context_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ScenarioError(f"{name} must lie in [0, 1]")
        if self.preference_concentration <= 0 or self.interest_concentration <= 0:
            raise ScenarioError("concentrations must be positive")
        if self.persona_weights is not None:
            w = np.asarray(self.persona_weights, dtype=float)
            if len(w) != self.personas or np.any(w < 0) or not math.isclose(w.sum(), 1.0,
                                                                             abs_tol=1e-9):
                raise ScenarioError("persona_weights must be a distribution over personas")
            object.__setattr__(self, "persona_weights", tuple(float(x) for x in w))

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ScenarioError(f"unknown workload keys: {sorted(extra)}")
        data = dict(data)
        if "persona_weights" in data and data["persona_weights"] is not None:
            data["persona_weights"] = tuple(data["persona_weights"])
        return cls(**data)


def _cdf(p: np.ndarray) -> np.ndarray:
    c = np.cumsum(p)
    c[-1] = 1.0
    return c


def _draw(rng: np.random.Generator, cdf: np.ndarray) -> int:
    return int(np.searchsorted(cdf, rng.random(), side="right"))


@dataclass
class World:
    """Latent ground truth behind a synthetic workload."""
    destinations: list[str]
    endorsements: list[str]
    persona_weights: np.ndarray
    preferences: np.ndarray        # (P, D) destination preference per persona
    interests: np.ndarray          # (P, X) query interest per persona
    profiles: np.ndarray           # (D, X) P(review of d endorses e)
    context: list[dict[str, np.ndarray]]   # per persona: feature -> category probs
    schema: ContextSchema

    def __post_init__(self):
        self._pref_cdf = [_cdf(p) for p in self.preferences]
        self._int_cdf = [_cdf(p) for p in self.interests]
        self._ctx_cdf = [{f: _cdf(p) for f, p in c.items()} for c in self.context]
        self._persona_cdf = _cdf(self.persona_weights)
        self._eindex = {e: i for i, e in enumerate(self.endorsements)}
        self._log_pref = np.log(self.preferences)
        self._log_prof = np.log(self.profiles)

    @property
    def n_personas(self) -> int:
        return len(self.persona_weights)

    def sample_persona(self, rng) -> int:
        return _draw(rng, self._persona_cdf)

    def sample_context(self, rng, persona: int, missing_rate: float = 0.0) -> dict[str, str]:
        ctx = {}
        for name, cats in self.schema.features:
            u = rng.random()
            if missing_rate and u < missing_rate:
                continue
            ctx[name] = cats[_draw(rng, self._ctx_cdf[persona][name])]
        return ctx

    def sample_destination(self, rng, persona: int) -> int:
        return _draw(rng, self._pref_cdf[persona])

    def sample_endorsements(self, rng, d: int) -> frozenset[str]:
        hits = np.flatnonzero(rng.random(len(self.endorsements)) < self.profiles[d])
        if len(hits) == 0:
            hits = [_draw(rng, _cdf(self.profiles[d] / self.profiles[d].sum()))]
        return frozenset(self.endorsements[i] for i in hits)

    def sample_query(self, rng, persona: int, max_len: int = 2) -> frozenset[str]:
        size = 1 + int(rng.integers(max_len))
        picked = set()
        while len(picked) < min(size, len(self.endorsements)):
            picked.add(self.endorsements[_draw(rng, self._int_cdf[persona])])
        return frozenset(picked)

    def true_scores(self, persona: int, query) -> np.ndarray:
        """log P(d | persona) + sum_e log P(e | d): the persona's true relevance."""
        idx = [self._eindex[e] for e in query]
        return self._log_pref[persona] + self._log_prof[:, idx].sum(axis=1)

    def true_ranking(self, persona: int, query, top_m: int | None = None) -> list[str]:
        s = self.true_scores(persona, query)
        order = np.lexsort((np.arange(len(s)), -s))
        if top_m is not None:
            order = order[:top_m]
        return [self.destinations[i] for i in order]

    def to_dict(self) -> dict:
        return {"destinations": self.destinations, "endorsements": self.endorsements,
                "persona_weights": self.persona_weights.tolist(),
                "preferences": self.preferences.tolist(),
                "interests": self.interests.tolist(),
                "profiles": self.profiles.tolist(),
                "context": [{f: p.tolist() for f, p in c.items()} for c in self.context]}


def build_world(config: SyntheticConfig, schema: ContextSchema,
                vocab: EndorsementVocabulary) -> World:
    rng = np.random.default_rng([config.seed, 0])
    P, D, X = config.personas, config.destinations, len(vocab)
    width = len(str(D - 1))
    destinations = [f"dest-{i:0{width}d}" for i in range(D)]

    profiles = np.full((D, X), config.background_rate)
    for d in range(D):
        sig = rng.choice(X, size=min(config.signature_endorsements, X), replace=False)
        profiles[d, sig] = config.signature_rate * rng.uniform(0.7, 1.0, size=len(sig))
    profiles = np.clip(profiles, 1e-3, 1 - 1e-3)

    preferences = rng.dirichlet(np.full(D, config.preference_concentration), size=P)
    preferences = np.maximum(preferences, 1e-6)
    preferences /= preferences.sum(axis=1, keepdims=True)
    # queries follow what the persona's favourite destinations are known for
    interests = preferences @ profiles
    interests *= rng.dirichlet(np.full(X, config.interest_concentration), size=P) * X + 0.5
    interests /= interests.sum(axis=1, keepdims=True)

    context: list[dict[str, np.ndarray]] = [{} for _ in range(P)]
    for name, cats in schema.features:
        M = len(cats)
        order = rng.permutation(M)
        if config.context_dependent and M >= P:
            chunks = np.array_split(order, P)
        else:
            chunks = [order] * P
        for p in range(P):
            probs = np.zeros(M)
            chosen = chunks[p][:config.context_categories]
            probs[chosen] = 1.0 / np.arange(1, len(chosen) + 1)
            context[p][name] = probs / probs.sum()

    weights = (np.asarray(config.persona_weights) if config.persona_weights is not None
               else np.full(P, 1.0 / P))
    return World(destinations, list(vocab.endorsements), weights, preferences, interests,
                 profiles, context, schema)


@dataclass
class GroundTruth:
    world: World
    user_personas: dict[str, int] = field(default_factory=dict)
    # per review, aligned with the log: the user's dominant persona and the
    # persona that actually produced the review
    review_primary: list[int] = field(default_factory=list)
    review_persona: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"world": self.world.to_dict(), "user_personas": self.user_personas,
                "review_primary": self.review_primary, "review_persona": self.review_persona}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def next_persona(rng, current: int, n: int) -> int:
    if n == 1:
        return current
    other = int(rng.integers(n - 1))
    return other if other < current else other + 1


def generate(config: SyntheticConfig, schema: ContextSchema, vocab: EndorsementVocabulary
             ) -> tuple[list[ContextualReview], GroundTruth]:
    """Sample a review log plus the hidden truth that produced it.

    Each user gets an independent RNG stream keyed on (seed, user index), so
    the output is reproducible and independent of generation order.
    """
    world = build_world(config, schema, vocab)
    truth = GroundTruth(world)
    reviews: list[ContextualReview] = []
    n_p = world.n_personas
    for i in range(config.users):
        rng = np.random.default_rng([config.seed, 1, i])
        uid = f"u{i:06d}"
        primary = world.sample_persona(rng)
        truth.user_personas[uid] = primary
        n_reviews = 1 + int(rng.poisson(config.reviews_per_user - 1))
        start = EPOCH + rng.uniform(0, 300) * DAY
        for t in range(n_reviews):
            if t and config.drift_rate and rng.random() < config.drift_rate:
                primary = next_persona(rng, primary, n_p)
            persona = primary
            if config.persona_mixing and rng.random() < config.persona_mixing:
                persona = next_persona(rng, primary, n_p)
            d = world.sample_destination(rng, persona)
            ends = world.sample_endorsements(rng, d)
            ctx = world.sample_context(rng, persona, config.missing_context_rate)
            user = uid
            if config.fragmentation and rng.random() < config.fragmentation:
                user = f"{uid}-{t}"
                truth.user_personas[user] = persona
            ts = round(start + t * rng.uniform(20, 120) * DAY, 3)
            reviews.append(ContextualReview(world.destinations[d], ends, ctx, user, ts))
            truth.review_primary.append(primary)
            truth.review_persona.append(persona)
    return reviews, truth

