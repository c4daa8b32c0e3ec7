"""Offline A/B simulation of ranking arms against synthetic users."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from ..core import encode_context
from ..profiles import ModelArtifact, assign
from ..ranker import rank
from .metrics import ArmReport, MetricsReport
from .synthetic import World, next_persona


class Arm(Protocol):
    def __call__(self, context: Mapping[str, str], query: frozenset[str],
                 top_n: int) -> list[str]: ...


class GlobalArm:
    """Non-contextual baseline: the global ranker for everyone."""

    def __init__(self, artifact: ModelArtifact):
        self.model = artifact.rankers.global_model
        self._cache: dict = {}

    def __call__(self, context, query, top_n):
        key = (query, top_n)
        if key not in self._cache:
            self._cache[key] = rank(self.model, query, top_n).destinations
        return self._cache[key]


class ContextualArm:
    """Nearest-CUP ranker, falling back to the global one for unsupported CUPs."""

    def __init__(self, artifact: ModelArtifact):
        self.artifact = artifact
        self._cups: dict = {}
        self._lists: dict = {}

    def cup_for(self, context) -> int:
        key = tuple(sorted(context.items()))
        if key not in self._cups:
            block = encode_context(context, self.artifact.schema)
            self._cups[key] = assign(block, self.artifact.cups)
        return self._cups[key]

    def __call__(self, context, query, top_n):
        cup = self.cup_for(context)
        key = (cup, query, top_n)
        if key not in self._lists:
            model, _ = self.artifact.rankers.model_for(cup)
            self._lists[key] = rank(model, query, top_n).destinations
        return self._lists[key]


class OracleArm:
    """Ranks by the persona's true relevance; needs the persona behind the context."""

    def __init__(self, world: World, reverse: bool = False):
        self.world = world
        self.reverse = reverse

    def __call__(self, context, query, top_n, persona=None):
        order = self.world.true_ranking(persona, query)
        if self.reverse:
            order = order[::-1]
        return order[:top_n]


@dataclass(frozen=True)
class ClickModel:
    """Independent clicks: p_rel for the user's true top-m, p_irr otherwise."""
    p_rel: float = 0.3
    p_irr: float = 0.02
    top_m: int = 3

    def click_probs(self, listed: Sequence[str], relevant: set[str]) -> np.ndarray:
        return np.array([self.p_rel if d in relevant else self.p_irr for d in listed])


@dataclass(frozen=True)
class SimulationConfig:
    users: int = 6_000
    sessions_per_user: float = 2.6
    top_n: int = 10
    max_query_len: int = 2
    seed: int = 0
    click: ClickModel = field(default_factory=ClickModel)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SimulationConfig":
        data = dict(data)
        click = ClickModel(**{k: data.pop(k) for k in ("p_rel", "p_irr", "top_m") if k in data})
        unknown = set(data) - (set(cls.__dataclass_fields__) - {"click"})
        if unknown:
            raise ValueError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(click=click, **data)


def arm_of(user_id: str, seed: int, n_arms: int) -> int:
    """Seeded uniform hash split of users across arms."""
    h = hashlib.blake2b(f"{seed}:{user_id}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") % n_arms


@dataclass
class _Counts:
    users: int = 0
    searches: int = 0
    clicks: int = 0
    converted: int = 0


def simulate_sessions(world: World, arms: Mapping[str, Callable], config: SimulationConfig,
                      persona_mixing: float = 0.0, missing_context_rate: float = 0.0,
                      baseline: str | None = None) -> MetricsReport:
    """Fresh users, hashed into arms, each running a few searches.

    Every user draws from a private RNG stream keyed on (seed, user index), so
    arm membership and behaviour do not depend on iteration order.
    """
    names = list(arms)
    counts = {n: _Counts() for n in names}
    click = config.click
    truth_cache: dict = {}
    for i in range(config.users):
        uid = f"s{i:06d}"
        name = names[arm_of(uid, config.seed, len(names))]
        arm = arms[name]
        rng = np.random.default_rng([config.seed, 2, i])
        primary = world.sample_persona(rng)
        n_sessions = 1 + int(rng.poisson(config.sessions_per_user - 1))
        c = counts[name]
        c.users += 1
        user_clicks = 0
        for _ in range(n_sessions):
            persona = primary
            if persona_mixing and rng.random() < persona_mixing:
                persona = next_persona(rng, primary, world.n_personas)
            context = world.sample_context(rng, persona, missing_context_rate)
            query = world.sample_query(rng, persona, config.max_query_len)
            key = (persona, query)
            if key not in truth_cache:
                truth_cache[key] = set(world.true_ranking(persona, query, click.top_m))
            relevant = truth_cache[key]
            if isinstance(arm, OracleArm):
                listed = arm(context, query, config.top_n, persona=persona)
            else:
                listed = arm(context, query, config.top_n)
            hits = int((rng.random(len(listed)) < click.click_probs(listed, relevant)).sum())
            c.searches += 1
            c.clicks += hits
            user_clicks += hits
        if user_clicks:
            c.converted += 1
    reports = tuple(ArmReport(n, counts[n].users, counts[n].searches, counts[n].clicks,
                              converted_users=counts[n].converted, list_length=config.top_n)
                    for n in names if counts[n].users)
    meta = {"simulated_users": config.users, "seed": config.seed, "top_n": config.top_n,
            "click_model": {"p_rel": click.p_rel, "p_irr": click.p_irr, "top_m": click.top_m}}
    return MetricsReport(reports, baseline or names[0], meta)
