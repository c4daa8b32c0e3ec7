"""Naive Bayes destination ranking.

score(d | q) = log P(d) + sum_{e in q} log P(e | d)

P(d) is the share of all endorsement occurrences that went to d. P(e | d)
is a Bernoulli "a review of d endorses e" rate with additive smoothing:
(count(e, d) + alpha) / (reviews(d) + alpha * X).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ContextualReview, EncodingError, EndorsementVocabulary



class RankerError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NbModel:
    destinations: tuple[str, ...]
    endorsements: tuple[str, ...]
    review_counts: np.ndarray
    endorsement_counts: np.ndarray
    alpha: float = 1.0
    uniform_prior: bool = False
    log_prior: np.ndarray = field(init=False, repr=False, compare=False)
    log_cond: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rc = np.asarray(self.review_counts, dtype=np.int64)
        ec = np.asarray(self.endorsement_counts, dtype=np.int64).reshape(len(rc), -1)
        D, X = ec.shape
        if list(self.destinations) != sorted(self.destinations) or len(set(self.destinations)) != D:
            raise RankerError("destinations must be unique and sorted")
        if X != len(self.endorsements):
            raise RankerError("count matrix does not match the vocabulary")
        if self.alpha < 0:
            raise RankerError("alpha must be non-negative")
        occ = ec.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.uniform_prior:
                log_prior = np.full(D, -np.log(D))
            else:
                log_prior = np.log(occ) - np.log(occ.sum())
            log_cond = np.log(ec + self.alpha) - np.log(rc + self.alpha * X)[:, None]
        for arr in (rc, ec, log_prior, log_cond):
            arr.setflags(write=False)
        object.__setattr__(self, "review_counts", rc)
        object.__setattr__(self, "endorsement_counts", ec)
        object.__setattr__(self, "log_prior", log_prior)
        object.__setattr__(self, "log_cond", log_cond)
        object.__setattr__(self, "_dindex", {d: i for i, d in enumerate(self.destinations)})
        object.__setattr__(self, "_eindex", {e: i for i, e in enumerate(self.endorsements)})

    def __eq__(self, other):
        if not isinstance(other, NbModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = object.__hash__

    @property
    def n_reviews(self) -> int:
        return int(self.review_counts.sum())

    def prior(self, destination: str) -> float:
        return float(np.exp(self.log_prior[self._dindex[destination]]))

    def conditional(self, endorsement: str, destination: str) -> float:
        return float(np.exp(self.log_cond[self._dindex[destination], self._eindex[endorsement]]))

    def query_index(self, query: Iterable[str]) -> np.ndarray:
        try:
            return np.array(sorted({self._eindex[e] for e in query}), dtype=np.int64)
        except KeyError as exc:
            raise EncodingError(f"unknown endorsement {exc.args[0]!r}") from None

    def scores(self, query: Iterable[str]) -> np.ndarray:
        """Log scores for every destination, aligned with `destinations`."""
        idx = self.query_index(query)
        return self.log_prior + self.log_cond[:, idx].sum(axis=1)

    def to_dict(self) -> dict:
        return {"destinations": list(self.destinations),
                "endorsements": list(self.endorsements),
                "review_counts": self.review_counts.tolist(),
                "endorsement_counts": self.endorsement_counts.tolist(),
                "alpha": self.alpha, "uniform_prior": self.uniform_prior}

    @classmethod
    def from_dict(cls, data: Mapping) -> "NbModel":
        X = len(data["endorsements"])
        ec = np.asarray(data["endorsement_counts"], dtype=np.int64).reshape(-1, X)
        return cls(tuple(data["destinations"]), tuple(data["endorsements"]),
                   np.asarray(data["review_counts"], dtype=np.int64), ec,
                   alpha=float(data["alpha"]), uniform_prior=bool(data["uniform_prior"]))


@dataclass(frozen=True)
class RankedList:
    items: tuple[tuple[str, float], ...]

    @property
    def destinations(self) -> list[str]:
        return [d for d, _ in self.items]

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


def train(reviews: Sequence[ContextualReview], vocab: EndorsementVocabulary,
          alpha: float = 1.0, uniform_prior: bool = False) -> NbModel:
    if not reviews:
        raise RankerError("cannot train on an empty corpus")
    destinations = sorted({r.destination for r in reviews})
    dindex = {d: i for i, d in enumerate(destinations)}
    rc = np.zeros(len(destinations), dtype=np.int64)
    ec = np.zeros((len(destinations), len(vocab)), dtype=np.int64)
    for r in reviews:
        i = dindex[r.destination]
        rc[i] += 1
        for e in r.endorsements:
            ec[i, vocab.index(e)] += 1
    return NbModel(tuple(destinations), vocab.endorsements, rc, ec,
                   alpha=alpha, uniform_prior=uniform_prior)


def score(model: NbModel, destination: str, query: Iterable[str]) -> float:
    try:
        i = model._dindex[destination]
    except KeyError:
        raise RankerError(f"unknown destination {destination!r}") from None
    idx = model.query_index(query)
    return float(model.log_prior[i] + model.log_cond[i, idx].sum())


def rank(model: NbModel, query: Iterable[str], top_n: int = 10) -> RankedList:
    """Destinations by descending score; exact ties in destination-id order."""
    if top_n < 1:
        raise RankerError("top_n must be >= 1")
    s = model.scores(query)
    # destinations are stored sorted, so a stable sort breaks ties lexicographically
    order = np.argsort(-s, kind="stable")[:top_n]
    return RankedList(tuple((model.destinations[i], float(s[i])) for i in order))


@dataclass(frozen=True)
class RankerSuite:
    global_model: NbModel
    per_cup: Mapping[int, NbModel]
    min_support: int = 50
    fallback: str = "global"

    def model_for(self, cup_id: int | None) -> tuple[NbModel, bool]:
        """The ranker serving `cup_id`, and whether it is the global fallback."""
        model = self.per_cup.get(cup_id) if cup_id is not None else None
        if model is None:
            return self.global_model, True
        return model, False

    def to_dict(self) -> dict:
        return {"global": self.global_model.to_dict(),
                "per_cup": {str(c): m.to_dict() for c, m in sorted(self.per_cup.items())},
                "min_support": self.min_support, "fallback": self.fallback}

    @classmethod
    def from_dict(cls, data: Mapping) -> "RankerSuite":
        return cls(NbModel.from_dict(data["global"]),
                   {int(c): NbModel.from_dict(m) for c, m in data["per_cup"].items()},
                   min_support=int(data["min_support"]), fallback=data["fallback"])


def train_suite(reviews: Sequence[ContextualReview], cup_assignments: Sequence[int],
                vocab: EndorsementVocabulary, alpha: float = 1.0, min_support: int = 50,
                uniform_prior: bool = False) -> RankerSuite:
    """Global ranker on everything plus one ranker per CUP with enough reviews."""
    if len(cup_assignments) != len(reviews):
        raise RankerError("one CUP assignment per review is required")
    global_model = train(reviews, vocab, alpha, uniform_prior)
    groups: dict[int, list[ContextualReview]] = {}
    for r, c in zip(reviews, cup_assignments):
        groups.setdefault(int(c), []).append(r)
    per_cup = {c: train(rs, vocab, alpha, uniform_prior)
               for c, rs in sorted(groups.items()) if len(rs) >= min_support}
    return RankerSuite(global_model, per_cup, min_support=min_support)
