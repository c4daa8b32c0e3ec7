"""Domain types, config loading, review-log ingest and binary encoding.

A contextualized review is flattened into one binary vector: the
endorsement block (one coordinate per vocabulary entry) followed by one
one-hot block per context feature, in schema order.
"""
from __future__ import annotations

import hashlib
import json
import sys
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
VOCAB_VERSION = 1


class SchemaError(ValueError):
    pass


class EncodingError(ValueError):
    pass


class LogFormatError(ValueError):
    """A malformed review-log record under strict ingest."""

    def __init__(self, line_no: int, reason: str, detail: str = ""):
        self.line_no = line_no
        self.reason = reason
        msg = f"line {line_no}: {reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class ContextSchema:
    features: tuple[tuple[str, tuple[str, ...]], ...]
    version: int = SCHEMA_VERSION
    _offsets: dict = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        features = tuple((str(n), tuple(str(c) for c in cats)) for n, cats in self.features)
        object.__setattr__(self, "features", features)
        if not features:
            raise SchemaError("schema has no features")
        names = [n for n, _ in features]
        dup = [n for n, c in Counter(names).items() if c > 1]
        if dup:
            raise SchemaError(f"duplicate feature {dup[0]!r}")
        offsets, index, pos = {}, {}, 0
        for name, cats in features:
            if not cats:
                raise SchemaError(f"feature {name!r} has no categories")
            dup = [c for c, k in Counter(cats).items() if k > 1]
            if dup:
                raise SchemaError(f"duplicate category {dup[0]!r} in feature {name!r}")
            offsets[name] = pos
            for m, cat in enumerate(cats):
                index[(name, cat)] = pos + m
            pos += len(cats)
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_index", index)

    @property
    def feature_names(self) -> list[str]:
        return [n for n, _ in self.features]

    @property
    def n_coordinates(self) -> int:
        return len(self._index)

    def categories(self, feature: str) -> tuple[str, ...]:
        return dict(self.features)[feature]

    def coordinate(self, feature: str, category: str) -> int:
        try:
            return self._index[(feature, category)]
        except KeyError:
            if feature not in self._offsets:
                raise EncodingError(f"unknown context feature {feature!r}") from None
            raise EncodingError(f"unknown category {category!r} for feature {feature!r}") from None

    def block(self, feature: str) -> slice:
        start = self._offsets[feature]
        return slice(start, start + len(self.categories(feature)))

    def label(self, j: int) -> tuple[str, str]:
        """Inverse of `coordinate`."""
        for name, cats in self.features:
            off = self._offsets[name]
            if off <= j < off + len(cats):
                return name, cats[j - off]
        raise IndexError(j)

    def to_dict(self) -> dict:
        return {"version": self.version,
                "features": [{"name": n, "categories": list(c)} for n, c in self.features]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ContextSchema":
        version = data.get("version")
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema version {version!r}")
        try:
            feats = [(f["name"], f["categories"]) for f in data.get("features", [])]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed feature entry: {exc}") from None
        return cls(tuple(feats), version=version)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EndorsementVocabulary:
    endorsements: tuple[str, ...]
    version: int = VOCAB_VERSION

    def __post_init__(self):
        names = tuple(str(e) for e in self.endorsements)
        object.__setattr__(self, "endorsements", names)
        if not names:
            raise SchemaError("endorsement vocabulary is empty")
        dup = [e for e, c in Counter(names).items() if c > 1]
        if dup:
            raise SchemaError(f"duplicate endorsement {dup[0]!r}")
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(names)})

    def __len__(self) -> int:
        return len(self.endorsements)

    def __contains__(self, name) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise EncodingError(f"unknown endorsement {name!r}") from None

    def to_dict(self) -> dict:
        return {"version": self.version, "endorsements": list(self.endorsements)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "EndorsementVocabulary":
        version = data.get("version")
        if version != VOCAB_VERSION:
            raise SchemaError(f"unsupported vocabulary version {version!r}")
        return cls(tuple(data.get("endorsements", ())), version=version)


@dataclass(frozen=True)
class ContextualReview:
    destination: str
    endorsements: frozenset[str]
    context: Mapping[str, str]
    user: str | None = None
    ts: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "endorsements", frozenset(self.endorsements))
        object.__setattr__(self, "context", MappingProxyType(dict(self.context)))
        if not self.endorsements:
            raise ValueError("review carries no endorsements")

    def __hash__(self):
        return hash((self.destination, self.endorsements,
                     tuple(sorted(self.context.items())), self.user, self.ts))

    def to_record(self) -> dict:
        rec = {"destination": self.destination,
               "endorsements": sorted(self.endorsements),
               "context": dict(sorted(self.context.items()))}
        if self.user is not None:
            rec["user"] = self.user
        if self.ts is not None:
            rec["ts"] = self.ts
        return rec


@dataclass(frozen=True)
class EncodedVector:
    endorsement_block: np.ndarray
    context_block: np.ndarray

    def __post_init__(self):
        for name in ("endorsement_block", "context_block"):
            arr = np.array(getattr(self, name), dtype=np.uint8)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.endorsement_block, self.context_block])

    def __eq__(self, other):
        if not isinstance(other, EncodedVector):
            return NotImplemented
        return (np.array_equal(self.endorsement_block, other.endorsement_block)
                and np.array_equal(self.context_block, other.context_block))

    __hash__ = None


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def load_schema(path: str | Path) -> ContextSchema:
    return ContextSchema.from_dict(read_toml(path))


def load_vocab(path: str | Path) -> EndorsementVocabulary:
    return EndorsementVocabulary.from_dict(read_toml(path))


def default_schema_path() -> Path:
    return Path(str(resources.files("cuprank") / "data" / "default_schema.toml"))


def default_vocab_path() -> Path:
    return Path(str(resources.files("cuprank") / "data" / "default_vocab.toml"))


def encode_context(context: Mapping[str, str], schema: ContextSchema) -> np.ndarray:
    """One-hot context block; features absent from `context` stay all-zero."""
    out = np.zeros(schema.n_coordinates, dtype=np.uint8)
    for feature, category in context.items():
        out[schema.coordinate(feature, category)] = 1
    return out


def encode_endorsements(endorsements: Iterable[str], vocab: EndorsementVocabulary) -> np.ndarray:
    out = np.zeros(len(vocab), dtype=np.uint8)
    for e in endorsements:
        out[vocab.index(e)] = 1
    return out


def encode_review(review: ContextualReview, schema: ContextSchema,
                  vocab: EndorsementVocabulary) -> EncodedVector:
    return EncodedVector(encode_endorsements(review.endorsements, vocab),
                         encode_context(review.context, schema))


def encode_matrix(reviews: Sequence[ContextualReview], schema: ContextSchema,
                  vocab: EndorsementVocabulary) -> np.ndarray:
    """Stack encoded reviews row-wise, shape (n, X + sum M_n)."""
    X = len(vocab)
    out = np.zeros((len(reviews), X + schema.n_coordinates), dtype=np.uint8)
    for i, r in enumerate(reviews):
        for e in r.endorsements:
            out[i, vocab.index(e)] = 1
        for f, c in r.context.items():
            out[i, X + schema.coordinate(f, c)] = 1
    return out


def decode_vector(vec: EncodedVector, schema: ContextSchema,
                  vocab: EndorsementVocabulary) -> tuple[frozenset[str], dict[str, str]]:
    if len(vec.endorsement_block) != len(vocab) or len(vec.context_block) != schema.n_coordinates:
        raise EncodingError("vector dimensions do not match schema/vocabulary")
    endorsements = frozenset(vocab.endorsements[i] for i in np.flatnonzero(vec.endorsement_block))
    context = {}
    for name, cats in schema.features:
        hits = np.flatnonzero(vec.context_block[schema.block(name)])
        if len(hits) > 1:
            raise EncodingError(f"feature {name!r} block is not one-hot")
        if len(hits) == 1:
            context[name] = cats[hits[0]]
    return endorsements, context


@dataclass
class IngestStats:
    accepted: int = 0
    skipped: int = 0
    reasons: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return self.accepted + self.skipped

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "skipped": self.skipped,
                "reasons": dict(sorted(self.reasons.items()))}


def _parse_record(line: str, schema: ContextSchema,
                  vocab: EndorsementVocabulary) -> ContextualReview:
    # raises ValueError(reason, detail)
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError("bad-json", str(exc)) from None
    if not isinstance(rec, dict):
        raise ValueError("bad-json", "record is not an object")
    dest = rec.get("destination")
    if not isinstance(dest, str) or not dest:
        raise ValueError("missing-destination", "")
    ends = rec.get("endorsements")
    if not isinstance(ends, list) or not all(isinstance(e, str) for e in ends):
        raise ValueError("bad-endorsements", "")
    if not ends:
        raise ValueError("no-signal", "")
    for e in ends:
        if e not in vocab:
            raise ValueError("unknown-endorsement", e)
    ctx = rec.get("context", {})
    if not isinstance(ctx, dict) or not all(isinstance(v, str) for v in ctx.values()):
        raise ValueError("bad-context", "")
    for f, c in ctx.items():
        try:
            schema.coordinate(f, c)
        except EncodingError as exc:
            raise ValueError("unknown-context", str(exc)) from None
    user = rec.get("user")
    if user is not None and not isinstance(user, str):
        raise ValueError("bad-user", "")
    ts = rec.get("ts")
    if ts is not None and (isinstance(ts, bool) or not isinstance(ts, (int, float))):
        raise ValueError("bad-ts", "")
    return ContextualReview(dest, frozenset(ends), ctx, user, ts)


def iter_review_log(stream: IO[str], schema: ContextSchema, vocab: EndorsementVocabulary,
                    strict: bool = False, stats: IngestStats | None = None
                    ) -> Iterator[ContextualReview]:
    """Yield valid reviews from a line-delimited JSON stream.

    Blank lines are ignored. Under `strict`, the first malformed record raises
    `LogFormatError`; otherwise it is counted in `stats` and skipped.
    """
    stats = stats if stats is not None else IngestStats()
    for line_no, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            review = _parse_record(line, schema, vocab)
        except ValueError as exc:
            reason, detail = exc.args
            if strict:
                raise LogFormatError(line_no, reason, detail) from None
            stats.skipped += 1
            stats.reasons[reason] += 1
            continue
        stats.accepted += 1
        yield review


def parse_review_log(stream: IO[str], schema: ContextSchema, vocab: EndorsementVocabulary,
                     strict: bool = False) -> tuple[list[ContextualReview], IngestStats]:
    stats = IngestStats()
    reviews = list(iter_review_log(stream, schema, vocab, strict=strict, stats=stats))
    return reviews, stats


def write_review_log(reviews: Iterable[ContextualReview], stream: IO[str]) -> int:
    n = 0
    for r in reviews:
        stream.write(json.dumps(r.to_record(), ensure_ascii=False, sort_keys=True))
        stream.write("\n")
        n += 1
    return n
