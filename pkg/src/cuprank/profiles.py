"""Contextual user profiles: derivation from clusters, assignment, persistence.

A profile (CUP) is a sparse center over context coordinates only. The
weight of coordinate j in cluster i is the share of j's corpus-wide
occurrences that fall inside cluster i; weak coordinates are pruned.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .clustering import ClusterModel
from .core import ContextSchema, EndorsementVocabulary
from .ranker import RankerSuite

ARTIFACT_FORMAT = "cuprank-model"
ARTIFACT_VERSION = 1
DEFAULT_THRESHOLD = 0.2


class ProfileError(ValueError):
    pass


class ArtifactError(ValueError):
    pass


@dataclass(frozen=True)
class Cup:
    cup_id: int
    weights: Mapping[int, float]
    source_cluster: int

    def __post_init__(self):
        if not self.weights:
            raise ProfileError(f"CUP {self.cup_id} has an empty center")
        object.__setattr__(self, "weights", dict(sorted(self.weights.items())))


@dataclass(frozen=True)
class CupSet:
    cups: tuple[Cup, ...]
    dim: int
    threshold: float = DEFAULT_THRESHOLD
    schema_digest: str = ""
    _centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cups = tuple(sorted(self.cups, key=lambda c: c.cup_id))
        object.__setattr__(self, "cups", cups)
        centers = np.zeros((len(cups), self.dim))
        for row, cup in enumerate(cups):
            for j, w in cup.weights.items():
                if not 0 <= j < self.dim:
                    raise ProfileError(f"coordinate {j} outside the context block")
                centers[row, j] = w
        centers.setflags(write=False)
        object.__setattr__(self, "_centers", centers)

    def __len__(self):
        return len(self.cups)

    @property
    def centers(self) -> np.ndarray:
        """Dense (n_cups, dim) matrix; pruned coordinates are 0."""
        return self._centers

    @property
    def cup_ids(self) -> list[int]:
        return [c.cup_id for c in self.cups]

    def by_cluster(self) -> dict[int, int]:
        return {c.source_cluster: c.cup_id for c in self.cups}

    def to_dict(self) -> dict:
        return {"dim": self.dim, "threshold": self.threshold, "schema_digest": self.schema_digest,
                "cups": [{"cup_id": c.cup_id, "source_cluster": c.source_cluster,
                          "weights": [[j, w] for j, w in c.weights.items()]}
                         for c in self.cups]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "CupSet":
        cups = tuple(Cup(int(c["cup_id"]), {int(j): float(w) for j, w in c["weights"]},
                         int(c["source_cluster"])) for c in data["cups"])
        return cls(cups, dim=int(data["dim"]), threshold=float(data["threshold"]),
                   schema_digest=data.get("schema_digest", ""))


def context_block(vectors: np.ndarray, schema: ContextSchema) -> np.ndarray:
    """The trailing context coordinates of full encoded vectors."""
    vectors = np.asarray(vectors)
    return vectors[:, vectors.shape[1] - schema.n_coordinates:]


def project_to_context(model: ClusterModel, vectors: np.ndarray,
                       schema: ContextSchema) -> np.ndarray:
    """Per-cluster occurrence counts of every context coordinate, shape (k, C).

    The endorsement block is dropped.
    """
    ctx = context_block(vectors, schema).astype(np.int64)
    if len(ctx) != len(model.assignment):
        raise ProfileError("vectors do not match the cluster assignment")
    counts = np.zeros((model.k, schema.n_coordinates), dtype=np.int64)
    np.add.at(counts, model.assignment, ctx)
    return counts


def compute_weights(counts) -> dict[int, dict[int, Fraction]]:
    """w[i][j] = count(i, j) / sum_i count(i, j), exact.

    Only nonzero entries are stored, so unobserved coordinates are absent.
    """
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise ProfileError("counts must be non-negative")
    totals = counts.sum(axis=0)
    weights: dict[int, dict[int, Fraction]] = {i: {} for i in range(counts.shape[0])}
    for i, j in zip(*np.nonzero(counts)):
        weights[int(i)][int(j)] = Fraction(int(counts[i, j]), int(totals[j]))
    return weights


def prune_cups(weights: Mapping[int, Mapping[int, Fraction]], threshold: float = DEFAULT_THRESHOLD,
               dim: int | None = None, schema_digest: str = "") -> CupSet:
    """Keep coordinates with w >= threshold; clusters left empty are dropped.

    CUP ids are assigned 0..L-1 in source-cluster order.
    """
    if not 0 <= threshold <= 1:
        raise ProfileError("threshold must lie in [0, 1]")
    # decimal string -> exact rational, so 0.2 compares as 1/5
    cut = Fraction(str(threshold))
    if dim is None:
        dim = 1 + max((j for w in weights.values() for j in w), default=-1)
    cups = []
    for cluster in sorted(weights):
        kept = {j: float(w) for j, w in sorted(weights[cluster].items()) if w >= cut and w > 0}
        if kept:
            cups.append(Cup(len(cups), kept, cluster))
    if not cups:
        raise ProfileError("degenerate pruning: every cluster lost all coordinates")
    return CupSet(tuple(cups), dim=dim, threshold=threshold, schema_digest=schema_digest)


def distances(context: np.ndarray, cups: CupSet) -> np.ndarray:
    """Squared Euclidean distance from one context block to every CUP center."""
    diff = cups.centers - np.asarray(context, dtype=np.float64)[None, :]
    return np.einsum("ij,ij->i", diff, diff)


def assign(context: np.ndarray, cups: CupSet) -> int:
    """Nearest CUP by Euclidean distance; ties go to the lowest cup_id."""
    if len(cups) == 0:
        raise ProfileError("no CUPs to assign to")
    context = np.asarray(context)
    if context.shape != (cups.dim,):
        raise ProfileError(f"context block has shape {context.shape}, expected ({cups.dim},)")
    return cups.cups[int(np.argmin(distances(context, cups)))].cup_id


def assign_many(contexts: np.ndarray, cups: CupSet) -> np.ndarray:
    contexts = np.asarray(contexts, dtype=np.float64)
    C = cups.centers
    d2 = (contexts ** 2).sum(1)[:, None] - 2 * contexts @ C.T + (C ** 2).sum(1)[None, :]
    ids = np.array(cups.cup_ids)
    # exact recheck where the expanded form leaves near-ties
    srt = np.sort(d2, axis=1)
    close = np.flatnonzero(srt[:, 1] - srt[:, 0] < 1e-9) if d2.shape[1] > 1 else []
    out = ids[d2.argmin(axis=1)]
    for r in close:
        out[r] = assign(contexts[r], cups)
    return out


def review_cups(model: ClusterModel, cups: CupSet, vectors: np.ndarray,
                schema: ContextSchema) -> np.ndarray:
    """CUP per training review; reviews of dropped clusters go to the nearest CUP."""
    mapping = cups.by_cluster()
    out = np.array([mapping.get(int(c), -1) for c in model.assignment], dtype=np.int64)
    orphans = np.flatnonzero(out < 0)
    if len(orphans):
        out[orphans] = assign_many(context_block(vectors, schema)[orphans], cups)
    return out


@dataclass(frozen=True)
class ModelArtifact:
    schema: ContextSchema
    vocab: EndorsementVocabulary
    cups: CupSet
    rankers: RankerSuite
    summary: Mapping = field(default_factory=dict)

    def payload(self) -> dict:
        return {"schema": self.schema.to_dict(), "schema_digest": self.schema.digest(),
                "vocab": self.vocab.to_dict(), "cups": self.cups.to_dict(),
                "rankers": self.rankers.to_dict(), "summary": dict(self.summary)}


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"),
                      allow_nan=False).encode("utf-8")


def dumps_artifact(artifact: ModelArtifact) -> bytes:
    body = _canonical(artifact.payload())
    header = _canonical({"format": ARTIFACT_FORMAT, "version": ARTIFACT_VERSION,
                         "sha256": hashlib.sha256(body).hexdigest(), "length": len(body)})
    return header + b"\n" + body + b"\n"


def save_artifact(artifact: ModelArtifact, path: str | Path) -> Path:
    """Write atomically: a reader sees either the old file or the complete new one."""
    path = Path(path)
    data = dumps_artifact(artifact)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def loads_artifact(data: bytes) -> ModelArtifact:
    head, sep, rest = data.partition(b"\n")
    if not sep:
        raise ArtifactError("truncated artifact: missing payload")
    try:
        header = json.loads(head)
    except json.JSONDecodeError:
        raise ArtifactError("unreadable artifact header") from None
    if not isinstance(header, dict) or header.get("format") != ARTIFACT_FORMAT:
        raise ArtifactError("not a model artifact")
    if header.get("version") != ARTIFACT_VERSION:
        raise ArtifactError(f"incompatible artifact version {header.get('version')!r}")
    body = rest[:-1] if rest.endswith(b"\n") else rest
    if len(body) != header.get("length"):
        raise ArtifactError("truncated artifact: payload length mismatch")
    if hashlib.sha256(body).hexdigest() != header.get("sha256"):
        raise ArtifactError("artifact checksum mismatch")
    try:
        payload = json.loads(body)
        schema = ContextSchema.from_dict(payload["schema"])
        if schema.digest() != payload["schema_digest"]:
            raise ArtifactError("schema digest mismatch")
        cups = CupSet.from_dict(payload["cups"])
        if cups.schema_digest and cups.schema_digest != payload["schema_digest"]:
            raise ArtifactError("CUPs were built for a different schema")
        return ModelArtifact(schema=schema,
                             vocab=EndorsementVocabulary.from_dict(payload["vocab"]),
                             cups=cups,
                             rankers=RankerSuite.from_dict(payload["rankers"]),
                             summary=payload.get("summary", {}))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ArtifactError):
            raise
        raise ArtifactError(f"malformed artifact payload: {exc}") from None


def load_artifact(path: str | Path) -> ModelArtifact:
    with open(path, "rb") as fh:
        return loads_artifact(fh.read())


def describe_cups(artifact: ModelArtifact) -> list[dict]:
    """Per-CUP retained categories, strongest first, plus ranker support."""
    out = []
    for cup in artifact.cups.cups:
        cats = [{"feature": f, "category": c, "weight": round(w, 4)}
                for (f, c), w in ((artifact.schema.label(j), w) for j, w in cup.weights.items())]
        cats.sort(key=lambda r: (-r["weight"], r["feature"], r["category"]))
        model = artifact.rankers.per_cup.get(cup.cup_id)
        out.append({"cup_id": cup.cup_id, "source_cluster": cup.source_cluster,
                    "categories": cats,
                    "training_reviews": model.n_reviews if model is not None else None,
                    "fallback": model is None})
    return out


def format_cups(profiles: Sequence[Mapping], columns: int = 4) -> str:
    """Side-by-side cluster columns, one retained category per row."""
    lines = []
    for start in range(0, len(profiles), columns):
        chunk = profiles[start:start + columns]
        cols = []
        for p in chunk:
            head = f"CUP {p['cup_id']}" + (" (fallback)" if p["fallback"] else "")
            body = [f"{c['category']} [{c['weight']:.2f}]" for c in p["categories"]]
            cols.append([head, "-" * len(head)] + body)
        width = max(len(s) for col in cols for s in col) + 2
        depth = max(len(col) for col in cols)
        for row in range(depth):
            lines.append("".join((col[row] if row < len(col) else "").ljust(width)
                                 for col in cols).rstrip())
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"
