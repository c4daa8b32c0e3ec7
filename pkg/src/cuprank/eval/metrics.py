"""Engagement metrics with normal-approximation 95% intervals.

Conversion and CTR use the Wald interval for a proportion; clicks per user
uses a normal interval with Poisson variance. Two arms differ significantly
when their intervals do not overlap.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

Z95 = 1.96


class MetricError(ValueError):
    pass


def _ratio(num, den, what):
    if den <= 0:
        raise MetricError(f"{what}: denominator must be positive")
    return num / den


def ctr(clicks: int, searches: int) -> float:
    return _ratio(clicks, searches, "ctr")


def clicks_per_user(clicks: int, users: int) -> float:
    return _ratio(clicks, users, "clicks_per_user")


def conversion(converted_users: int, users: int) -> float:
    return _ratio(converted_users, users, "conversion")


def ci95_proportion(p: float, n: int) -> float:
    if n <= 0:
        raise MetricError("n must be positive")
    if not 0 <= p <= 1:
        raise MetricError("p must lie in [0, 1]")
    return Z95 * math.sqrt(p * (1 - p) / n)


def ci95_rate(r: float, n: int) -> float:
    if n <= 0:
        raise MetricError("n must be positive")
    if r < 0:
        raise MetricError("rate must be non-negative")
    return Z95 * math.sqrt(r / n)


@dataclass(frozen=True)
class Estimate:
    value: float
    half_width: float

    @property
    def low(self) -> float:
        return self.value - self.half_width

    @property
    def high(self) -> float:
        return self.value + self.half_width

    def overlaps(self, other: "Estimate") -> bool:
        return self.low <= other.high and other.low <= self.high


@dataclass(frozen=True)
class ArmReport:
    """One arm's raw counts and derived metrics.

    CTR is clicks per search. When multi-click sessions push it above 1 the
    proportion interval is undefined and the Poisson-rate interval is used.
    """
    name: str
    users: int
    searches: int
    clicks: int
    converted_users: int | None = None
    conversion_override: float | None = None
    list_length: int | None = None

    def __post_init__(self):
        if self.users <= 0 or self.searches <= 0:
            raise MetricError("users and searches must be positive")
        if self.clicks < 0:
            raise MetricError("clicks must be non-negative")
        if self.converted_users is not None and not 0 <= self.converted_users <= self.users:
            raise MetricError("converted_users must lie in [0, users]")
        if self.list_length is not None and self.clicks > self.searches * self.list_length:
            raise MetricError("more clicks than listed results")

    @property
    def conversion(self) -> Estimate | None:
        if self.conversion_override is not None:
            p = self.conversion_override
        elif self.converted_users is not None:
            p = conversion(self.converted_users, self.users)
        else:
            return None
        return Estimate(p, ci95_proportion(p, self.users))

    @property
    def clicks_per_user(self) -> Estimate:
        r = clicks_per_user(self.clicks, self.users)
        return Estimate(r, ci95_rate(r, self.users))

    @property
    def ctr(self) -> Estimate:
        p = ctr(self.clicks, self.searches)
        half = ci95_proportion(p, self.searches) if p <= 1 else ci95_rate(p, self.searches)
        return Estimate(p, half)

    def metrics(self) -> dict[str, Estimate]:
        out = {}
        if self.conversion is not None:
            out["conversion"] = self.conversion
        out["clicks_per_user"] = self.clicks_per_user
        out["ctr"] = self.ctr
        return out


@dataclass(frozen=True)
class Lift:
    metric: str
    baseline: float
    variant: float
    absolute: float
    relative: float
    significant: bool


def compare(baseline: ArmReport, variant: ArmReport) -> dict[str, Lift]:
    """Absolute and relative lift per shared metric; significant iff CIs are disjoint."""
    a, b = baseline.metrics(), variant.metrics()
    out = {}
    for name in a:
        if name not in b:
            continue
        x, y = a[name], b[name]
        rel = (y.value - x.value) / x.value if x.value else float("nan")
        out[name] = Lift(name, x.value, y.value, y.value - x.value, rel, not x.overlaps(y))
    return out


@dataclass(frozen=True)
class MetricsReport:
    arms: tuple[ArmReport, ...]
    baseline: str
    meta: Mapping = None

    def arm(self, name: str) -> ArmReport:
        for a in self.arms:
            if a.name == name:
                return a
        raise KeyError(name)

    def lifts(self) -> dict[str, dict[str, Lift]]:
        base = self.arm(self.baseline)
        return {a.name: compare(base, a) for a in self.arms if a.name != self.baseline}

    def to_dict(self) -> dict:
        arms = []
        for a in self.arms:
            row = asdict(a)
            row["metrics"] = {k: {"value": v.value, "ci95": v.half_width}
                              for k, v in a.metrics().items()}
            arms.append(row)
        lifts = {name: {m: asdict(l) for m, l in ls.items()} for name, ls in self.lifts().items()}
        return {"baseline": self.baseline, "arms": arms, "lift": lifts,
                "meta": dict(self.meta or {})}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["arm", "users", "searches", "clicks", "metric", "value", "ci95"])
        for a in self.arms:
            for k, v in a.metrics().items():
                w.writerow([a.name, a.users, a.searches, a.clicks, k,
                            f"{v.value:.6f}", f"{v.half_width:.6f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        head = ["Ranker", "Users", "Searches", "Clicks", "Conversion", "Clicks/user", "CTR"]
        rows = [head]
        for a in self.arms:
            conv = a.conversion
            rows.append([a.name, f"{a.users:,}", f"{a.searches:,}", f"{a.clicks:,}",
                         f"{conv.value:.1%}±{conv.half_width:.1%}" if conv else "n/a",
                         f"{a.clicks_per_user.value:.3f}±{a.clicks_per_user.half_width:.3f}",
                         f"{a.ctr.value:.1%}±{a.ctr.half_width:.1%}"])
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        for name, ls in self.lifts().items():
            for m, l in ls.items():
                flag = "significant" if l.significant else "not significant"
                lines.append(f"{name} vs {self.baseline} {m}: {l.absolute:+.4f} "
                             f"({l.relative:+.1%}) {flag}")
        return "\n".join(lines) + "\n"


def report_from_counts(rows: Sequence[Mapping], baseline: str | None = None,
                       meta: Mapping | None = None) -> MetricsReport:
    arms = tuple(ArmReport(name=r["name"], users=int(r["users"]), searches=int(r["searches"]),
                           clicks=int(r["clicks"]),
                           converted_users=r.get("converted_users"),
                           conversion_override=r.get("conversion"),
                           list_length=r.get("list_length")) for r in rows)
    return MetricsReport(arms, baseline or arms[0].name, meta or {})
