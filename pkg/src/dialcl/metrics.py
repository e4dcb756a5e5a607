"""Ranking metrics over groups of scored candidates: R_n@k, MAP, MRR, P@1."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence

COLUMNS = ("R@1", "R@2", "R@5", "MAP", "MRR", "P@1")
KS = (1, 2, 5)


@dataclass
class CandidateGroup:
    context_id: int | str
    scores: Sequence[float]
    labels: Sequence[int]

    def __post_init__(self):
        if len(self.scores) != len(self.labels):
            raise ValueError("scores and labels must have the same length")
        if len(self.scores) < 1:
            raise ValueError("a candidate group needs at least one candidate")


@dataclass
class MetricReport:
    r1: float
    r2: float
    r5: float
    map: float
    mrr: float
    p1: float
    total: int
    skipped: int

    def values(self) -> dict[str, float]:
        return dict(zip(COLUMNS, (self.r1, self.r2, self.r5, self.map, self.mrr, self.p1)))

    def records(self, **extra) -> list[str]:
        return [json.dumps({**extra, "metric": k, "value": v}, sort_keys=True) for k, v in self.values().items()]

    def table(self) -> str:
        head = " ".join(f"{c:>7}" for c in COLUMNS)
        row = " ".join(f"{v:7.4f}" for v in self.values().values())
        return f"{head}\n{row}\ngroups: {self.total} (skipped {self.skipped})"


def rank_group(g: CandidateGroup) -> list[int]:
    """Candidate indices by descending score; ties keep input order."""
    return sorted(range(len(g.scores)), key=lambda i: -g.scores[i])


def group_metrics(g: CandidateGroup, ks: Iterable[int] = KS) -> dict | None:
    """Per-group hit@k, AP, RR and P@1, or None if the group has no positive."""
    order = rank_group(g)
    ranked = [g.labels[i] for i in order]
    n_pos = sum(ranked)
    if n_pos == 0:
        return None
    hits = 0
    ap = Fraction(0)  # exact, then rounded once
    first = None
    for r, lab in enumerate(ranked, start=1):
        if lab:
            hits += 1
            ap += Fraction(hits, r)
            if first is None:
                first = r
    out = {f"hit@{k}": 1.0 if first <= k else 0.0 for k in ks}
    out["AP"] = float(ap / n_pos)
    out["RR"] = 1.0 / first
    out["P@1"] = float(ranked[0])
    return out


def aggregate(per_group: Sequence[dict | None]) -> MetricReport:
    kept = [m for m in per_group if m is not None]
    if not kept:
        raise ValueError("every group was skipped (no positive candidates); nothing to aggregate")
    n = len(kept)

    def mean(key):
        return sum(m[key] for m in kept) / n

    return MetricReport(mean("hit@1"), mean("hit@2"), mean("hit@5"), mean("AP"), mean("RR"), mean("P@1"),
                        total=len(per_group), skipped=len(per_group) - n)


def evaluate_groups(groups: Sequence[CandidateGroup]) -> MetricReport:
    return aggregate([group_metrics(g) for g in groups])


def restrict_to_pair(g: CandidateGroup) -> CandidateGroup | None:
    """The first positive and the first negative of a group (for R_2@1).

    Their original relative order is kept so ties resolve as in the full group.
    """
    pos = next((i for i, y in enumerate(g.labels) if y), None)
    neg = next((i for i, y in enumerate(g.labels) if not y), None)
    if pos is None or neg is None:
        return None
    keep = sorted((pos, neg))
    return CandidateGroup(g.context_id, [g.scores[i] for i in keep], [g.labels[i] for i in keep])


def report_from_dict(d: dict) -> MetricReport:
    return MetricReport(**d)


def report_to_dict(r: MetricReport) -> dict:
    return asdict(r)
