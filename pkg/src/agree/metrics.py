"""Hits@N, MRR, relation-aware Hits@N and retriever usage."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .kg import EvalCase, RelationCardinalityTable


@dataclass(frozen=True)
class RankedPrediction:
    case: EvalCase
    entities: tuple[str, ...]
    trajectory_ref: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "entities", tuple(self.entities))
        if len(set(self.entities)) != len(self.entities):
            raise ValueError(f"duplicate entities in prediction for {self.case.case_id}")


def rank_of_gold(p: RankedPrediction) -> int | None:
    """1-based position of the gold entity, or None when it was not predicted."""
    try:
        return p.entities.index(p.case.gold) + 1
    except ValueError:
        return None


def _require(preds: Sequence[RankedPrediction]) -> None:
    if not preds:
        raise ValueError("metrics need at least one prediction")


def hits_at_n(preds: Sequence[RankedPrediction], n: int) -> float:
    _require(preds)
    if n < 1:
        raise ValueError("n must be >= 1")
    hit = 0
    for p in preds:
        r = rank_of_gold(p)
        if r is not None and r <= n:
            hit += 1
    return hit / len(preds)


def mrr(preds: Sequence[RankedPrediction]) -> float:
    _require(preds)
    total = 0.0
    for p in preds:
        r = rank_of_gold(p)
        if r is not None:
            total += 1.0 / r
    return total / len(preds)


class InclusionRule(str, enum.Enum):
    """Which cases count toward relation-aware Hits@N.

    ``CARDINALITY_FITS`` keeps a case when the relation's answer-set size
    N_rel is at most N. ``LITERAL`` keeps it when N <= N_rel instead, which
    admits every supported case at N=1.
    """

    CARDINALITY_FITS = "nrel_le_n"
    LITERAL = "n_le_nrel"


@dataclass(frozen=True)
class RAHits:
    value: float | None  # None when support is 0
    support: int
    unsupported: int = 0  # cases whose relation has no cardinality entry


def relation_aware_hits(
    preds: Sequence[RankedPrediction],
    table: RelationCardinalityTable,
    n: int,
    rule: InclusionRule = InclusionRule.CARDINALITY_FITS,
) -> RAHits:
    if n < 1:
        raise ValueError("n must be >= 1")
    support = hit = unsupported = 0
    for p in preds:
        n_rel = table.get(p.case.query.relation, p.case.query.direction)
        if n_rel is None:
            unsupported += 1
            continue
        valid = n_rel <= n if rule is InclusionRule.CARDINALITY_FITS else n <= n_rel
        if not valid:
            continue
        support += 1
        r = rank_of_gold(p)
        if r is not None and r <= n:
            hit += 1
    return RAHits(hit / support if support else None, support, unsupported)


@dataclass(frozen=True)
class RetrieverUsage:
    basic_calls: int
    advanced_calls: int
    no_retrieval_cases: int
    cases: int

    def to_dict(self) -> dict:
        return {"basic_calls": self.basic_calls, "advanced_calls": self.advanced_calls, "no_retrieval_cases": self.no_retrieval_cases, "cases": self.cases}


def retriever_usage(trajectories: Iterable) -> RetrieverUsage:
    from .agent import ActionKind
    from .retrieval import ToolKind

    basic = advanced = none = cases = 0
    for t in trajectories:
        cases += 1
        calls = [s.action.tool for s in t.steps if s.action.kind is ActionKind.TOOL_CALL]
        basic += sum(1 for c in calls if c is ToolKind.BASIC)
        advanced += sum(1 for c in calls if c is ToolKind.ADVANCED)
        if not calls:
            none += 1
    return RetrieverUsage(basic, advanced, none, cases)


@dataclass(frozen=True)
class MetricValue:
    value: float | None
    support: int


@dataclass
class MetricReport:
    hits: dict[int, MetricValue] = field(default_factory=dict)
    mrr: float = 0.0
    ra_hits: dict[int, MetricValue] = field(default_factory=dict)
    ra_unsupported: int = 0
    case_count: int = 0
    ra_rule: InclusionRule = InclusionRule.CARDINALITY_FITS

    def rows(self) -> list[dict]:
        rows = [{"metric": "hits", "n": n, "value": v.value, "support": v.support} for n, v in sorted(self.hits.items())]
        rows.append({"metric": "mrr", "n": None, "value": self.mrr, "support": self.case_count})
        rows += [{"metric": "ra_hits", "n": n, "value": v.value, "support": v.support} for n, v in sorted(self.ra_hits.items())]
        return rows

    def to_dict(self) -> dict:
        return {"case_count": self.case_count, "ra_rule": self.ra_rule.value, "ra_unsupported": self.ra_unsupported, "rows": self.rows()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Plain-text table; percentages to one decimal, MRR also shown x100."""

        def pct(v: float | None) -> str:
            return "n/a" if v is None else f"{100 * v:.1f}%"

        lines = [f"{'metric':<12}{'value':>10}{'support':>10}"]
        for n, v in sorted(self.hits.items()):
            lines.append(f"{f'Hits@{n}':<12}{pct(v.value):>10}{v.support:>10}")
        lines.append(f"{'MRR':<12}{100 * self.mrr:>10.1f}{self.case_count:>10}")
        for n, v in sorted(self.ra_hits.items()):
            lines.append(f"{f'RA-Hits@{n}':<12}{pct(v.value):>10}{v.support:>10}")
        if self.ra_unsupported:
            lines.append(f"(relation-aware: {self.ra_unsupported} cases with relations unseen in training)")
        return "\n".join(lines)


def evaluate(
    preds: Sequence[RankedPrediction],
    table: RelationCardinalityTable | None,
    ns: Sequence[int] = (1, 3, 5, 10),
    rule: InclusionRule = InclusionRule.CARDINALITY_FITS,
) -> MetricReport:
    _require(preds)
    report = MetricReport(case_count=len(preds), ra_rule=rule, mrr=mrr(preds))
    for n in ns:
        report.hits[n] = MetricValue(hits_at_n(preds, n), len(preds))
        if table is not None:
            ra = relation_aware_hits(preds, table, n, rule)
            report.ra_hits[n] = MetricValue(ra.value, ra.support)
            report.ra_unsupported = ra.unsupported
    return report
