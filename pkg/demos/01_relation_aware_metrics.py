"""Plain vs relation-aware Hits@N on a tiny graph with one multi-answer relation.

A person holds three occupations in the training graph, so any single guess
at their occupation is a coin toss. Relation-aware Hits@1 leaves that case
out; the literal inclusion rule keeps it.
"""

from agree.kg import Direction, EvalCase, KnowledgeGraph, Query, Triple, compute_relation_cardinality
from agree.metrics import InclusionRule, RankedPrediction, evaluate

train = KnowledgeGraph([
    Triple("oxley", "occupation", "politician"),
    Triple("oxley", "occupation", "sheriff"),
    Triple("oxley", "occupation", "lawyer"),
    Triple("oxley", "birthplace", "new_jersey"),
    Triple("adams", "birthplace", "ohio"),
])
table = compute_relation_cardinality(train)
print("tail cardinality:", dict(table.tail_card))

preds = [
    RankedPrediction(EvalCase("occ", Query(Direction.TAIL, "oxley", "occupation"), "lawyer"), ("politician", "sheriff", "lawyer")),
    RankedPrediction(EvalCase("born", Query(Direction.TAIL, "adams", "birthplace"), "ohio"), ("ohio", "texas")),
]

print("\ncardinality-fits rule (default)")
print(evaluate(preds, table, ns=(1, 3)).to_table())
print("\nliteral rule")
print(evaluate(preds, table, ns=(1, 3), rule=InclusionRule.LITERAL).to_table())
