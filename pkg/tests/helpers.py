"""Shared fixtures: the three canned agent episodes and a planted synthetic benchmark."""

from __future__ import annotations

import io
import json
from pathlib import Path

from agree.agent import AgentDeps
from agree.clients import RecordedRetriever
from agree.kg import Direction, EvalCase, KnowledgeGraph, Query, Triple, load_entity_catalog
from agree.llm import ScriptedLLM
from agree.retrieval import ToolKind

FIXTURES = Path(__file__).parent / "fixtures"

# (criterion, passed, seconds, detail) rows collected by test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, bool, float, str]] = []

CATALOG_TSV = """\
Q1\tUs\tUs (TV series)\ta Thai TV series
Q2\tLove Scout\tMy Perfect Secretary\t2025 South Korean television series
Q3\tBattle of Baqubah\t\tbattle of the Iraq War
Q10\tF4 Thailand\t\tThai TV series
Q11\tBright Vachirawit\tBright\tThai actor
Q12\tWin Metawin\t\tThai actor
Q20\tromance drama\tromantic drama\t
Q21\tworkplace drama\t\t
Q22\tCrash Landing on You\t\tSouth Korean TV series
Q30\tbattle\t\tpart of a war
Q31\tBattle of Mosul\t\tbattle
Q32\tIraq\t\tcountry in Western Asia
Q101\tEmi Thasorn Klinnium\tThasorn Klinnium\tThai actress
Q102\tBonnie Pattraphus Borattasuwan\tPattraphus Borattasuwan\tThai actress
P161\tcast member\t\t
P136\tgenre\t\t
P31\tinstance of\t\t
P17\tcountry\t\t
"""

TRAIN = [
    Triple("Q10", "P161", "Q11"),
    Triple("Q10", "P161", "Q12"),
    Triple("Q22", "P136", "Q20"),
    Triple("Q31", "P31", "Q30"),
    Triple("Q3", "P17", "Q32"),
    Triple("Q31", "P17", "Q32"),
]

EPISODE_CASES = {
    "escalation": EvalCase("escalation", Query(Direction.TAIL, "Q1", "P161"), "Q101"),
    "sufficient": EvalCase("sufficient", Query(Direction.TAIL, "Q2", "P136"), "Q20"),
    "direct": EvalCase("direct", Query(Direction.TAIL, "Q3", "P31"), "Q30"),
}


def catalog():
    return load_entity_catalog(io.StringIO(CATALOG_TSV))


def episode_deps(llm=None) -> AgentDeps:
    return AgentDeps(
        llm=llm or ScriptedLLM.from_file(FIXTURES / "episodes.json"),
        basic=RecordedRetriever.from_json(FIXTURES / "recorded_basic.json", ToolKind.BASIC),
        advanced=RecordedRetriever.from_json(FIXTURES / "recorded_advanced.json", ToolKind.ADVANCED),
        kg=KnowledgeGraph(TRAIN),
        catalog=catalog(),
        clock=lambda: 0.0,
    )


def step_signature(traj) -> list[str]:
    out = []
    for s in traj.steps:
        a = s.action
        if a.kind.value == "tool_call":
            out.append(f"tool_call:{a.tool.value}")
        elif a.kind.value == "reflect":
            out.append("reflect:" + ("sufficient" if a.sufficient else "continue"))
        else:
            out.append("answer")
    return out


def trajectory_json(traj) -> str:
    return json.dumps(traj.to_dict(timestamps=False), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# -- planted benchmark ------------------------------------------------------------

PLANTED_RELATIONS = [("R1", "founded by"), ("R2", "located in"), ("R3", "genre"), ("R4", "director"), ("R5", "record label")]


def write_planted_benchmark(root: Path, n_cases: int = 50) -> dict[str, Path]:
    """A benchmark whose answers are stated verbatim in a small document corpus.

    Test entities are unseen in training; each answer sentence reads
    "The <relation label> of <entity label> is <answer label>." so a
    retrieval-following model can recover it. A few distractor documents
    share keywords with the queries.
    """
    root.mkdir(parents=True, exist_ok=True)
    catalog_rows, train, test, corpus = [], [], [], []
    for rid, label in PLANTED_RELATIONS:
        catalog_rows.append(f"{rid}\t{label}\t\t")
    for i in range(20):
        catalog_rows.append(f"A{i}\tanswer entity {i}\tanswer {i} alias\tplanted answer")
    for i in range(10):
        catalog_rows.append(f"K{i}\tknown entity {i}\t\ttraining entity")
        rid = PLANTED_RELATIONS[i % len(PLANTED_RELATIONS)][0]
        train.append(f"K{i}\t{rid}\tA{(i * 7) % 20}")
        train.append(f"K{i}\t{rid}\tA{(i * 7 + 1) % 20}")
    for i in range(n_cases):
        rid, rlabel = PLANTED_RELATIONS[i % len(PLANTED_RELATIONS)]
        ans = f"A{(i * 3) % 20}"
        catalog_rows.append(f"E{i}\tnew entity {i}\t\temerging entity number {i}")
        test.append(f"E{i}\t{rid}\t{ans}")
        corpus.append({
            "source_id": f"doc-E{i}",
            "title": f"new entity {i}",
            "text": f"New entity {i} appeared in 2025. The {rlabel} of new entity {i} is answer entity {(i * 3) % 20}. It drew attention quickly.",
        })
    for j in range(5):
        corpus.append({"source_id": f"noise-{j}", "title": f"Unrelated {j}", "text": f"Something about entity {j} and a genre. Nothing is planted here."})
    paths = {
        "train": root / "train.tsv",
        "test": root / "test.tsv",
        "catalog": root / "catalog.tsv",
        "corpus": root / "corpus.jsonl",
    }
    paths["train"].write_text("\n".join(train) + "\n", encoding="utf-8")
    paths["test"].write_text("\n".join(test) + "\n", encoding="utf-8")
    paths["catalog"].write_text("\n".join(catalog_rows) + "\n", encoding="utf-8")
    paths["corpus"].write_text("\n".join(json.dumps(d) for d in corpus) + "\n", encoding="utf-8")
    return paths


def planted_config(root: Path, paths: dict[str, Path], concurrency: int = 1, extra: str = "") -> Path:
    cfg = root / "run.ini"
    cfg.write_text(
        f"""[data]
train = {paths['train'].name}
test = {paths['test'].name}
catalog = {paths['catalog'].name}

[llm]
mode = follow

[basic]
mode = corpus
path = {paths['corpus'].name}

[advanced]
mode = recorded

[run]
concurrency = {concurrency}
cache_dir = cache
out_dir = run
offline = true
{extra}""",
        encoding="utf-8",
    )
    return cfg
