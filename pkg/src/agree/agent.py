"""The tool-using completion agent: search, reflect, answer, format-check."""

from __future__ import annotations

import enum
import logging
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Callable, Mapping, Sequence

from .kg import Direction, EntityRecord, EvalCase, KnowledgeGraph, Query, Triple, examples_for_relation, neighborhood
from .llm import ChatMessage, LLMClient, LLMTurn, Role, ToolInvocation, ToolSchema
from .retrieval import (
    Chunk,
    LexicalScorer,
    RelevanceScorer,
    RetrievalError,
    RetrieverClient,
    RetrieverConfig,
    ToolKind,
    process,
    search,
)

logger = logging.getLogger(__name__)

NONE_KNOWN = "(none known)"


@lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files("agree.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


@dataclass
class AgentConfig:
    max_iterations: int = 20
    max_gen_attempts: int = 3
    neighborhood_limit: int = 10
    relation_example_count: int = 5
    answer_example_count: int = 10
    max_context_chars: int = 120_000
    model_id: str = ""

    def __post_init__(self) -> None:
        for name in ("max_iterations", "max_gen_attempts", "neighborhood_limit", "relation_example_count", "answer_example_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


TOOL_SCHEMAS = (
    ToolSchema(ToolKind.BASIC.tool_name, "Search an encyclopedic document collection (e.g. Wikipedia). Use this first."),
    ToolSchema(ToolKind.ADVANCED.tool_name, "Search the web. Use when the basic search does not give the needed information."),
)


class ActionKind(str, enum.Enum):
    TOOL_CALL = "tool_call"
    REFLECT = "reflect"
    ANSWER = "answer"


@dataclass(frozen=True)
class AgentAction:
    kind: ActionKind
    tool: ToolKind | None = None
    query: str = ""
    text: str = ""
    sufficient: bool = False

    @classmethod
    def tool_call(cls, tool: ToolKind, query: str) -> "AgentAction":
        if not query.strip():
            raise ValueError("tool call query must be non-empty")
        return cls(ActionKind.TOOL_CALL, tool=tool, query=query)

    @classmethod
    def reflect(cls, text: str, sufficient: bool) -> "AgentAction":
        return cls(ActionKind.REFLECT, text=text, sufficient=sufficient)

    @classmethod
    def answer(cls, raw_text: str) -> "AgentAction":
        return cls(ActionKind.ANSWER, text=raw_text)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind.value}
        if self.kind is ActionKind.TOOL_CALL:
            d.update(tool=self.tool.value, query=self.query)
        elif self.kind is ActionKind.REFLECT:
            d.update(text=self.text, sufficient=self.sufficient)
        else:
            d.update(raw_text=self.text)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AgentAction":
        kind = ActionKind(d["kind"])
        if kind is ActionKind.TOOL_CALL:
            return cls(kind, tool=ToolKind(d["tool"]), query=d["query"])
        if kind is ActionKind.REFLECT:
            return cls(kind, text=d["text"], sufficient=d["sufficient"])
        return cls(kind, text=d["raw_text"])


@dataclass
class StepRecord:
    index: int
    action: AgentAction
    observation: str | None = None
    timestamp: float = 0.0

    def to_dict(self, timestamps: bool = True) -> dict:
        d = {"index": self.index, "action": self.action.to_dict(), "observation": self.observation}
        if timestamps:
            d["timestamp"] = self.timestamp
        return d


class Termination(str, enum.Enum):
    ANSWERED = "ANSWERED"
    ITERATION_BUDGET = "ITERATION_BUDGET"
    FORMAT_BUDGET = "FORMAT_BUDGET"


@dataclass
class Trajectory:
    case: EvalCase
    steps: list[StepRecord] = field(default_factory=list)
    tools_used: Counter = field(default_factory=Counter)
    final_candidates: list[str] = field(default_factory=list)
    terminated_by: Termination | None = None
    salvaged: bool = False
    llm_calls: int = 0
    evidence: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def iterations(self) -> int:
        return self.llm_calls

    def to_dict(self, timestamps: bool = True) -> dict:
        q = self.case.query
        return {
            "case_id": self.case.case_id,
            "query": {"direction": q.direction.value, "known_entity": q.known_entity, "relation": q.relation},
            "gold": self.case.gold,
            "steps": [s.to_dict(timestamps) for s in self.steps],
            "tools_used": {k.value: self.tools_used[k] for k in ToolKind if self.tools_used[k]},
            "final_candidates": list(self.final_candidates),
            "terminated_by": self.terminated_by.value if self.terminated_by else None,
            "salvaged": self.salvaged,
            "llm_calls": self.llm_calls,
            "evidence": self.evidence,
            "notes": self.notes,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Trajectory":
        q = d["query"]
        case = EvalCase(d["case_id"], Query(Direction(q["direction"]), q["known_entity"], q["relation"]), d["gold"])
        return cls(
            case=case,
            steps=[StepRecord(s["index"], AgentAction.from_dict(s["action"]), s.get("observation"), s.get("timestamp", 0.0)) for s in d["steps"]],
            tools_used=Counter({ToolKind(k): v for k, v in d.get("tools_used", {}).items()}),
            final_candidates=list(d.get("final_candidates", [])),
            terminated_by=Termination(d["terminated_by"]) if d.get("terminated_by") else None,
            salvaged=d.get("salvaged", False),
            llm_calls=d.get("llm_calls", 0),
            evidence=list(d.get("evidence", [])),
            notes=list(d.get("notes", [])),
            error=d.get("error"),
        )


# -- answer format ------------------------------------------------------------

class AnswerFormatError(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


_OPEN, _CLOSE = "<answer>", "</answer>"


def dedupe_candidates(items: Sequence[str]) -> list[str]:
    """Trim, drop empties and drop case-insensitive repeats, keeping first occurrences."""
    seen: set[str] = set()
    out = []
    for item in items:
        s = item.strip()
        key = s.casefold()
        if s and key not in seen:
            seen.add(key)
            out.append(s)
    return out


def check_answer_format(raw: str) -> list[str]:
    """Parse exactly one ``<answer>a, b, ...</answer>`` block into a candidate list.

    Raises :class:`AnswerFormatError` whose ``reason`` is one of ``missing``,
    ``multiple``, ``unbalanced`` or ``empty``.
    """
    opens, closes = raw.count(_OPEN), raw.count(_CLOSE)
    if opens == 0 and closes == 0:
        raise AnswerFormatError("missing", "no <answer> block")
    if opens > 1 or closes > 1:
        raise AnswerFormatError("multiple", f"{opens} opening and {closes} closing tags")
    start, end = raw.find(_OPEN), raw.find(_CLOSE)
    if opens != closes or end < start:
        raise AnswerFormatError("unbalanced", "answer tags are not a single well-formed block")
    candidates = dedupe_candidates(raw[start + len(_OPEN) : end].split(","))
    if not candidates:
        raise AnswerFormatError("empty", "answer block has no candidates")
    return candidates


def salvage_candidates(raw: str) -> list[str]:
    return dedupe_candidates(raw.replace(_OPEN, ",").replace(_CLOSE, ",").split(","))


# -- prompts ------------------------------------------------------------------

def _label(catalog: Mapping[str, EntityRecord], ident: str) -> str:
    rec = catalog.get(ident)
    return rec.label if rec is not None and rec.label else ident


def render_triple(t: Triple, catalog: Mapping[str, EntityRecord]) -> str:
    return f"({_label(catalog, t.head)}, {_label(catalog, t.relation)}, {_label(catalog, t.tail)})"


def render_query(case: EvalCase, catalog: Mapping[str, EntityRecord]) -> str:
    q = case.query
    ent, rel = _label(catalog, q.known_entity), _label(catalog, q.relation)
    if q.direction is Direction.TAIL:
        return f"Query: ({ent}, {rel}, ?)"
    return f"Query: (?, {rel}, {ent})"


def _fill(text: str, slots: Mapping[str, str]) -> str:
    for key, value in slots.items():
        text = text.replace(f"[{key}]", value)
    return text


def build_task_prompt(
    case: EvalCase, kg: KnowledgeGraph, catalog: Mapping[str, EntityRecord], cfg: AgentConfig | None = None
) -> list[ChatMessage]:
    cfg = cfg or AgentConfig()
    q = case.query
    gold = case.gold_triple
    rel_examples = examples_for_relation(kg, q.relation, cfg.relation_example_count, exclude={gold})
    known = neighborhood(kg, q.known_entity, cfg.neighborhood_limit, exclude={gold})
    rec = catalog.get(q.known_entity)
    description = rec.description if rec is not None and rec.description else NONE_KNOWN
    system = _fill(
        template("task_instruct"),
        {
            "query": render_query(case, catalog),
            "relation": _label(catalog, q.relation),
            "entity": _label(catalog, q.known_entity),
            "entity description": "\n" + description,
            "triples with the same relation": "\n".join(render_triple(t, catalog) for t in rel_examples) or NONE_KNOWN,
            "triples with the same entity": "\n".join(render_triple(t, catalog) for t in known) or NONE_KNOWN,
        },
    )
    return [ChatMessage(Role.SYSTEM, system.rstrip("\n")), ChatMessage(Role.USER, template("protocol").rstrip("\n"))]


def relation_answer_examples(kg: KnowledgeGraph, case: EvalCase, catalog: Mapping[str, EntityRecord], k: int = 10) -> list[str]:
    """Labels of training answers for the same relation and direction, gold triple excluded."""
    gold = case.gold_triple
    out: list[str] = []
    for t in kg.by_relation.get(case.query.relation, ()):
        if t == gold:
            continue
        label = _label(catalog, t.tail if case.query.direction is Direction.TAIL else t.head)
        if label not in out:
            out.append(label)
            if len(out) == k:
                break
    return out


def build_answer_prompt(case: EvalCase, relation_tail_examples: Sequence[str]) -> ChatMessage:
    examples = ", ".join(relation_tail_examples) if relation_tail_examples else "(none)"
    return ChatMessage(Role.USER, _fill(template("answer_generation"), {"endings of triples with the same relation": examples}).rstrip("\n"))


# -- decision parsing ------------------------------------------------------------

_DECISION = re.compile(r"^\W*DECISION:\s*(CONTINUE|SUFFICIENT)\W*$", re.I | re.M)


def parse_turn(turn: LLMTurn) -> AgentAction:
    """Map one LLM turn onto exactly one action; never raises."""
    if turn.tool_call is not None:
        try:
            return AgentAction.tool_call(ToolKind.from_tool_name(turn.tool_call.name), turn.tool_call.query.strip())
        except ValueError:
            return AgentAction.reflect(f"[invalid tool call {turn.tool_call.name!r}: {turn.tool_call.query!r}] {turn.text}".strip(), False)
    text = turn.text or ""
    if _OPEN in text or _CLOSE in text:
        return AgentAction.answer(text)
    decisions = _DECISION.findall(text)
    return AgentAction.reflect(text, bool(decisions) and decisions[-1].upper() == "SUFFICIENT")


def decide_next(messages: Sequence[ChatMessage], llm: LLMClient, tools: Sequence[ToolSchema] = TOOL_SCHEMAS, case_id: str | None = None) -> AgentAction:
    return parse_turn(llm.complete(messages, tools, case_id=case_id))


def format_observation(tool: ToolKind, query: str, chunks: Sequence[Chunk]) -> str:
    head = f'Results for {tool.tool_name}("{query}"):'
    if not chunks:
        return f"{head}\nNo relevant passages found."
    lines = [f"{i}. {c.doc.title} — {' '.join(c.text.split())}" for i, c in enumerate(chunks, start=1)]
    return "\n".join([head, *lines])


# -- the loop ---------------------------------------------------------------------

@dataclass
class AgentDeps:
    llm: LLMClient
    basic: RetrieverClient
    advanced: RetrieverClient
    kg: KnowledgeGraph
    catalog: Mapping[str, EntityRecord]
    scorer: RelevanceScorer = field(default_factory=LexicalScorer)
    retriever: RetrieverConfig = field(default_factory=RetrieverConfig)
    clock: Callable[[], float] = time.time


_TRUNCATED = "[observation truncated to fit the context window]"


def _fit_context(messages: list[ChatMessage], limit: int, notes: list[str]) -> None:
    total = sum(len(m.content) for m in messages)
    for i, m in enumerate(messages):
        if total <= limit:
            return
        if m.role is Role.TOOL and m.content != _TRUNCATED:
            total -= len(m.content) - len(_TRUNCATED)
            messages[i] = ChatMessage(Role.TOOL, _TRUNCATED)
            notes.append(f"truncated tool observation at message {i}")


class _Run:
    def __init__(self, case: EvalCase, deps: AgentDeps, cfg: AgentConfig):
        self.case, self.deps, self.cfg = case, deps, cfg
        self.traj = Trajectory(case=case)
        self.messages = build_task_prompt(case, deps.kg, deps.catalog, cfg)
        self.evidence: list[Chunk] = []

    def call(self) -> LLMTurn:
        _fit_context(self.messages, self.cfg.max_context_chars, self.traj.notes)
        self.traj.llm_calls += 1
        try:
            return self.deps.llm.complete(list(self.messages), TOOL_SCHEMAS, case_id=self.case.case_id)
        except Exception as exc:  # an LLM failure is an unparseable turn
            logger.warning("case %s: LLM call failed: %s", self.case.case_id, exc)
            self.traj.notes.append(f"llm call failed: {exc}")
            return LLMTurn(f"[llm error: {exc}]")

    def record(self, action: AgentAction, observation: str | None = None) -> None:
        self.traj.steps.append(StepRecord(len(self.traj.steps), action, observation, self.deps.clock()))

    def tool_step(self, action: AgentAction, turn: LLMTurn) -> None:
        tool = action.tool
        self.traj.tools_used[tool] += 1
        client = self.deps.basic if tool is ToolKind.BASIC else self.deps.advanced
        notes: list[str] = []
        try:
            docs = search(tool, action.query, client, self.deps.retriever)
            chunks = process(docs, action.query, self.deps.scorer, self.deps.retriever, notes)
            observation = format_observation(tool, action.query, chunks)
            if self.deps.retriever.accumulate_evidence:
                self.evidence.extend(chunks)
            else:
                self.evidence = list(chunks)
        except RetrievalError as exc:
            observation = f"Tool failed: {exc}"
        self.traj.notes.extend(notes)
        self.record(action, observation)
        self.messages.append(ChatMessage(Role.ASSISTANT, turn.text, ToolInvocation(tool.tool_name, action.query)))
        self.messages.append(ChatMessage(Role.TOOL, observation))
        self.messages.append(ChatMessage(Role.USER, template("reflection").rstrip("\n")))

    def answer_step(self, raw: str, via_tool: ToolInvocation | None = None) -> list[str] | None:
        action = AgentAction.answer(raw)
        try:
            if via_tool is not None:
                raise AnswerFormatError("tool_call", f"tool call {via_tool.name} during answer generation")
            candidates = check_answer_format(raw)
        except AnswerFormatError as exc:
            self.record(action, f"format error: {exc}")
            self.messages.append(ChatMessage(Role.ASSISTANT, raw, via_tool))
            if via_tool is not None:
                self.messages.append(ChatMessage(Role.TOOL, "Tool calls are not available while answering."))
            self.messages.append(ChatMessage(Role.USER, _fill(template("format_retry"), {"reason": exc.reason}).rstrip("\n")))
            return None
        self.record(action, "format ok")
        self.messages.append(ChatMessage(Role.ASSISTANT, raw))
        return candidates

    def run(self) -> tuple[Trajectory, list[str]]:
        cfg = self.cfg
        candidates: list[str] | None = None
        attempts = 0
        last_raw = ""
        research = 0
        asked_answer = False
        budget_hit = True
        while research < cfg.max_iterations:
            turn = self.call()
            action = parse_turn(turn)
            if action.kind is ActionKind.ANSWER:
                # direct answer, or an answer right after retrieval
                attempts += 1
                last_raw = turn.text
                candidates = self.answer_step(turn.text)
                asked_answer = True
                budget_hit = False
                break
            research += 1
            if action.kind is ActionKind.TOOL_CALL:
                self.tool_step(action, turn)
                continue
            self.record(action)
            self.messages.append(ChatMessage(Role.ASSISTANT, turn.text))
            if action.sufficient:
                budget_hit = False
                break

        if candidates is None:
            if not asked_answer:
                examples = relation_answer_examples(self.deps.kg, self.case, self.deps.catalog, cfg.answer_example_count)
                self.messages.append(build_answer_prompt(self.case, examples))
            while attempts < cfg.max_gen_attempts:
                attempts += 1
                turn = self.call()
                last_raw = turn.text
                candidates = self.answer_step(turn.text, turn.tool_call)
                if candidates is not None:
                    break

        traj = self.traj
        traj.evidence = [{"source_id": c.doc.source_id, "title": c.doc.title, "tool": c.doc.tool.value, "score": c.score} for c in self.evidence]
        if candidates is not None:
            traj.terminated_by = Termination.ANSWERED
            traj.final_candidates = candidates
            if budget_hit:
                traj.notes.append("iteration budget exhausted before sufficiency")
        else:
            traj.terminated_by = Termination.ITERATION_BUDGET if budget_hit else Termination.FORMAT_BUDGET
            traj.final_candidates = salvage_candidates(last_raw)
            traj.salvaged = True
        return traj, list(traj.final_candidates)


def run_agent(case: EvalCase, deps: AgentDeps, cfg: AgentConfig | None = None) -> tuple[Trajectory, list[str]]:
    """Run the full agent loop for one case. Failures are encoded in the trajectory, never raised."""
    return _Run(case, deps, cfg or AgentConfig()).run()
