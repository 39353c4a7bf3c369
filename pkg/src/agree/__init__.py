"""Agentic knowledge-graph completion: retrieval agent, entity linking, metrics and benchmark building."""

from .agent import AgentConfig, AgentDeps, Trajectory, check_answer_format, run_agent
from .kg import Direction, EntityRecord, EvalCase, KnowledgeGraph, Query, Triple, compute_relation_cardinality, load_triples
from .linking import build_alias_index, link_one, link_ranked
from .metrics import RankedPrediction, evaluate, hits_at_n, mrr, relation_aware_hits
from .retrieval import Document, RetrieverConfig, ToolKind, process

__version__ = "0.1.0"
