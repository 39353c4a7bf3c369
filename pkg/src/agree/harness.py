"""Evaluation runs: configuration, concurrent agent execution, linking, scoring and run-directory output."""

from __future__ import annotations

import configparser
import csv
import datetime as dt
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import httpx

from .agent import AgentConfig, AgentDeps, Trajectory, run_agent
from .builder import BuilderConfig, WikidataClient, build_benchmark
from .cache import ReplayCache
from .clients import CorpusRetriever, RecordedRetriever, RemoteScorer, WebSearchClient, WikipediaClient
from .kg import (
    Direction,
    EvalCase,
    Query,
    compute_relation_cardinality,
    load_cases,
    load_entity_catalog,
    load_triples,
)
from .linking import DEFAULT_JACCARD_THRESHOLD, build_alias_index, link_candidates, ranked_ids, write_audit
from .llm import ChatCompletionsClient, RetrievalFollowingLLM, ScriptedLLM, DEFAULT_FACT_PATTERN
from .metrics import InclusionRule, MetricReport, RankedPrediction, RetrieverUsage, evaluate, rank_of_gold, retriever_usage
from .retrieval import DEFAULT_STOPWORDS, LexicalScorer, RetrieverConfig, ToolKind

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ServiceConfig:
    """How to reach one external service (LLM, a retriever or the scorer)."""

    mode: str
    base_url: str = ""
    path: str = ""
    model: str = ""
    api_key_env: str = ""
    options: dict[str, str] = field(default_factory=dict)


@dataclass
class RunConfig:
    train: Path
    test: Path
    catalog: Path | None = None
    directions: str = "tail"
    agent: AgentConfig = field(default_factory=AgentConfig)
    retriever: RetrieverConfig = field(default_factory=RetrieverConfig)
    llm: ServiceConfig = field(default_factory=lambda: ServiceConfig("follow"))
    basic: ServiceConfig = field(default_factory=lambda: ServiceConfig("wikipedia", base_url="https://en.wikipedia.org/w/api.php"))
    advanced: ServiceConfig = field(default_factory=lambda: ServiceConfig("recorded"))
    scorer: ServiceConfig = field(default_factory=lambda: ServiceConfig("lexical"))
    concurrency: int = 1
    cache_dir: Path = Path(".agree-cache")
    out_dir: Path = Path("runs/latest")
    offline: bool = False
    seed: int = 0
    metrics_n: list[int] = field(default_factory=lambda: [1, 3, 5, 10])
    ra_rule: InclusionRule = InclusionRule.CARDINALITY_FITS
    link_threshold: float = DEFAULT_JACCARD_THRESHOLD
    retries: int = 2

    def __post_init__(self) -> None:
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if not self.metrics_n or any(n < 1 for n in self.metrics_n):
            raise ConfigError("metrics_n must be positive integers")
        self.metrics_n = sorted(set(self.metrics_n))

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None)
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config {path}")
        return cls.from_parser(parser, path.parent)

    @classmethod
    def from_parser(cls, p: configparser.ConfigParser, base: Path = Path(".")) -> "RunConfig":
        def path(section: str, key: str) -> Path | None:
            value = p.get(section, key, fallback="").strip()
            if not value:
                return None
            return Path(value) if Path(value).is_absolute() else base / value

        def service(section: str, default_mode: str) -> ServiceConfig:
            if not p.has_section(section):
                return ServiceConfig(default_mode)
            s = p[section]
            known = {"mode", "base_url", "path", "model", "api_key_env"}
            resolved = path(section, "path")
            return ServiceConfig(
                s.get("mode", default_mode),
                s.get("base_url", ""),
                str(resolved) if resolved else "",
                s.get("model", ""),
                s.get("api_key_env", ""),
                {k: v for k, v in s.items() if k not in known and k not in p.defaults()},
            )

        if not p.has_section("data"):
            raise ConfigError("config needs a [data] section")
        train, test = path("data", "train"), path("data", "test")
        if train is None or test is None:
            raise ConfigError("[data] needs train and test paths")
        a = p["agent"] if p.has_section("agent") else {}
        agent = AgentConfig(
            max_iterations=int(a.get("max_iterations", 20)),
            max_gen_attempts=int(a.get("max_gen_attempts", 3)),
            neighborhood_limit=int(a.get("neighborhood_limit", 10)),
            relation_example_count=int(a.get("relation_example_count", 5)),
            answer_example_count=int(a.get("answer_example_count", 10)),
            max_context_chars=int(a.get("max_context_chars", 120_000)),
            model_id=a.get("model_id", p.get("llm", "model", fallback="")),
        )
        r = p["retriever"] if p.has_section("retriever") else {}
        stopwords = DEFAULT_STOPWORDS
        sw = path("retriever", "stopwords") if p.has_section("retriever") else None
        if sw is not None:
            stopwords = frozenset(w.strip().lower() for w in sw.read_text(encoding="utf-8").split() if w.strip())
        retriever = RetrieverConfig(
            top_k_chunks=int(r.get("top_k_chunks", 8)),
            max_documents_per_call=int(r.get("max_documents_per_call", 5)),
            timeout=float(r.get("timeout", 30)),
            stopwords=stopwords,
            accumulate_evidence=str(r.get("accumulate_evidence", "true")).lower() in ("1", "true", "yes", "on"),
        )
        run = p["run"] if p.has_section("run") else {}
        return cls(
            train=train,
            test=test,
            catalog=path("data", "catalog"),
            directions=p.get("data", "directions", fallback="tail"),
            agent=agent,
            retriever=retriever,
            llm=service("llm", "follow"),
            basic=service("basic", "wikipedia"),
            advanced=service("advanced", "recorded"),
            scorer=service("scorer", "lexical"),
            concurrency=int(run.get("concurrency", 1)),
            cache_dir=path("run", "cache_dir") or base / ".agree-cache",
            out_dir=path("run", "out_dir") or base / "runs" / "latest",
            offline=str(run.get("offline", "false")).lower() in ("1", "true", "yes", "on"),
            seed=int(run.get("seed", 0)),
            metrics_n=[int(x) for x in str(run.get("metrics_n", "1,3,5,10")).split(",") if x.strip()],
            ra_rule=InclusionRule(run.get("ra_rule", InclusionRule.CARDINALITY_FITS.value)),
            link_threshold=float(run.get("link_threshold", DEFAULT_JACCARD_THRESHOLD)),
            retries=int(run.get("retries", 2)),
        )

    def snapshot(self) -> dict:
        """Config as plain data. Secrets never live here; only env-var names do."""
        d = asdict(self)
        d["retriever"]["stopwords"] = len(self.retriever.stopwords)
        d["ra_rule"] = self.ra_rule.value
        return json.loads(json.dumps(d, default=str))


@dataclass
class RunReport:
    metric_report: MetricReport
    retriever_usage: RetrieverUsage
    mean_iterations: float
    terminated_by: dict[str, int]
    config: dict
    cache: dict[str, int]
    network_calls: int
    failed_cases: int
    generated_at: str = ""

    def to_dict(self) -> dict:
        return {
            "metrics": self.metric_report.to_dict(),
            "retriever_usage": self.retriever_usage.to_dict(),
            "mean_iterations": self.mean_iterations,
            "terminated_by": dict(sorted(self.terminated_by.items())),
            "config": self.config,
            "cache": self.cache,
            "network_calls": self.network_calls,
            "failed_cases": self.failed_cases,
            "generated_at": self.generated_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        u = self.retriever_usage
        lines = [
            self.metric_report.to_table(),
            "",
            f"cases: {self.metric_report.case_count}  failed: {self.failed_cases}",
            f"mean iterations (LLM turns per case): {self.mean_iterations:.2f}",
            f"retriever calls: basic {u.basic_calls}, advanced {u.advanced_calls}; no retrieval in {u.no_retrieval_cases} of {u.cases} cases",
            "terminated by: " + ", ".join(f"{k} {v}" for k, v in sorted(self.terminated_by.items())),
            f"cache: {self.cache.get('hits', 0)} hits, {self.cache.get('misses', 0)} misses; network calls {self.network_calls}",
        ]
        return "\n".join(lines) + "\n"


def _http_kwargs(cfg: RunConfig, cache: ReplayCache, transport: httpx.BaseTransport | None, timeout: float) -> dict:
    return {"cache": cache, "transport": transport, "retries": cfg.retries, "timeout": timeout}


def _retriever(svc: ServiceConfig, tool: ToolKind, cfg: RunConfig, cache: ReplayCache, transport: httpx.BaseTransport | None):
    kw = _http_kwargs(cfg, cache, transport, cfg.retriever.timeout)
    if svc.mode == "wikipedia":
        return WikipediaClient(svc.base_url or "https://en.wikipedia.org/w/api.php", **kw)
    if svc.mode == "websearch":
        if not svc.base_url:
            raise ConfigError(f"[{tool.value}] websearch needs base_url")
        extra = {k[len("param."):]: v for k, v in svc.options.items() if k.startswith("param.")}
        return WebSearchClient(svc.base_url, svc.api_key_env or None, extra_params=extra, **kw)
    if svc.mode == "corpus":
        return CorpusRetriever.from_jsonl(svc.path, tool)
    if svc.mode == "recorded":
        return RecordedRetriever.from_json(svc.path, tool) if svc.path else RecordedRetriever({}, tool)
    raise ConfigError(f"unknown retriever mode {svc.mode!r}")


def build_deps(cfg: RunConfig, kg, catalog, cache: ReplayCache, transport: httpx.BaseTransport | None = None) -> AgentDeps:
    llm_svc = cfg.llm
    if llm_svc.mode == "http":
        if not llm_svc.base_url or not llm_svc.model:
            raise ConfigError("[llm] http mode needs base_url and model")
        llm = ChatCompletionsClient(
            llm_svc.base_url,
            llm_svc.model,
            llm_svc.api_key_env or None,
            temperature=float(llm_svc.options.get("temperature", 0.0)),
            seed=cfg.seed,
            **_http_kwargs(cfg, cache, transport, float(llm_svc.options.get("timeout", 120))),
        )
    elif llm_svc.mode == "script":
        llm = ScriptedLLM.from_file(llm_svc.path)
    elif llm_svc.mode == "follow":
        llm = RetrievalFollowingLLM(llm_svc.options.get("fact_pattern", DEFAULT_FACT_PATTERN))
    else:
        raise ConfigError(f"unknown llm mode {llm_svc.mode!r}")
    if cfg.scorer.mode == "lexical":
        scorer = LexicalScorer(cfg.retriever.stopwords)
    elif cfg.scorer.mode == "remote":
        scorer = RemoteScorer(cfg.scorer.base_url or cfg.scorer.options.get("url", ""), **_http_kwargs(cfg, cache, transport, cfg.retriever.timeout))
    else:
        raise ConfigError(f"unknown scorer mode {cfg.scorer.mode!r}")
    return AgentDeps(
        llm=llm,
        basic=_retriever(cfg.basic, ToolKind.BASIC, cfg, cache, transport),
        advanced=_retriever(cfg.advanced, ToolKind.ADVANCED, cfg, cache, transport),
        kg=kg,
        catalog=catalog,
        scorer=scorer,
        retriever=cfg.retriever,
    )


def _network_calls(deps: AgentDeps) -> int:
    total = 0
    for obj in (deps.llm, deps.basic, deps.advanced, deps.scorer):
        http = getattr(obj, "http", None)
        total += getattr(http, "network_calls", 0)
    return total


def _run_case(case: EvalCase, deps: AgentDeps, cfg: RunConfig) -> Trajectory:
    try:
        traj, _ = run_agent(case, deps, cfg.agent)
        return traj
    except Exception as exc:  # keep long runs alive; the case scores as empty
        logger.exception("case %s failed", case.case_id)
        return Trajectory(case=case, error=f"{type(exc).__name__}: {exc}")


def run_eval(cfg: RunConfig, transport: httpx.BaseTransport | None = None, out_dir: str | Path | None = None) -> RunReport:
    """Run every test case through the agent, link, score and write the run directory.

    Layout: ``report.json``, ``report.txt``, ``trajectories.jsonl``,
    ``linking_audit.tsv``, ``per_case.csv`` and ``config_snapshot``.
    """
    for p in (cfg.train, cfg.test, cfg.catalog):
        if p is not None and not Path(p).is_file():
            raise ConfigError(f"input file not found: {p}")
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    kg = load_triples(cfg.train)
    cases = load_cases(cfg.test, cfg.directions)
    if not cases:
        raise ConfigError(f"no test cases in {cfg.test}")
    catalog = load_entity_catalog(cfg.catalog) if cfg.catalog else {}
    table = compute_relation_cardinality(kg)
    index = build_alias_index(catalog)
    cache = ReplayCache(cfg.cache_dir, offline=cfg.offline)
    deps = build_deps(cfg, kg, catalog, cache, transport)

    with ThreadPoolExecutor(cfg.concurrency) as pool:
        trajectories = list(pool.map(lambda c: _run_case(c, deps, cfg), cases))

    preds, audit = [], []
    for traj in trajectories:
        links = link_candidates(traj.final_candidates, index, cfg.link_threshold)
        audit.extend(links)
        preds.append(RankedPrediction(traj.case, tuple(ranked_ids(links)), traj.case.case_id))

    metrics = evaluate(preds, table, cfg.metrics_n, cfg.ra_rule)
    usage = retriever_usage(trajectories)
    hist = Counter(t.terminated_by.value if t.terminated_by else "ERROR" for t in trajectories)
    report = RunReport(
        metric_report=metrics,
        retriever_usage=usage,
        mean_iterations=sum(t.llm_calls for t in trajectories) / len(trajectories),
        terminated_by=dict(hist),
        config=cfg.snapshot(),
        cache=cache.stats,
        network_calls=_network_calls(deps),
        failed_cases=sum(1 for t in trajectories if t.error),
        generated_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    )

    with open(out / "trajectories.jsonl", "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(json.dumps(t.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    with open(out / "linking_audit.tsv", "w", encoding="utf-8") as fh:
        write_audit(audit, fh)
    with open(out / "per_case.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case_id", "direction", "known_entity", "relation", "gold", "rank", "terminated_by", "llm_calls", "basic_calls", "advanced_calls", "candidates", "linked", "error"])
        for t, p in zip(trajectories, preds):
            q = t.case.query
            w.writerow([
                t.case.case_id, q.direction.value, q.known_entity, q.relation, t.case.gold, rank_of_gold(p) or "",
                t.terminated_by.value if t.terminated_by else "ERROR", t.llm_calls,
                t.tools_used[ToolKind.BASIC], t.tools_used[ToolKind.ADVANCED], len(t.final_candidates), len(p.entities), t.error or "",
            ])
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "config_snapshot").write_text(json.dumps(report.config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


# -- metrics-only mode ------------------------------------------------------

def load_predictions(path: str | Path) -> list[RankedPrediction]:
    """Read ``{"case_id", "head", "relation", "tail", "direction", "entities"}`` JSONL rows."""
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            direction = Direction(row.get("direction", "tail"))
            known, gold = (row["head"], row["tail"]) if direction is Direction.TAIL else (row["tail"], row["head"])
            case = EvalCase(str(row.get("case_id", f"p{lineno:05d}")), Query(direction, known, row["relation"]), gold)
            preds.append(RankedPrediction(case, tuple(dict.fromkeys(row.get("entities", []))), row.get("trajectory_ref")))
    return preds


def score_predictions(
    predictions: str | Path,
    train: str | Path,
    ns: Sequence[int] = (1, 3, 5, 10),
    rule: InclusionRule = InclusionRule.CARDINALITY_FITS,
) -> MetricReport:
    table = compute_relation_cardinality(load_triples(train))
    return evaluate(load_predictions(predictions), table, ns, rule)


# -- trajectory rendering ---------------------------------------------------

def _digest(text: str | None, width: int = 200) -> str:
    if not text:
        return ""
    flat = " ".join(text.split())
    return flat if len(flat) <= width else flat[: width - 3] + "..."


def render_trajectory(traj: Trajectory) -> str:
    q = traj.case.query
    triple = f"({q.known_entity}, {q.relation}, ?)" if q.direction is Direction.TAIL else f"(?, {q.relation}, {q.known_entity})"
    lines = [f"Case {traj.case.case_id}: {triple}  gold: {traj.case.gold}"]
    pad = " " * 8
    for s in traj.steps:
        a = s.action
        if a.kind.value == "tool_call":
            lines.append(f"Step {s.index}: tool_call: {a.tool.tool_name}")
            lines.append(f'{pad}query: "{a.query}"')
            lines.append(f"{pad}Retrieved Results: {_digest(s.observation)}")
        elif a.kind.value == "reflect":
            verdict = "sufficient" if a.sufficient else "continue"
            lines.append(f"Step {s.index}: Self-Reflection ({verdict}): {_digest(a.text, 300)}")
        else:
            lines.append(f"Step {s.index}: Answer-Generation: {_digest(a.text, 300)}")
            if s.observation:
                lines.append(f"{pad}check: {s.observation}")
    if traj.error:
        lines.append(f"error: {traj.error}")
    lines.append(f"terminated_by: {traj.terminated_by.value if traj.terminated_by else 'ERROR'}" + (" (salvaged)" if traj.salvaged else ""))
    lines.append("candidates: " + ", ".join(traj.final_candidates))
    return "\n".join(lines) + "\n"


def load_trajectories(run_dir: str | Path) -> list[Trajectory]:
    with open(Path(run_dir) / "trajectories.jsonl", encoding="utf-8") as fh:
        return [Trajectory.from_dict(json.loads(line)) for line in fh if line.strip()]


def show_trajectory(run_dir: str | Path, case_id: str) -> str:
    trajectories = load_trajectories(run_dir)
    for t in trajectories:
        if t.case.case_id == case_id:
            return render_trajectory(t)
    ids = ", ".join(t.case.case_id for t in trajectories)
    raise LookupError(f"unknown case id {case_id!r}; available: {ids}")


# -- benchmark construction -------------------------------------------------

def builder_config_from_file(path: str | Path) -> tuple[BuilderConfig, Path]:
    """Read the ``[builder]`` section; returns the config and the cache directory."""
    path = Path(path)
    p = configparser.ConfigParser(interpolation=None)
    if not p.read(path, encoding="utf-8") or not p.has_section("builder"):
        raise ConfigError(f"{path} has no [builder] section")
    b = p["builder"]
    defaults = BuilderConfig()
    try:
        cfg = BuilderConfig(
            window_start=dt.date.fromisoformat(b.get("window_start", defaults.window_start.isoformat())),
            window_end=dt.date.fromisoformat(b.get("window_end", defaults.window_end.isoformat())),
            categories=[c.strip() for c in b.get("categories", ",".join(defaults.categories)).split(",") if c.strip()],
            max_tail_cardinality=int(b.get("max_tail_cardinality", 10)),
            endpoint=b.get("endpoint", defaults.endpoint),
            entity_endpoint=b.get("entity_endpoint", defaults.entity_endpoint),
            api_endpoint=b.get("api_endpoint", defaults.api_endpoint),
            page_size=int(b.get("page_size", defaults.page_size)),
            parallelism=int(b.get("parallelism", 1)),
            expand_subclasses=b.getboolean("expand_subclasses", False),
            fetch_labels=b.getboolean("fetch_labels", True),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cache_dir = b.get("cache_dir", ".agree-cache")
    cache_path = Path(cache_dir) if Path(cache_dir).is_absolute() else path.parent / cache_dir
    return cfg, cache_path


def build_emerging(
    cfg: BuilderConfig,
    out_dir: str | Path,
    cache_dir: str | Path,
    transport: httpx.BaseTransport | None = None,
    retries: int = 2,
    backoff: float = 1.0,
) -> dict:
    """Build the benchmark; a failed run can simply be repeated and resumes from the cache."""
    out = Path(out_dir)
    progress = out / "build_progress.json"
    if progress.exists():
        state = json.loads(progress.read_text(encoding="utf-8"))
        if state.get("status") == "failed":
            logger.info("resuming build: %d of %d entities already fetched", len(state.get("completed", [])), len(state.get("selected", [])))
    client = WikidataClient.from_config(cfg, cache=ReplayCache(cache_dir), transport=transport, retries=retries, backoff=backoff)
    return build_benchmark(cfg, client, out)
