"""Run the agent on one unseen entity with a scripted model and an in-memory corpus.

The script searches with the basic tool, finds nothing useful, escalates to
the advanced tool, judges the evidence sufficient and answers. The answer
strings are then linked to catalog ids.
"""

from agree.agent import AgentConfig, AgentDeps, run_agent
from agree.clients import CorpusRetriever
from agree.harness import render_trajectory
from agree.kg import Direction, EntityRecord, EvalCase, KnowledgeGraph, Query, Triple
from agree.linking import build_alias_index, link_ranked
from agree.llm import LLMTurn, ScriptedLLM, ToolInvocation
from agree.retrieval import Document, ToolKind

catalog = {
    "Q1": EntityRecord("Q1", "Us", ("Us (TV series)",), "a 2025 Thai TV series"),
    "Q10": EntityRecord("Q10", "F4 Thailand", (), "Thai TV series"),
    "Q11": EntityRecord("Q11", "Bright Vachirawit", ("Bright",), "Thai actor"),
    "Q101": EntityRecord("Q101", "Emi Thasorn Klinnium", ("Thasorn Klinnium",), "Thai actress"),
    "Q102": EntityRecord("Q102", "Bonnie Pattraphus Borattasuwan", ("Pattraphus Borattasuwan",), "Thai actress"),
    "P161": EntityRecord("P161", "cast member"),
}
train = KnowledgeGraph([Triple("Q10", "P161", "Q11")])

basic = CorpusRetriever([Document("w1", "Us", "Us may refer to a pronoun. It is also a band name.", ToolKind.BASIC)])
advanced = CorpusRetriever([
    Document(
        "web1",
        "Us (2025 Thai series) cast",
        "Us is a 2025 Thai television series. The main cast member list includes Emi Thasorn Klinnium "
        "and Bonnie Pattraphus Borattasuwan. Filming took place in Bangkok.",
        ToolKind.ADVANCED,
    )
], ToolKind.ADVANCED)

llm = ScriptedLLM([
    LLMTurn("", ToolInvocation("search_tool_basic", "Us TV series cast")),
    LLMTurn("The basic results are about a pronoun.\nDECISION: CONTINUE"),
    LLMTurn("", ToolInvocation("search_tool_advanced", "Us 2025 Thai television series cast member")),
    LLMTurn("Both leads are named.\nDECISION: SUFFICIENT"),
    LLMTurn("<answer>Emi Thasorn Klinnium, Bonnie Pattraphus Borattasuwan</answer>"),
])

case = EvalCase("us-cast", Query(Direction.TAIL, "Q1", "P161"), "Q101")
deps = AgentDeps(llm=llm, basic=basic, advanced=advanced, kg=train, catalog=catalog)
traj, candidates = run_agent(case, deps, AgentConfig())

print(render_trajectory(traj))
print("\nlinked:", link_ranked(candidates, build_alias_index(catalog)))
