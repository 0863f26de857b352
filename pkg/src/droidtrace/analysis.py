"""Behavior query battery: retrieval, relevance review and multi-turn analysis."""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Union

from .llm import LLMGateway, Role
from .vectorstore import Embedder, IndexedRecord, MockEmbedder, RetrievalResult, VectorStore

logger = logging.getLogger(__name__)

SUMMARY_CHARS = 600


class BehaviorCategory(str, Enum):
    INFORMATION_THEFT = "InformationTheftAndAbuse"
    MONETARY_FRAUD = "MonetaryFraudAndFinancialAbuse"
    PRIVILEGE_ABUSE = "PrivilegeAbuseAndSystemExploitation"

    @property
    def label(self) -> str:
        return {
            "InformationTheftAndAbuse": "Information Theft and Abuse",
            "MonetaryFraudAndFinancialAbuse": "Monetary Fraud and Financial Abuse",
            "PrivilegeAbuseAndSystemExploitation": "Privilege Abuse and System Exploitation",
        }[self.value]


@dataclass(frozen=True)
class QuerySpec:
    query_id: str
    category: BehaviorCategory
    text: str

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "category": self.category.value, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> "QuerySpec":
        return cls(d["query_id"], BehaviorCategory(d["category"]), d["text"])


_IT, _MF, _PA = BehaviorCategory.INFORMATION_THEFT, BehaviorCategory.MONETARY_FRAUD, BehaviorCategory.PRIVILEGE_ABUSE

DEFAULT_QUERIES: tuple[QuerySpec, ...] = (
    QuerySpec("Q1", _IT, "Does the application access or collect sensitive user data (e.g., SMS, contacts, "
                         "location, or device identifiers)?"),
    QuerySpec("Q2", _IT, "Does the application capture user activity through screen recording or screenshots?"),
    QuerySpec("Q3", _IT, "Does the application connect to suspicious external URLs or perform background "
                         "downloads without user interaction?"),
    QuerySpec("Q4", _IT, "Is obfuscation or encryption used to conceal communication endpoints or downloaded "
                         "content?"),
    QuerySpec("Q5", _MF, "Does the application send messages or make calls that may incur charges without "
                         "user consent?"),
    QuerySpec("Q6", _MF, "Does the UI mislead users into clicking ads or subscribing to services?"),
    QuerySpec("Q7", _MF, "Is there evidence of tampering with in-app purchases or payment processes?"),
    QuerySpec("Q8", _PA, "Does the application request elevated privileges (e.g., Accessibility or Device "
                         "Administrator) or attempt to maintain persistence?"),
    QuerySpec("Q9", _PA, "Does the application support remote command execution or include dynamic code "
                         "loading and anti-analysis techniques?"),
    QuerySpec("Q10", _PA, "Is there evidence of root-level activity, such as executing system commands or "
                          "interacting with system partitions?"),
    QuerySpec("Q11", _PA, "Does the application use native libraries or known exploits to escalate privileges "
                          "or bypass system security policies?"),
)


def load_queries(path: str | Path) -> list[QuerySpec]:
    """Read one QuerySpec JSON object per line."""
    specs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            specs.append(QuerySpec.from_dict(json.loads(line)))
    ids = [s.query_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate query ids in {path}")
    return specs


# --- analysis data -----------------------------------------------------------


@dataclass(frozen=True)
class FollowUpQuery:
    method_name: str
    class_name: str
    param_count: int | None = None

    def __post_init__(self):
        if not self.method_name or not self.class_name:
            raise ValueError("follow-up needs both a method and a class name")

    def describe(self) -> str:
        text = f"method {self.method_name} defined in class {self.class_name}"
        if self.param_count is not None:
            text += f" taking {self.param_count} parameter(s)"
        return text

    def to_dict(self) -> dict:
        return {"method_name": self.method_name, "class_name": self.class_name, "param_count": self.param_count}


@dataclass
class Conclusion:
    finding: str
    verdict: str  # malicious | benign | inconclusive
    code_paths: list[str] = field(default_factory=list)
    malformed: bool = False

    @property
    def is_malicious(self) -> bool:
        return self.verdict == "malicious"

    @property
    def inconclusive(self) -> bool:
        return self.verdict == "inconclusive"

    def to_dict(self) -> dict:
        return {"type": "conclusion", "finding": self.finding, "verdict": self.verdict,
                "code_paths": list(self.code_paths), "malformed": self.malformed}


@dataclass
class FollowUp:
    query: FollowUpQuery

    def to_dict(self) -> dict:
        return {"type": "followup", **self.query.to_dict()}


@dataclass
class Abort:
    reason: str  # budget | cycle | unavailable

    def to_dict(self) -> dict:
        return {"type": "abort", "reason": self.reason}


Outcome = Union[Conclusion, FollowUp, Abort]


def outcome_from_dict(d: dict) -> Outcome:
    kind = d["type"]
    if kind == "conclusion":
        return Conclusion(d["finding"], d["verdict"], list(d["code_paths"]), d.get("malformed", False))
    if kind == "followup":
        return FollowUp(FollowUpQuery(d["method_name"], d["class_name"], d.get("param_count")))
    return Abort(d["reason"])


@dataclass
class AnalysisTurn:
    turn_index: int
    input_snippet_id: str
    analyzer_output: str
    outcome: Outcome
    summary: str = ""
    requested: FollowUpQuery | None = None
    resolved_snippet_id: str | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "turn_index": self.turn_index,
            "input_snippet_id": self.input_snippet_id,
            "analyzer_output": self.analyzer_output,
            "outcome": self.outcome.to_dict(),
            "summary": self.summary,
            "requested": self.requested.to_dict() if self.requested else None,
            "resolved_snippet_id": self.resolved_snippet_id,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisTurn":
        req = d.get("requested")
        return cls(
            d["turn_index"], d["input_snippet_id"], d["analyzer_output"], outcome_from_dict(d["outcome"]),
            d.get("summary", ""),
            FollowUpQuery(req["method_name"], req["class_name"], req.get("param_count")) if req else None,
            d.get("resolved_snippet_id"), d.get("note", ""),
        )


@dataclass
class AnalysisSession:
    query_id: str
    seed_snippet_id: str
    turns: list[AnalysisTurn] = field(default_factory=list)
    visited_snippet_ids: list[str] = field(default_factory=list)

    @property
    def terminated(self) -> bool:
        return bool(self.turns) and isinstance(self.turns[-1].outcome, (Conclusion, Abort))

    @property
    def abort_reason(self) -> str | None:
        if self.turns and isinstance(self.turns[-1].outcome, Abort):
            return self.turns[-1].outcome.reason
        return None

    @property
    def conclusion(self) -> Conclusion:
        """The terminal conclusion, synthesized (inconclusive) for aborted sessions."""
        if self.turns and isinstance(self.turns[-1].outcome, Conclusion):
            return self.turns[-1].outcome
        reason = self.abort_reason or "incomplete"
        summaries = " ".join(f"[turn {t.turn_index}] {t.summary}" for t in self.turns if t.summary)
        finding = f"Analysis stopped without a conclusion ({reason})."
        if summaries:
            finding += f" Findings so far: {summaries}"
        return Conclusion(finding, "inconclusive", [])

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "seed_snippet_id": self.seed_snippet_id,
            "turns": [t.to_dict() for t in self.turns],
            "visited_snippet_ids": list(self.visited_snippet_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisSession":
        return cls(d["query_id"], d["seed_snippet_id"], [AnalysisTurn.from_dict(t) for t in d["turns"]],
                   list(d["visited_snippet_ids"]))


NO_RELEVANT_CODE = "no_relevant_code"
ANALYZED = "analyzed"


@dataclass
class QueryOutcome:
    query_id: str
    category: BehaviorCategory
    status: str
    hits: list[RetrievalResult] = field(default_factory=list)
    relevant_ids: list[str] = field(default_factory=list)
    sessions: list[AnalysisSession] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def no_relevant_code(self) -> bool:
        return self.status == NO_RELEVANT_CODE

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "category": self.category.value,
            "status": self.status,
            "hits": [{"record_id": h.record_id, "score": h.score, "rank": h.rank} for h in self.hits],
            "relevant_ids": list(self.relevant_ids),
            "sessions": [s.to_dict() for s in self.sessions],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QueryOutcome":
        return cls(
            d["query_id"], BehaviorCategory(d["category"]), d["status"],
            [RetrievalResult(h["record_id"], h["score"], h["rank"]) for h in d["hits"]],
            list(d["relevant_ids"]), [AnalysisSession.from_dict(s) for s in d["sessions"]],
            list(d.get("warnings", [])),
        )


def dump_outcomes(outcomes: list[QueryOutcome], path: str | Path, app_id: str = "", extra: dict | None = None) -> None:
    doc = {"app_id": app_id, "outcomes": [o.to_dict() for o in outcomes]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def load_outcomes(path: str | Path) -> tuple[str, list[QueryOutcome]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return doc.get("app_id", ""), [QueryOutcome.from_dict(o) for o in doc["outcomes"]]


# --- terminal parsing ----------------------------------------------------------

_FENCED_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)
_TERMINAL_LINE_RE = re.compile(r"^\s*(VERDICT|FOLLOWUP)\s*:", re.IGNORECASE | re.MULTILINE)
_KV_RE = re.compile(r"(\w+)\s*=\s*([^\s,;]+)")
_VERDICTS = ("malicious", "benign", "inconclusive")


def _terminal_block(text: str) -> str | None:
    for block in reversed(_FENCED_RE.findall(text)):
        if _TERMINAL_LINE_RE.search(block):
            return block
    matches = list(_TERMINAL_LINE_RE.finditer(text))
    if not matches:
        return None
    # unfenced: from the first terminal line of the trailing run to the end
    start = matches[-1].start()
    for m in reversed(matches[:-1]):
        between = text[m.end():start]
        if "\n\n" in between.strip("\n") or len(between) > 2000:
            break
        start = m.start()
    return text[start:]


def _parse_followup_line(line: str) -> FollowUpQuery | None:
    body = line.split(":", 1)[1] if ":" in line else ""
    pairs = {k.lower(): v.strip(".'\"`") for k, v in _KV_RE.findall(body)}
    method = pairs.get("method", "").split("(", 1)[0]
    cls = pairs.get("class", "")
    params = pairs.get("params", pairs.get("param_count"))
    count = None
    if params is not None:
        try:
            count = int(params)
        except ValueError:
            count = None
    if not method or not cls:
        return None
    return FollowUpQuery(method, cls, count)


def _parse_paths(lines: list[str]) -> list[str]:
    paths: list[str] = []
    collecting = False
    for line in lines:
        stripped = line.strip()
        upper = stripped.upper()
        if upper.startswith("PATHS:"):
            collecting = True
            inline = stripped[len("PATHS:"):].strip()
            paths.extend(p.strip() for p in inline.split(";") if p.strip())
            continue
        if not collecting or not stripped:
            continue
        if _TERMINAL_LINE_RE.match(stripped):
            break
        paths.append(stripped.lstrip("-*• ").strip().strip("`"))
    return [p for p in paths if p and p.lower() not in ("none", "n/a", "-")]


def parse_terminal_block(text: str) -> Conclusion | FollowUp | None:
    """Structural parse of an Analyzer reply; ``None`` when it has no terminal block."""
    block = _terminal_block(text)
    if block is None:
        return None
    lines = block.splitlines()
    followups = [ln for ln in lines if re.match(r"^\s*FOLLOWUP\s*:", ln, re.IGNORECASE)]
    if followups:
        query = _parse_followup_line(followups[-1].strip())
        if query is None:
            return Conclusion(text, "inconclusive", [], malformed=True)
        return FollowUp(query)
    verdict_lines = [ln for ln in lines if re.match(r"^\s*VERDICT\s*:", ln, re.IGNORECASE)]
    value = verdict_lines[-1].split(":", 1)[1].strip().strip("*`. ").lower()
    value = value.split()[0] if value else ""
    if value not in _VERDICTS:
        return Conclusion(text, "inconclusive", [], malformed=True)
    return Conclusion(_strip_block(text, block), value, _parse_paths(lines))


def _strip_block(text: str, block: str) -> str:
    idx = text.rfind(block)
    if idx < 0:
        return text.strip()
    head = text[:idx]
    # drop an opening fence that belonged to the block
    head = re.sub(r"```[^\n`]*\n?$", "", head.rstrip(" \t"))
    return head.strip() or text.strip()


def summarize_turn(text: str, limit: int = SUMMARY_CHARS) -> str:
    block = _terminal_block(text)
    body = _strip_block(text, block) if block else text
    body = re.sub(r"\s+", " ", body).strip()
    return body if len(body) <= limit else body[: limit - 3].rstrip() + "..."


def parse_relevance(text: str) -> str | None:
    matches = re.findall(r"VERDICT\s*:\s*\**\s*(KEEP|DROP)\b", text, re.IGNORECASE)
    if matches:
        return matches[-1].upper()
    lines = [ln.strip().strip("*`.").upper() for ln in text.splitlines() if ln.strip()]
    if lines and lines[-1] in ("KEEP", "DROP"):
        return lines[-1]
    return None


def parse_selection(text: str, n: int) -> int | None:
    matches = re.findall(r"SELECT\s*:\s*#?\s*(\d+)", text, re.IGNORECASE)
    if not matches:
        return None
    idx = int(matches[-1])
    return idx if 1 <= idx <= n else None


def _class_matches(stored: str, requested: str) -> bool:
    return stored == requested or stored.endswith("." + requested) or stored.endswith("$" + requested)


# --- engine ------------------------------------------------------------------


@dataclass
class AnalysisConfig:
    max_turns: int = 5
    top_k: int = 5
    single_turn: bool = False

    @property
    def turn_budget(self) -> int:
        return 1 if self.single_turn else self.max_turns


@dataclass
class EngineStats:
    followup_resolutions: int = 0
    collisions: int = 0
    not_found: int = 0
    sessions: int = 0
    aborted_sessions: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class AnalysisEngine:
    def __init__(self, store: VectorStore, gateway: LLMGateway, embedder: Embedder | None = None,
                 config: AnalysisConfig | None = None):
        self.store = store
        self.gateway = gateway
        self.embedder = embedder or MockEmbedder(store.dim)
        self.config = config or AnalysisConfig()
        if self.config.max_turns < 1 or self.config.top_k < 1:
            raise ValueError("max_turns and top_k must be at least 1")
        self.stats = EngineStats()
        self._lock = threading.Lock()

    def _bump(self, name: str) -> None:
        with self._lock:
            setattr(self.stats, name, getattr(self.stats, name) + 1)

    def run_battery(self, queries: list[QuerySpec] | tuple[QuerySpec, ...] = DEFAULT_QUERIES) -> list[QueryOutcome]:
        """Run every query to completion, one after the other."""
        return [self.run_query(q) for q in queries]

    def run_query(self, query: QuerySpec) -> QueryOutcome:
        outcome = QueryOutcome(query.query_id, query.category, NO_RELEVANT_CODE)
        outcome.hits = self.retrieve_stage(query)
        relevant = self.relevance_filter(query, outcome.hits, outcome.warnings)
        if not relevant:
            return outcome
        outcome.status = ANALYZED
        outcome.relevant_ids = [h.record_id for h in relevant]
        workers = max(1, min(self.gateway.concurrency, len(relevant)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcome.sessions = list(pool.map(lambda h: self.analyze_snippet(query, h.record_id), relevant))
        return outcome

    def retrieve_stage(self, query: QuerySpec) -> list[RetrievalResult]:
        return self.store.search(self.embedder.embed(query.text), self.config.top_k)

    def relevance_filter(self, query: QuerySpec, hits: list[RetrievalResult],
                         warnings: list[str] | None = None) -> list[RetrievalResult]:
        """Keep the hits the RelevanceReviewer marks KEEP.

        An empty result means no related code was found for the query.
        """
        kept = []
        for hit in hits:
            record = self.store.get(hit.record_id)
            reply = self.gateway.ask(Role.RELEVANCE_REVIEWER, {
                "query": query.text,
                "code": record.code_text,
                "code_path": record.code_path,
                "description": record.description,
            }).text
            verdict = parse_relevance(reply)
            if verdict is None:
                msg = f"{query.query_id}: unparseable relevance verdict for {hit.record_id}; treated as DROP"
                logger.warning(msg)
                if warnings is not None:
                    warnings.append(msg)
                continue
            if verdict == "KEEP":
                kept.append(hit)
        return kept

    def parse_terminal(self, analyzer_output: str) -> Conclusion | FollowUp:
        parsed = parse_terminal_block(analyzer_output)
        if parsed is not None:
            return parsed
        reply = self.gateway.ask(Role.QUERY_REVIEWER, {"analysis": analyzer_output}).text
        for line in reversed(reply.splitlines()):
            if re.match(r"^\s*FOLLOWUP\s*:", line, re.IGNORECASE):
                query = _parse_followup_line(line.strip())
                if query is not None:
                    return FollowUp(query)
                break
        malformed = "CONCLUSION" not in reply.upper()
        return Conclusion(analyzer_output.strip(), "inconclusive", [], malformed=malformed)

    def resolve_followup(self, request: FollowUpQuery, calling: IndexedRecord | None = None) -> str | None:
        """Map a follow-up request to one record id, or ``None`` if the app has no such method."""
        self._bump("followup_resolutions")
        store = self.store
        candidates = store.filter_candidates(request.method_name, request.class_name, request.param_count)
        if not candidates:
            for cls in sorted(store.class_names()):
                if cls != request.class_name and _class_matches(cls, request.class_name):
                    candidates |= store.filter_candidates(request.method_name, cls, request.param_count)
        if not candidates:
            candidates = store.filter_candidates(method_name=request.method_name)
        if not candidates:
            self._bump("not_found")
            return None
        ordered = sorted(candidates)
        if len(ordered) == 1:
            return ordered[0]
        self._bump("collisions")
        listing = []
        for i, rid in enumerate(ordered, 1):
            rec = store.get(rid)
            listing.append(f"[{i}] {rec.code_path}\nDescription: {rec.description}\n```java\n{rec.code_text}\n```")
        reply = self.gateway.ask(Role.COLLISION_REVIEWER, {
            "request": request.describe(),
            "calling_code": calling.code_text if calling else "",
            "candidates": "\n\n".join(listing),
        }).text
        choice = parse_selection(reply, len(ordered))
        if choice is None:
            logger.warning("collision reviewer gave no usable selection for %s; taking %s",
                           request.describe(), ordered[0])
            return ordered[0]
        return ordered[choice - 1]

    def analyze_snippet(self, query: QuerySpec, seed: str) -> AnalysisSession:
        if seed not in self.store:
            raise KeyError(f"unknown snippet {seed}")
        self._bump("sessions")
        session = AnalysisSession(query.query_id, seed, [], [seed])
        budget = self.config.turn_budget
        current = seed
        unavailable: FollowUpQuery | None = None
        for turn_index in range(1, budget + 1):
            final = turn_index == budget or unavailable is not None
            record = self.store.get(current)
            policy = self.gateway.fragment("analyzer_final" if final else "analyzer_followup")
            if unavailable is not None:
                policy = self.gateway.fragment("analyzer_unavailable", target=unavailable.describe()) + "\n\n" + policy
            output = self.gateway.ask(Role.ANALYZER, {
                "query": query.text,
                "code": record.code_text,
                "code_path": record.code_path,
                "description": record.description,
                "history": self._history(session),
                "policy": policy,
            }).text
            outcome = self.parse_terminal(output)
            turn = AnalysisTurn(turn_index, current, output, outcome, summarize_turn(output))
            session.turns.append(turn)
            if isinstance(outcome, Conclusion):
                return session
            turn.requested = outcome.query
            if final:
                turn.outcome = Abort("unavailable" if unavailable is not None else "budget")
                break
            target = self.resolve_followup(outcome.query, record)
            if target is None:
                turn.note = f"implementation unavailable: {outcome.query.describe()}"
                unavailable = outcome.query
                continue
            turn.resolved_snippet_id = target
            if target in session.visited_snippet_ids:
                turn.outcome = Abort("cycle")
                break
            session.visited_snippet_ids.append(target)
            current = target
        self._bump("aborted_sessions")
        return session

    def _history(self, session: AnalysisSession) -> str:
        if not session.turns:
            return "(none, this is the first turn)"
        lines = []
        for t in session.turns:
            rec = self.store.get(t.input_snippet_id)
            line = f"Turn {t.turn_index} on {rec.code_path}: {t.summary}"
            if t.note:
                line += f" ({t.note})"
            lines.append(line)
        return "\n".join(lines)
