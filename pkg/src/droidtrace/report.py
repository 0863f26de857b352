"""Turns analysis sessions into code, query and final reports."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from .analysis import DEFAULT_QUERIES, AnalysisSession, BehaviorCategory, QueryOutcome, QuerySpec
from .errors import ProviderError, WrongQueryCount
from .llm import LLMGateway, Role
from .vectorstore import VectorStore

logger = logging.getLogger(__name__)

QUERY_COUNT = 11
NO_ACTIVITY_TEXT = "No related malicious activity was detected for this query."
H1_SECTIONS = ("App Info", "Overall Summary", "Detailed Analyses", "Conclusion")

_PATH_RE = re.compile(r"^\s*(?P<owner>[\w.$<>]+)\.(?P<method>[\w$<>]+)\s*(?:\((?P<params>[^)]*)\))?\s*$")


def _split_params(params: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    for ch in params:
        depth += (ch == "<") - (ch == ">")
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [p for p in parts if p.strip()]


def _simple_type(t: str) -> str:
    t = re.sub(r"<.*>", "", t).strip()
    return t.rsplit(".", 1)[-1].replace(" ", "")


def resolve_code_path(store: VectorStore, path: str) -> str | None:
    """Find the record a ``package.Class.method(Types)`` path refers to.

    Parameter types are compared by simple name and the class may be given
    partially qualified. Returns ``None`` when nothing in the store matches.
    """
    m = _PATH_RE.match(path.strip().strip("`"))
    if not m:
        return None
    owner, method = m.group("owner"), m.group("method")
    params = m.group("params")
    types = None
    if params is not None:
        types = [_simple_type(p) for p in _split_params(params)]
    matches = []
    for rid in sorted(store.filter_candidates(method_name=method)):
        rec = store.get(rid)
        cls = rec.class_name
        if not (cls == owner or cls.endswith("." + owner) or cls.endswith("$" + owner)
                or cls.replace("$", ".") == owner):
            continue
        if types is not None and rec.param_types and [_simple_type(t) for t in rec.param_types] != types:
            continue
        if types is not None and not rec.param_types and rec.param_count != len(types):
            continue
        matches.append(rid)
    return matches[0] if matches else None


@dataclass
class CodeReport:
    query_id: str
    seed_snippet_id: str
    seed_code_path: str
    narrative: str
    verdict: str
    code_paths: list[str] = field(default_factory=list)
    unresolved_paths: list[str] = field(default_factory=list)
    referenced_snippet_ids: list[str] = field(default_factory=list)
    abort_reason: str | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def is_malicious(self) -> bool:
        return self.verdict == "malicious" and bool(self.code_paths)

    @property
    def inconclusive(self) -> bool:
        return self.verdict == "inconclusive"

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "seed_snippet_id": self.seed_snippet_id,
            "seed_code_path": self.seed_code_path,
            "narrative": self.narrative,
            "verdict": self.verdict,
            "is_malicious": self.is_malicious,
            "code_paths": list(self.code_paths),
            "unresolved_paths": list(self.unresolved_paths),
            "referenced_snippet_ids": list(self.referenced_snippet_ids),
            "abort_reason": self.abort_reason,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodeReport":
        return cls(d["query_id"], d["seed_snippet_id"], d["seed_code_path"], d["narrative"], d["verdict"],
                   list(d["code_paths"]), list(d["unresolved_paths"]), list(d["referenced_snippet_ids"]),
                   d.get("abort_reason"), list(d.get("flags", [])))


@dataclass
class QueryReport:
    query_id: str
    category: BehaviorCategory
    query_text: str
    status: str
    summary: str
    code_reports: list[CodeReport] = field(default_factory=list)

    @property
    def detected(self) -> bool:
        return any(cr.is_malicious for cr in self.code_reports)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "category": self.category.value,
            "query_text": self.query_text,
            "status": self.status,
            "detected": self.detected,
            "summary": self.summary,
            "code_reports": [c.to_dict() for c in self.code_reports],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QueryReport":
        return cls(d["query_id"], BehaviorCategory(d["category"]), d["query_text"], d["status"], d["summary"],
                   [CodeReport.from_dict(c) for c in d["code_reports"]])


@dataclass
class Verdict:
    is_malicious: bool
    detected_categories: list[str]
    per_query: dict[str, bool]

    @property
    def detected_queries(self) -> list[str]:
        return [q for q, hit in self.per_query.items() if hit]

    def to_dict(self) -> dict:
        return {"is_malicious": self.is_malicious, "detected_categories": list(self.detected_categories),
                "per_query": dict(self.per_query)}

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(d["is_malicious"], list(d["detected_categories"]), dict(d["per_query"]))


@dataclass
class FinalReport:
    app_info: dict
    overall_summary: str
    query_reports: list[QueryReport]
    conclusion: str
    verdict: Verdict

    def to_dict(self) -> dict:
        return {
            "app_info": dict(self.app_info),
            "overall_summary": self.overall_summary,
            "detailed_analyses": [q.to_dict() for q in self.query_reports],
            "conclusion": self.conclusion,
            "verdict": self.verdict.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FinalReport":
        return cls(dict(d["app_info"]), d["overall_summary"],
                   [QueryReport.from_dict(q) for q in d["detailed_analyses"]], d["conclusion"],
                   Verdict.from_dict(d["verdict"]))


def _organize(gateway: LLMGateway, fragment: str, material: str) -> str | None:
    try:
        text = gateway.ask(Role.ORGANIZER, {"task": gateway.fragment(fragment), "material": material}).text.strip()
    except ProviderError as exc:
        logger.warning("organizer failed: %s", exc)
        return None
    return text or None


def _session_material(session: AnalysisSession, store: VectorStore, query_text: str) -> str:
    parts = [f"Query: {query_text}"]
    for turn in session.turns:
        rec = store.get(turn.input_snippet_id)
        parts.append(f"Turn {turn.turn_index} analysed {rec.code_path}:\n{turn.analyzer_output.strip()}")
        if turn.note:
            parts.append(f"Note: {turn.note}")
    concl = session.conclusion
    parts.append(f"Final verdict: {concl.verdict}")
    if concl.code_paths:
        parts.append("Reported code paths:\n" + "\n".join(f"- {p}" for p in concl.code_paths))
    return "\n\n".join(parts)


def build_code_report(session: AnalysisSession, gateway: LLMGateway, store: VectorStore,
                      query_text: str = "") -> CodeReport:
    """Narrative comes from the Organizer; every structural field is copied from the session."""
    concl = session.conclusion
    resolved, unresolved, referenced = [], [], list(session.visited_snippet_ids)
    for path in concl.code_paths:
        rid = resolve_code_path(store, path)
        if rid is None:
            unresolved.append(path)
            continue
        resolved.append(path)
        if rid not in referenced:
            referenced.append(rid)
    flags = []
    if unresolved:
        flags.append("unresolved_paths")
    if concl.malformed:
        flags.append("malformed_output")
    narrative = _organize(gateway, "organizer_code_report", _session_material(session, store, query_text))
    if narrative is None:
        flags.append("organizer_fallback")
        narrative = "\n\n".join(t.summary for t in session.turns if t.summary) or concl.finding
    return CodeReport(
        query_id=session.query_id,
        seed_snippet_id=session.seed_snippet_id,
        seed_code_path=store.get(session.seed_snippet_id).code_path,
        narrative=narrative,
        verdict=concl.verdict,
        code_paths=resolved,
        unresolved_paths=unresolved,
        referenced_snippet_ids=referenced,
        abort_reason=session.abort_reason,
        flags=flags,
    )


def build_query_report(outcome: QueryOutcome, gateway: LLMGateway, store: VectorStore,
                       spec: QuerySpec | None = None) -> QueryReport:
    spec = spec or _spec_for(outcome.query_id)
    text = spec.text if spec else outcome.query_id
    if outcome.no_relevant_code:
        return QueryReport(outcome.query_id, outcome.category, text, outcome.status, NO_ACTIVITY_TEXT, [])
    reports = [build_code_report(s, gateway, store, text) for s in outcome.sessions]
    material = [f"Query {outcome.query_id}: {text}"]
    for i, cr in enumerate(reports, 1):
        paths = ", ".join(cr.code_paths) or "none"
        material.append(f"Code report {i} (seed {cr.seed_code_path}, verdict {cr.verdict}, paths: {paths}):\n"
                        f"{cr.narrative}")
    summary = _organize(gateway, "organizer_query_report", "\n\n".join(material))
    if summary is None:
        summary = "\n\n".join(cr.narrative for cr in reports)
    return QueryReport(outcome.query_id, outcome.category, text, outcome.status, summary, reports)


def _spec_for(query_id: str) -> QuerySpec | None:
    return next((q for q in DEFAULT_QUERIES if q.query_id == query_id), None)


def make_verdict(query_reports: list[QueryReport]) -> Verdict:
    per_query = {q.query_id: q.detected for q in query_reports}
    cats = sorted({q.category.value for q in query_reports if q.detected})
    return Verdict(any(per_query.values()), cats, per_query)


def _conclusion_text(verdict: Verdict, query_reports: list[QueryReport]) -> str:
    if not verdict.is_malicious:
        return (f"Verdict: BENIGN. None of the {len(query_reports)} behavior queries confirmed malicious "
                "behavior backed by code in this application.")
    lines = ["Verdict: MALICIOUS. Confirmed behaviors:"]
    for q in query_reports:
        if q.detected:
            paths = sorted({p for cr in q.code_reports if cr.is_malicious for p in cr.code_paths})
            lines.append(f"- {q.query_id} ({q.category.label}): " + ", ".join(paths))
    cats = ", ".join(BehaviorCategory(c).label for c in verdict.detected_categories)
    lines.append(f"Detected categories: {cats}.")
    return "\n".join(lines)


def build_final_report(app_info: dict, query_reports: list[QueryReport], gateway: LLMGateway) -> FinalReport:
    if len(query_reports) != QUERY_COUNT:
        raise WrongQueryCount(f"expected {QUERY_COUNT} query reports, got {len(query_reports)}")
    verdict = make_verdict(query_reports)
    if all(q.status == "no_relevant_code" for q in query_reports):
        overall = ("No code relevant to any of the behavior queries was found in this application, "
                   "so no malicious behavior was identified.")
    else:
        material = "\n\n".join(
            f"{q.query_id} [{q.category.label}] {'DETECTED' if q.detected else 'not detected'}: {q.query_text}\n"
            f"{q.summary}" for q in query_reports)
        overall = _organize(gateway, "organizer_overall_summary", material)
        if overall is None:
            overall = _conclusion_text(verdict, query_reports)
    return FinalReport(dict(app_info), overall, list(query_reports), _conclusion_text(verdict, query_reports),
                       verdict)


def build_report(app_info: dict, outcomes: list[QueryOutcome], gateway: LLMGateway, store: VectorStore,
                 queries: list[QuerySpec] | tuple[QuerySpec, ...] = DEFAULT_QUERIES) -> FinalReport:
    specs = {q.query_id: q for q in queries}
    reports = [build_query_report(o, gateway, store, specs.get(o.query_id)) for o in outcomes]
    return build_final_report(app_info, reports, gateway)


# --- rendering ---------------------------------------------------------------


def _escape(text: str) -> str:
    return "\n".join("\\" + ln if ln.lstrip().startswith("#") else ln for ln in text.strip().splitlines())


def _status_label(q: QueryReport) -> str:
    if q.status == "no_relevant_code":
        return "No relevant code"
    return "Detected" if q.detected else "Not detected"


def render_markdown(report: FinalReport) -> str:
    info = report.app_info
    out = ["# App Info", ""]
    for label, key in (("App ID", "app_id"), ("Package", "package_name"), ("SHA-256", "sha256")):
        out.append(f"- {label}: {info.get(key, '')}")
    out += ["", "# Overall Summary", "", _escape(report.overall_summary), "", "# Detailed Analyses", ""]
    for q in report.query_reports:
        out += [f"## {q.query_id}: {q.query_text}", "",
                f"- Category: {q.category.label}", f"- Result: {_status_label(q)}", "", _escape(q.summary), ""]
        for i, cr in enumerate(q.code_reports, 1):
            out += [f"### {q.query_id}.{i} {cr.seed_code_path}", "", f"- Verdict: {cr.verdict}"]
            if cr.abort_reason:
                out.append(f"- Stopped early: {cr.abort_reason}")
            if cr.code_paths:
                out.append("- Code paths:")
                out += [f"  - `{p}`" for p in cr.code_paths]
            if cr.unresolved_paths:
                out.append("- Unresolved paths:")
                out += [f"  - `{p}`" for p in cr.unresolved_paths]
            out += ["", _escape(cr.narrative), ""]
    out += ["# Conclusion", "", _escape(report.conclusion), ""]
    return "\n".join(out)


def render_structured(report: FinalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def render(report: FinalReport, fmt: str = "markdown") -> str:
    if fmt == "markdown":
        return render_markdown(report)
    if fmt in ("structured", "json"):
        return render_structured(report)
    raise ValueError(f"unknown report format {fmt!r}")
