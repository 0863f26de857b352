"""Acceptance criteria, one test per criterion, each under its stated time bound.

The terminal summary lists a PASS/FAIL line per criterion (see conftest).
"""

import json
import random
import re
import threading
import time
from contextlib import contextmanager
from pathlib import Path

import httpx
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from droidtrace.analysis import Abort, AnalysisConfig, AnalysisEngine, Conclusion, FollowUp
from droidtrace.cli import main, run_pipeline
from droidtrace.config import Config
from droidtrace.evaluation import ConfusionCounts, behavior_accuracy, binary_metrics, round4
from droidtrace.indexing import AppMeta, Indexer
from droidtrace.llm import CallbackProvider, LLMGateway, ReplayCache, Role
from droidtrace.report import build_report
from droidtrace.splitter import SourceFile, extract_methods, parse_source_tree
from droidtrace.vectorstore import EmbeddingVector, IndexedRecord, MetadataFilter, VectorStore, mock_embed

from .conftest import ACCEPTANCE_RESULTS
from .oracles import bucket_counts, mock_vector_reference, random_store, random_text, sparse_top_k
from .scripted import ScriptedAnalyst
from .test_splitter import CORPUS, EXPECTED, grammar_walk

APPS = Path(__file__).parent / "fixtures" / "apps"
SHA = {
    "malicious": "5f1c0a8e3b7d2c9f4e6a1b0d8c7f3e2a9b5d4c1e0f7a6b3c2d9e8f1a0b7c6d5e",
    "benign": "0a1b2c3d4e5f60718293a4b5c6d7e8f90a1b2c3d4e5f60718293a4b5c6d7e8f9",
}


@contextmanager
def criterion(num, title, limit):
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield
        elapsed = time.perf_counter() - start
        assert elapsed < limit, f"criterion {num} took {elapsed:.2f}s, limit {limit}s"
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        ACCEPTANCE_RESULTS[num] = (status, title, elapsed, limit)
        print(f"[{status}] criterion {num}: {title} ({elapsed:.2f}s)")


@pytest.fixture
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(httpx.Client, "send", refuse)
    monkeypatch.setattr(httpx, "post", refuse)


def cli_run(app, out, *flags):
    argv = ["run", "--app-root", str(APPS / app / "src"), "--app-id", app, "--sha256", SHA[app],
            "--cache", str(APPS / app / "cache.jsonl"), "--out-dir", str(out), *flags]
    assert main(argv) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    return manifest


def test_criterion_1_binary_metrics():
    with criterion(1, "binary metrics (70, 10, 0, 20)", 1.0):
        m = binary_metrics(ConfusionCounts(tp=70, fp=10, fn=0, tn=20))
        got = tuple(round4(m[k]) for k in ("accuracy", "precision", "recall", "f1"))
        assert got == (0.9000, 0.8750, 1.0000, 0.9333)


def test_criterion_2_behavior_accuracy():
    with criterion(2, "behavior accuracy 176/210 and 53/70", 1.0):
        assert round4(behavior_accuracy(176, 210)) == 0.8381
        assert round4(behavior_accuracy(53, 70)) == 0.7571


def test_criterion_3_splitter_corpus():
    with criterion(3, "splitter matches declaration oracle on 25-file corpus", 5.0):
        files = sorted(CORPUS.glob("*.java"))
        assert len(files) == 25
        for path in files:
            text = path.read_text(encoding="utf-8")
            units = extract_methods(SourceFile(path.name, text))
            assert len(units) == EXPECTED[path.name], path.name
            assert sorted((u.method_name, u.param_count) for u in units) == grammar_walk(text), path.name
        units = parse_source_tree(CORPUS)
        texts = {p.name: p.read_text(encoding="utf-8") for p in files}
        by_file = {}
        for u in units:
            start, end = u.byte_span
            assert texts[u.source_path][start:end] == u.body_text
            by_file.setdefault(u.source_path, []).append(u)
        for group in by_file.values():
            group.sort(key=lambda u: u.byte_span)
            for a, b in zip(group, group[1:]):
                assert a.byte_span[1] <= b.byte_span[0]
            for u in group:
                for other in group:
                    if other.body_text.count("\n") >= 2:
                        assert other.body_text not in u.context_header


def test_criterion_4_retrieval_oracle():
    with criterion(4, "search(q, 5) equals brute-force cosine on 200 stores x 20 queries", 60.0):
        rng = random.Random(20240604)
        for s in range(200):
            n = rng.randint(1, 1000)
            store = VectorStore(f"app{s}", 256)
            entries, texts = [], []
            for i in range(n):
                text = rng.choice(texts) if texts and rng.random() < 0.15 else random_text(rng)
                texts.append(text)
                rid = f"r{rng.randrange(10**6):06d}-{i}"
                store.upsert(IndexedRecord(rid, "", text, "m", "C", 0, mock_embed(text)))
                entries.append((rid, bucket_counts(text)))
            for _ in range(20):
                qtext = rng.choice(texts) if rng.random() < 0.3 else random_text(rng)
                got = [r.record_id for r in store.search(mock_embed(qtext), 5)]
                assert got == sparse_top_k(entries, bucket_counts(qtext), 5), (s, qtext)


def test_criterion_5_end_to_end_replay(tmp_path, no_network):
    with criterion(5, "malicious fixture replay: verdict, Q3+Q5, resolvable paths, byte-identical", 30.0):
        m1 = cli_run("malicious", tmp_path / "a")
        m2 = cli_run("malicious", tmp_path / "b")
        md1 = (tmp_path / "a" / "report.md").read_bytes()
        assert md1 == (tmp_path / "b" / "report.md").read_bytes()
        assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
        report = json.loads((tmp_path / "a" / "report.json").read_text())
        verdict = report["verdict"]
        assert verdict["is_malicious"] is True
        assert {q for q, hit in verdict["per_query"].items() if hit} == {"Q3", "Q5"}
        assert set(verdict["detected_categories"]) == {"InformationTheftAndAbuse", "MonetaryFraudAndFinancialAbuse"}
        store = VectorStore.load(tmp_path / "a" / "store.jsonl")
        known = {r.code_path for r in store.records()}
        paths = [p for q in report["detailed_analyses"] for cr in q["code_reports"] for p in cr["code_paths"]]
        assert paths and all(p in known for p in paths)
        assert all(not cr["unresolved_paths"] for q in report["detailed_analyses"] for cr in q["code_reports"])
        for m in (m1, m2):
            assert m["llm"]["live_calls"] == 0
            assert m["llm"]["cache_hits"] == m["llm"]["total_calls"]


def test_criterion_6_benign_gating(tmp_path, no_network):
    with criterion(6, "benign fixture: 11 x NoRelevantCode, zero Analyzer calls", 10.0):
        manifest = cli_run("benign", tmp_path / "out")
        outcomes = json.loads((tmp_path / "out" / "outcomes.json").read_text())["outcomes"]
        assert len(outcomes) == 11
        assert all(o["status"] == "no_relevant_code" and not o["sessions"] for o in outcomes)
        calls = manifest["llm"]["calls_by_role"]
        assert calls.get("Analyzer", 0) == 0
        assert calls["RelevanceReviewer"] == 55
        assert manifest["verdict"]["is_malicious"] is False
        assert manifest["verdict"]["detected_categories"] == []


def _always_followup(req):
    if req.role == Role.RELEVANCE_REVIEWER:
        return "VERDICT: KEEP"
    if req.role == Role.ANALYZER:
        return "```\nFOLLOWUP: method=j class=b params=1\n```"
    return ScriptedAnalyst().chat(req).text


def test_criterion_7_ablations(tmp_path, no_network):
    with criterion(7, "ablation flags observable in call counters", 30.0):
        t0 = time.perf_counter()
        m = cli_run("malicious", tmp_path / "nosplit", "--no-split-clean")
        assert m["llm"]["calls_by_role"].get("Cleanser", 0) == 0
        assert m["ingestion"]["record_count"] == m["ingestion"]["file_count"] == 6
        assert time.perf_counter() - t0 < 10

        t0 = time.perf_counter()
        m = cli_run("malicious", tmp_path / "raw", "--raw-code-index")
        assert m["llm"]["calls_by_role"].get("Describer", 0) == 0
        assert time.perf_counter() - t0 < 10

        t0 = time.perf_counter()
        m = cli_run("malicious", tmp_path / "single", "--single-turn")
        assert m["followup_resolutions"] == 0
        # transcripts that always ask for a follow-up still resolve nothing
        cfg = Config(llm_mode="live", single_turn=True, out_dir=str(tmp_path / "forced"))
        res = run_pipeline(cfg, APPS / "malicious" / "src", "malicious", SHA["malicious"],
                           provider=CallbackProvider(_always_followup))
        assert res.manifest["followup_resolutions"] == 0
        assert res.manifest["analysis"]["aborted_sessions"] == res.manifest["analysis"]["sessions"] > 0
        assert time.perf_counter() - t0 < 10


@pytest.fixture(scope="module")
def fixture_store():
    gw = LLMGateway(None, ReplayCache(APPS / "malicious" / "cache.jsonl"), mode="replay")
    meta = AppMeta("malicious", "com.bp.statis", SHA["malicious"], str(APPS / "malicious" / "src"))
    store, _ = Indexer(gw).ingest_app(meta)
    return store


def adversary(kinds, store):
    methods = sorted({(r.method_name, r.class_name.rsplit(".", 1)[-1], r.param_count) for r in store.records()})
    stream = iter(kinds * 1000)
    lock = threading.Lock()

    def analyzer(prompt):
        with lock:
            kind = next(stream)
        current = re.search(r"Code under analysis: (\S+)\.([\w$<>]+)\(", prompt)
        if kind == "self":
            cls, method = current.group(1).rsplit(".", 1)[-1], current.group(2)
            return f"Again.\n```\nFOLLOWUP: method={method} class={cls}\n```"
        if kind == "other":
            m, c, p = methods[len(prompt) % len(methods)]
            return f"```\nFOLLOWUP: method={m} class={c} params={p}\n```"
        if kind == "missing":
            return "FOLLOWUP: method=loadLibrary class=System params=1"
        if kind == "bad_verdict":
            return "```\nVERDICT: probably\nPATHS:\n- x\n```"
        if kind == "bad_followup":
            return "```\nFOLLOWUP: class=\n```"
        if kind == "free":
            return "Looks odd, hard to say."
        if kind == "empty":
            return ""
        return "```\nVERDICT: malicious\nPATHS:\n- com.bp.statis.a.c.a(Context, String, String)\n```"

    def fn(req):
        if req.role == Role.RELEVANCE_REVIEWER:
            return "VERDICT: KEEP"
        if req.role == Role.ANALYZER:
            return analyzer(req.prompt)
        if req.role == Role.QUERY_REVIEWER:
            return "FOLLOWUP: method=j class=b params=1" if len(req.prompt) % 2 else "no idea"
        if req.role == Role.COLLISION_REVIEWER:
            return "SELECT: 99"
        return "organized"

    return fn


KINDS = st.lists(st.sampled_from(["self", "other", "missing", "bad_verdict", "bad_followup", "free", "empty",
                                  "conclude"]), min_size=1, max_size=8)


def test_criterion_8_boundedness(fixture_store):
    with criterion(8, "adversarial transcripts stay bounded and terminate", 30.0):

        @settings(max_examples=25, deadline=None, suppress_health_check=list(HealthCheck), derandomize=True)
        @given(KINDS, st.integers(1, 5))
        def check(kinds, max_turns):
            gw = LLMGateway(CallbackProvider(adversary(kinds, fixture_store)), mode="live")
            eng = AnalysisEngine(fixture_store, gw, config=AnalysisConfig(max_turns=max_turns))
            outcomes = eng.run_battery()
            sessions = [s for o in outcomes for s in o.sessions]
            assert sessions
            assert gw.stats.calls["Analyzer"] <= len(sessions) * max_turns
            for s in sessions:
                assert 1 <= len(s.turns) <= max_turns
                assert len(set(s.visited_snippet_ids)) == len(s.visited_snippet_ids)
                assert all(isinstance(t.outcome, FollowUp) for t in s.turns[:-1])
                assert isinstance(s.turns[-1].outcome, (Conclusion, Abort))
            report = build_report({"app_id": "malicious"}, outcomes, gw, fixture_store)
            by_seed = {(s.query_id, s.seed_snippet_id): s for s in sessions}
            for q in report.query_reports:
                for cr in q.code_reports:
                    s = by_seed[(cr.query_id, cr.seed_snippet_id)]
                    if s.abort_reason:
                        assert cr.inconclusive and cr.abort_reason == s.abort_reason
                    if s.conclusion.malformed:
                        assert cr.inconclusive and "malformed_output" in cr.flags
                    assert cr.verdict in ("malicious", "benign", "inconclusive")

        check()


def test_criterion_9_store_round_trip(tmp_path_factory):
    with criterion(9, "save/load preserves search, filter and get (100 cases)", 30.0):

        @settings(max_examples=100, deadline=None, suppress_health_check=list(HealthCheck), derandomize=True)
        @given(st.integers(0, 2**32), st.integers(1, 120))
        def check(seed, n):
            rng = random.Random(seed)
            store, _ = random_store(rng, n, app_id=f"app{seed}")
            path = tmp_path_factory.mktemp("rt") / "store.jsonl"
            store.save(path)
            loaded = VectorStore.load(path)
            assert loaded.count() == store.count()
            for rec in store.records():
                assert loaded.get(rec.record_id) == rec
            for _ in range(5):
                q = EmbeddingVector(mock_vector_reference(random_text(rng)))
                k = rng.randint(1, 10)
                assert loaded.search(q, k) == store.search(q, k)
                rec = rng.choice(store.records())
                flt = MetadataFilter(rec.method_name, rec.class_name if rng.random() < 0.5 else None,
                                     rec.param_count if rng.random() < 0.5 else None)
                assert loaded.search(q, k, flt) == store.search(q, k, flt)
                assert loaded.filter_candidates(flt.method_name, flt.class_name, flt.param_count) == \
                    store.filter_candidates(flt.method_name, flt.class_name, flt.param_count)

        check()
