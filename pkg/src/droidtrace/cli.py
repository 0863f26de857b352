"""Command-line entry point: ``index``, ``analyze``, ``report``, ``eval`` and ``run``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import config as configmod
from .analysis import DEFAULT_QUERIES, AnalysisConfig, AnalysisEngine, dump_outcomes, load_outcomes, load_queries
from .config import Config
from .errors import ConfigError, DroidTraceError
from .evaluation import evaluate, load_truth, load_verdicts
from .indexing import AppMeta, Indexer, PipelineConfig, decompile_apk, extract_app_meta
from .llm import ChatProvider, HTTPChatProvider, LLMGateway, ReplayCache
from .report import build_report, render
from .vectorstore import Embedder, MockEmbedder, RemoteEmbedder, VectorStore

logger = logging.getLogger("droidtrace")

ARTIFACTS = ("store.jsonl", "outcomes.json", "report.md", "report.json", "manifest.json")


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(f"{record.name}: {record.getMessage()}")


@dataclass
class RunResult:
    out_dir: Path
    store: VectorStore
    gateway: LLMGateway
    manifest: dict = field(default_factory=dict)


def make_gateway(cfg: Config, provider: ChatProvider | None = None) -> LLMGateway:
    cfg.validate()
    cache = ReplayCache(cfg.cache) if cfg.cache else None
    if provider is None and cfg.llm_mode != "replay":
        provider = HTTPChatProvider(cfg.base_url, cfg.api_key())
    return LLMGateway(provider, cache, mode=cfg.llm_mode, model=cfg.model, concurrency=cfg.concurrency)


def make_embedder(cfg: Config, dim: int | None = None) -> Embedder:
    if cfg.embedding_provider == "remote":
        return RemoteEmbedder(cfg.base_url, cfg.api_key(), cfg.embedding_model)
    return MockEmbedder(dim) if dim else MockEmbedder()


def pipeline_config(cfg: Config) -> PipelineConfig:
    return PipelineConfig(split_and_clean=cfg.split_and_clean, use_descriptions=cfg.use_descriptions,
                          embedding_provider=cfg.embedding_provider, concurrency=cfg.concurrency)


def analysis_config(cfg: Config) -> AnalysisConfig:
    return AnalysisConfig(max_turns=cfg.max_turns, top_k=cfg.top_k, single_turn=cfg.single_turn)


def run_pipeline(cfg: Config, app_root: str | Path, app_id: str | None = None, sha256: str | None = None,
                 provider: ChatProvider | None = None, embedder: Embedder | None = None,
                 queries=DEFAULT_QUERIES) -> RunResult:
    """Index, analyze and report one app, writing every artifact into ``cfg.out_dir``."""
    gateway = make_gateway(cfg, provider)
    app_root = Path(app_root)
    if not app_root.is_dir():
        raise ConfigError(f"app root is not a directory: {app_root}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    collector = _WarningCollector()
    logging.getLogger("droidtrace").addHandler(collector)
    timings: dict[str, float] = {}
    try:
        t0 = time.perf_counter()
        meta = extract_app_meta(app_root, app_id=app_id, sha256=sha256)
        embedder = embedder or make_embedder(cfg)
        store, ingest = Indexer(gateway, embedder, pipeline_config(cfg)).ingest_app(meta)
        store.save(out / "store.jsonl")
        timings["index"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        engine = AnalysisEngine(store, gateway, embedder, analysis_config(cfg))
        outcomes = engine.run_battery(queries)
        dump_outcomes(outcomes, out / "outcomes.json", store.app_id)
        timings["analyze"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        report = build_report(meta.to_dict(), outcomes, gateway, store, queries)
        (out / "report.md").write_text(render(report, "markdown"), encoding="utf-8")
        (out / "report.json").write_text(render(report, "structured"), encoding="utf-8")
        timings["report"] = time.perf_counter() - t0
    finally:
        logging.getLogger("droidtrace").removeHandler(collector)
        if gateway.cache is not None and gateway.mode == "record":
            gateway.cache.save(cfg.cache)

    manifest = {
        "app": meta.to_dict(),
        "config": cfg.public_dict(),
        "artifacts": list(ARTIFACTS),
        "verdict": report.verdict.to_dict(),
        "ingestion": ingest.to_dict(),
        "analysis": engine.stats.to_dict(),
        "followup_resolutions": engine.stats.followup_resolutions,
        "llm": gateway.stats.to_dict(),
        "timings_seconds": {k: round(v, 4) for k, v in timings.items()},
        "warnings": collector.messages,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RunResult(out, store, gateway, manifest)


# --- argument parsing --------------------------------------------------------


def _common(p: argparse.ArgumentParser, llm: bool = True) -> None:
    p.add_argument("--config", help="TOML config file (default: $TRACERAG_CONFIG)")
    p.add_argument("-v", "--verbose", action="store_true")
    if not llm:
        return
    p.add_argument("--llm-mode", dest="llm_mode", choices=("live", "replay", "record"))
    p.add_argument("--cache", help="replay cache (JSON Lines)")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--model")
    p.add_argument("--embedding-model", dest="embedding_model")
    p.add_argument("--provider", dest="embedding_provider", choices=("mock", "remote"),
                   help="embedding provider")
    p.add_argument("--concurrency", type=int)


def _ablations(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-split-clean", dest="split_and_clean", action="store_const", const=False,
                   help="index whole files without splitting or cleaning")
    p.add_argument("--raw-code-index", dest="use_descriptions", action="store_const", const=False,
                   help="embed code instead of LLM descriptions")


def _analysis_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-turns", dest="max_turns", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--single-turn", dest="single_turn", action="store_const", const=True,
                   help="disable follow-up queries")
    p.add_argument("--queries", help="JSON Lines file of custom queries")


def _app_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--app-root", dest="app_root", help="decompiled source tree")
    p.add_argument("--apk", help="APK to decompile first (requires --decompiler-cmd)")
    p.add_argument("--decompiler-cmd", dest="decompiler_cmd", help='e.g. "jadx -d {out} {apk}"')
    p.add_argument("--app-id", dest="app_id")
    p.add_argument("--sha256")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="droidtrace", description="LLM-assisted Android malware behavior analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build the vector store for one app")
    _common(p)
    _app_opts(p)
    _ablations(p)
    p.add_argument("--out", required=True, help="store file to write")

    p = sub.add_parser("analyze", help="run the behavior query battery against a store")
    _common(p)
    _analysis_opts(p)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True, help="outcomes file to write")

    p = sub.add_parser("report", help="build the final report from analysis outcomes")
    _common(p)
    p.add_argument("--outcomes", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--format", choices=("markdown", "structured", "both"), default="markdown")
    p.add_argument("--out", required=True, help="report file (or base path for --format both)")

    p = sub.add_parser("eval", help="compute detection and behavior metrics")
    _common(p, llm=False)
    p.add_argument("--verdicts", required=True, help="report directory or verdict file")
    p.add_argument("--truth", required=True, help="ground-truth manifest (JSON Lines)")
    p.add_argument("--out", help="metrics file (default: stdout)")

    p = sub.add_parser("run", help="index, analyze and report one app end to end")
    _common(p)
    _app_opts(p)
    _ablations(p)
    _analysis_opts(p)
    p.add_argument("--out-dir", dest="out_dir")
    return parser


def _resolve(args: argparse.Namespace) -> Config:
    return configmod.resolve(vars(args), args.config)


def _app_root(args: argparse.Namespace, cfg: Config) -> tuple[Path, str | None]:
    if args.apk:
        if not args.decompiler_cmd:
            raise ConfigError("--apk needs --decompiler-cmd")
        from .indexing import sha256_file
        target = Path(args.app_root or Path(cfg.out_dir) / "decompiled")
        return decompile_apk(args.apk, args.decompiler_cmd, target), args.sha256 or sha256_file(args.apk)
    if not args.app_root:
        raise ConfigError("one of --app-root or --apk is required")
    return Path(args.app_root), args.sha256


def _queries(args: argparse.Namespace):
    return load_queries(args.queries) if getattr(args, "queries", None) else DEFAULT_QUERIES


def cmd_index(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    gateway = make_gateway(cfg)
    root, sha = _app_root(args, cfg)
    meta = extract_app_meta(root, app_id=args.app_id, sha256=sha)
    store, stats = Indexer(gateway, make_embedder(cfg), pipeline_config(cfg)).ingest_app(meta)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    store.save(args.out)
    print(json.dumps({"records": stats.record_count, "files": stats.file_count, "llm": gateway.stats.to_dict()},
                     sort_keys=True))
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    gateway = make_gateway(cfg)
    store = VectorStore.load(args.store)
    engine = AnalysisEngine(store, gateway, make_embedder(cfg, store.dim), analysis_config(cfg))
    outcomes = engine.run_battery(_queries(args))
    dump_outcomes(outcomes, args.out, store.app_id)
    print(json.dumps({"analysis": engine.stats.to_dict(), "llm": gateway.stats.to_dict()}, sort_keys=True))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    gateway = make_gateway(cfg)
    store = VectorStore.load(args.store)
    _, outcomes = load_outcomes(args.outcomes)
    app_info = {k: store.meta.get(k, "") for k in ("app_id", "package_name", "sha256")}
    app_info["app_id"] = app_info["app_id"] or store.app_id
    report = build_report(app_info, outcomes, gateway, store)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "both":
        out.with_suffix(".md").write_text(render(report, "markdown"), encoding="utf-8")
        out.with_suffix(".json").write_text(render(report, "structured"), encoding="utf-8")
    else:
        out.write_text(render(report, args.format), encoding="utf-8")
    print(json.dumps(report.verdict.to_dict(), sort_keys=True))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    metrics = evaluate(load_verdicts(args.verdicts), load_truth(args.truth))
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    cfg.validate()
    root, sha = _app_root(args, cfg)
    result = run_pipeline(cfg, root, app_id=args.app_id, sha256=sha, queries=_queries(args))
    print(json.dumps({"out_dir": str(result.out_dir), "verdict": result.manifest["verdict"]}, sort_keys=True))
    return 0


COMMANDS = {"index": cmd_index, "analyze": cmd_analyze, "report": cmd_report, "eval": cmd_eval, "run": cmd_run}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"droidtrace: error [cli]: {exc}", file=sys.stderr)
        return 2
    except DroidTraceError as exc:
        print(f"droidtrace: error [{exc.module}]: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"droidtrace: error [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
