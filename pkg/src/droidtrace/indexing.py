"""Ingest one decompiled app into its own vector store.

Steps per app: metadata, method splitting, LLM cleaning, LLM description,
embedding, storage. Two ablation switches turn off splitting/cleaning and
description generation.
"""

from __future__ import annotations

import hashlib
import logging
import re
import shlex
import subprocess
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import DroidTraceError, JavaSyntaxError, ProviderError
from .llm import LLMGateway, Role, prompt_digest
from .splitter import CodeUnit, SourceFile, iter_java_files, parse_java, parse_source_tree, unit_id_for
from .vectorstore import Embedder, IndexedRecord, MockEmbedder, VectorStore, compose_index_text

logger = logging.getLogger(__name__)

TRUNCATION_MARKER = "[TRUNCATED]"
FILE_METHOD_NAME = "<file>"
FALLBACK_DESCRIPTION_CHARS = 200
_SHA256_RE = re.compile(r"^[0-9a-f]{64}$")
_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class AppMeta:
    app_id: str
    package_name: str
    sha256: str
    source_root: str = ""

    def __post_init__(self):
        if not _SHA256_RE.match(self.sha256):
            raise ValueError(f"sha256 must be 64 lowercase hex characters, got {self.sha256!r}")

    def to_dict(self) -> dict:
        return {"app_id": self.app_id, "package_name": self.package_name, "sha256": self.sha256}


@dataclass
class PipelineConfig:
    split_and_clean: bool = True
    use_descriptions: bool = True
    embedding_provider: str = "mock"
    oversize_char_cap: int = 8000
    concurrency: int = 4


@dataclass
class IngestionStats:
    file_count: int = 0
    unit_count: int = 0
    record_count: int = 0
    cleaned_count: int = 0
    clean_fallbacks: int = 0
    described_count: int = 0
    description_fallbacks: int = 0
    oversize_count: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CleanResult:
    text: str
    fallback: bool = False
    prompt_digest: str | None = None


@dataclass
class DescribeResult:
    text: str
    fallback: bool = False
    truncated: bool = False
    prompt_digests: list[str] = field(default_factory=list)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(root: str | Path) -> str:
    """Content digest of a source tree, used when no APK file is available."""
    h = hashlib.sha256()
    for src in iter_java_files(root):
        h.update(src.path.encode("utf-8") + b"\x00")
        h.update(src.text.encode("utf-8") + b"\x00")
    return h.hexdigest()


def package_name_from_tree(root: str | Path) -> str:
    root = Path(root)
    for manifest in sorted(root.rglob("AndroidManifest.xml")):
        m = re.search(r'\bpackage\s*=\s*"([^"]+)"', manifest.read_text(encoding="utf-8", errors="replace"))
        if m:
            return m.group(1)
    packages = Counter()
    for src in iter_java_files(root):
        m = re.search(r"^\s*package\s+([\w.]+)\s*;", src.text, flags=re.M)
        if m:
            packages[m.group(1)] += 1
    if not packages:
        return ""
    return min(packages, key=lambda p: (-packages[p], p))


def extract_app_meta(source_root: str | Path, app_id: str | None = None, sha256: str | None = None,
                     apk_path: str | Path | None = None) -> AppMeta:
    if sha256:
        digest = sha256.lower()
    elif apk_path:
        digest = sha256_file(apk_path)
    else:
        digest = tree_digest(source_root)
    package = package_name_from_tree(source_root)
    return AppMeta(app_id or package or Path(source_root).name, package, digest, str(source_root))


def decompile_apk(apk: str | Path, command_template: str, out_dir: str | Path) -> Path:
    """Run an external decompiler, e.g. ``"jadx -d {out} {apk}"``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    argv = [part.format(apk=str(apk), out=str(out_dir)) for part in shlex.split(command_template)]
    logger.info("decompiling: %s", " ".join(argv))
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise DroidTraceError(f"decompiler exited with {proc.returncode}: {proc.stderr.strip()[:500]}")
    return out_dir


def _strip_fences(text: str) -> str:
    m = _FENCE_RE.search(text)
    return (m.group(1) if m else text).strip()


def truncate_for_prompt(text: str, cap: int) -> tuple[str, bool]:
    if len(text) <= cap:
        return text, False
    return text[:cap] + "\n" + TRUNCATION_MARKER, True


def whole_file_unit(src: SourceFile) -> CodeUnit:
    """One pseudo-unit covering an entire file, for the no-split ablation."""
    class_name = Path(src.path).stem
    try:
        java = parse_java(src)
        if java.types:
            class_name = java.types[0].qualified_name
    except JavaSyntaxError:
        pass
    span = (0, len(src.text))
    return CodeUnit(
        unit_id=unit_id_for(src.path, class_name, FILE_METHOD_NAME, (), span),
        class_name=class_name,
        method_name=FILE_METHOD_NAME,
        param_count=0,
        param_types=(),
        context_header="",
        body_text=src.text,
        source_path=src.path,
        byte_span=span,
    )


class Indexer:
    def __init__(self, gateway: LLMGateway, embedder: Embedder | None = None,
                 config: PipelineConfig | None = None):
        self.gateway = gateway
        self.embedder = embedder or MockEmbedder()
        self.config = config or PipelineConfig()

    def clean_unit(self, unit: CodeUnit) -> CleanResult:
        """Ask the Cleanser to drop dead code; never lose the original."""
        raw = unit.body_text
        prompt = self.gateway.render(Role.CLEANSER, {"code": raw, "context": unit.context_header})
        try:
            reply = self.gateway.ask(Role.CLEANSER, {"code": raw, "context": unit.context_header})
        except ProviderError as exc:
            logger.warning("cleaning %s failed, keeping original: %s", unit.code_path, exc)
            return CleanResult(raw, True, prompt_digest(prompt))
        cleaned = _strip_fences(reply.text)
        if not cleaned:
            logger.warning("cleaner returned nothing for %s, keeping original", unit.code_path)
            return CleanResult(raw, True, prompt_digest(prompt))
        return CleanResult(cleaned, False, prompt_digest(prompt))

    def describe_unit(self, cleaned: str, unit: CodeUnit) -> DescribeResult:
        code, truncated = truncate_for_prompt(cleaned, self.config.oversize_char_cap)
        variables = {"code": code, "code_path": unit.code_path, "context": unit.context_header}
        if unit.method_name == FILE_METHOD_NAME:
            variables["code_path"] = f"{unit.class_name} ({unit.source_path})"
            variables["extra_instructions"] = self.gateway.fragment("describer_whole_file")
        digests = []
        for attempt in range(2):
            if attempt:
                variables["extra_instructions"] = (variables.get("extra_instructions", "") +
                                                   "\nA previous attempt returned an empty description; "
                                                   "answer with a non-empty description.").strip()
            digests.append(prompt_digest(self.gateway.render(Role.DESCRIBER, variables)))
            try:
                text = self.gateway.ask(Role.DESCRIBER, variables).text.strip()
            except ProviderError as exc:
                logger.warning("describing %s failed: %s", unit.code_path, exc)
                text = ""
            if text:
                return DescribeResult(text, False, truncated, digests)
        logger.warning("no description for %s, using code prefix", unit.code_path)
        return DescribeResult(cleaned[:FALLBACK_DESCRIPTION_CHARS], True, truncated, digests)

    def _build_record(self, unit: CodeUnit) -> tuple[IndexedRecord, dict]:
        cfg = self.config
        flags = []
        oversize = unit.is_oversize(cfg.oversize_char_cap)
        if oversize:
            flags.append("oversize")
        cleaned = unit.body_text
        clean_digest = None
        raw_index = not cfg.use_descriptions
        if cfg.split_and_clean and not raw_index and not oversize:
            result = self.clean_unit(unit)
            cleaned, clean_digest = result.text, result.prompt_digest
            if result.fallback:
                flags.append("clean_fallback")
        description = ""
        describe_digests: list[str] = []
        if cfg.use_descriptions:
            desc = self.describe_unit(cleaned, unit)
            description, describe_digests = desc.text, desc.prompt_digests
            if desc.fallback:
                flags.append("description_fallback")
            if desc.truncated:
                flags.append("truncated")
        provenance = {
            "raw_text": unit.body_text,
            "cleaned_text": cleaned,
            "context_header": unit.context_header,
            "prompt_digests": {"cleanser": clean_digest, "describer": describe_digests},
            "flags": flags,
        }
        text = compose_index_text(unit.class_name, unit.method_name, description if cfg.use_descriptions else cleaned)
        record = IndexedRecord(
            record_id=unit.unit_id,
            code_text=cleaned,
            description=description,
            method_name=unit.method_name,
            class_name=unit.class_name,
            param_count=unit.param_count,
            embedding=self.embedder.embed(text),
            param_types=unit.param_types,
            source_path=unit.source_path,
            provenance=provenance,
        )
        return record, {"flags": flags, "cleaned": clean_digest is not None, "described": bool(describe_digests)}

    def ingest_app(self, meta: AppMeta, source_root: str | Path | None = None) -> tuple[VectorStore, IngestionStats]:
        cfg = self.config
        root = Path(source_root or meta.source_root)
        stats = IngestionStats()
        before_in, before_out = self.gateway.stats.input_tokens, self.gateway.stats.output_tokens
        files = iter_java_files(root)
        stats.file_count = len(files)
        if cfg.split_and_clean:
            units = parse_source_tree(root, stats.warnings)
        else:
            units = [whole_file_unit(src) for src in files]
        stats.unit_count = len(units)
        units = sorted(units, key=lambda u: u.unit_id)
        with ThreadPoolExecutor(max_workers=max(1, cfg.concurrency)) as pool:
            built = list(pool.map(self._build_record, units))
        index_mode = "description" if cfg.use_descriptions else "raw_code"
        store_meta = meta.to_dict() | {
            "unit_count": len(units),
            "split_and_clean": cfg.split_and_clean,
            "use_descriptions": cfg.use_descriptions,
        }
        store = VectorStore(meta.app_id, _embedding_dim(built, self.embedder), store_meta, index_mode)
        for record, info in built:
            store.upsert(record)
            stats.cleaned_count += info["cleaned"]
            stats.described_count += info["described"]
            stats.clean_fallbacks += "clean_fallback" in info["flags"]
            stats.description_fallbacks += "description_fallback" in info["flags"]
            stats.oversize_count += "oversize" in info["flags"]
        stats.record_count = store.count()
        stats.input_tokens = self.gateway.stats.input_tokens - before_in
        stats.output_tokens = self.gateway.stats.output_tokens - before_out
        if stats.record_count != stats.unit_count:
            raise DroidTraceError(f"{stats.unit_count} units produced {stats.record_count} records")
        return store, stats


def _embedding_dim(built, embedder) -> int:
    if built:
        return built[0][0].embedding.dim
    return embedder.dim or 0


def clean_unit(unit: CodeUnit, gateway: LLMGateway) -> CleanResult:
    return Indexer(gateway).clean_unit(unit)


def describe_unit(cleaned: str, unit: CodeUnit, gateway: LLMGateway, oversize_char_cap: int = 8000) -> DescribeResult:
    return Indexer(gateway, config=PipelineConfig(oversize_char_cap=oversize_char_cap)).describe_unit(cleaned, unit)


def ingest_app(meta: AppMeta, cfg: PipelineConfig, gateway: LLMGateway,
               embedder: Embedder | None = None) -> tuple[VectorStore, IngestionStats]:
    return Indexer(gateway, embedder, cfg).ingest_app(meta)

