"""Method-level splitting of decompiled Java sources.

The splitter is a tolerant, single-pass tokenizer followed by a bracket
matcher. It does not try to understand expressions: method bodies are
treated as opaque balanced ``{...}`` regions, which keeps it robust
against the half-valid Java that decompilers tend to emit.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import EmptyTree, JavaSyntaxError, RootNotFound, UnbalancedBraces

logger = logging.getLogger(__name__)

OVERSIZE_CHARS = 8000

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<badcomment>/\*)
  | (?P<textblock>\"\"\"(?:[^"\\]|\\.|"(?!""))*\"\"\")
  | (?P<badtextblock>\"\"\")
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<char>'(?:[^'\\\n]|\\.)*')
  | (?P<badquote>["'])
  | (?P<ident>(?:[^\W\d]|\$)(?:\w|\$)*)
  | (?P<number>\d(?:[\w.]|(?<=[eEpP])[+-])*)
  | (?P<op>.)
    """,
    re.VERBOSE | re.DOTALL,
)

_MODIFIERS = frozenset(
    {
        "public", "protected", "private", "static", "final", "abstract",
        "native", "synchronized", "transient", "volatile", "strictfp",
        "default", "sealed",
    }
)
_OPENERS = {"(": ")", "[": "]", "{": "}"}
_CLOSERS = {v: k for k, v in _OPENERS.items()}


@dataclass(frozen=True)
class SourceFile:
    path: str
    text: str


@dataclass(frozen=True)
class CodeUnit:
    """One method or constructor, plus the context needed to read it alone."""

    unit_id: str
    class_name: str
    method_name: str
    param_count: int
    param_types: tuple[str, ...]
    context_header: str
    body_text: str
    source_path: str
    byte_span: tuple[int, int]

    @property
    def simple_class_name(self) -> str:
        return self.class_name.rsplit(".", 1)[-1]

    @property
    def code_path(self) -> str:
        return f"{self.class_name}.{self.method_name}({', '.join(self.param_types)})"

    def is_oversize(self, cap: int = OVERSIZE_CHARS) -> bool:
        return len(self.body_text) > cap

    def standalone_text(self) -> str:
        """Header, method and closing braces: a compilable-looking method file."""
        depth = sum(1 for line in self.context_header.splitlines() if line.endswith(" {"))
        # continuation lines already carry their original indentation
        body = "    " * depth + self.body_text
        closing = "\n".join("    " * d + "}" for d in reversed(range(depth)))
        parts = [p for p in (self.context_header, body, closing) if p]
        return "\n".join(parts) + "\n"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["param_types"] = list(self.param_types)
        d["byte_span"] = list(self.byte_span)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CodeUnit":
        return cls(
            unit_id=d["unit_id"],
            class_name=d["class_name"],
            method_name=d["method_name"],
            param_count=int(d["param_count"]),
            param_types=tuple(d["param_types"]),
            context_header=d["context_header"],
            body_text=d["body_text"],
            source_path=d["source_path"],
            byte_span=(int(d["byte_span"][0]), int(d["byte_span"][1])),
        )


@dataclass
class _Token:
    kind: str
    text: str
    start: int
    end: int


@dataclass
class TypeDecl:
    """A class, interface, enum, record or annotation type found in a file."""

    name: str
    qualified_name: str
    kind: str
    declaration_line: str
    fields: list[str] = field(default_factory=list)
    methods: list["_MethodDecl"] = field(default_factory=list)
    members: list["TypeDecl"] = field(default_factory=list)


@dataclass
class _MethodDecl:
    name: str
    param_types: tuple[str, ...]
    start: int
    end: int


@dataclass
class JavaFile:
    source: SourceFile
    package_line: str | None
    imports: list[str]
    types: list[TypeDecl]

    @property
    def package(self) -> str:
        if not self.package_line:
            return ""
        return re.sub(r"\s+", "", self.package_line[len("package"):].rstrip(";"))


def tokenize(text: str) -> list[_Token]:
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind in ("ws", "comment"):
            continue
        if kind in ("badcomment", "badtextblock", "badquote"):
            line = text.count("\n", 0, m.start()) + 1
            raise JavaSyntaxError(f"unterminated literal or comment at line {line}")
        if kind == "textblock":
            kind = "string"
        tokens.append(_Token(kind, m.group(), m.start(), m.end()))
    return tokens


def _match_brackets(tokens: list[_Token]) -> dict[int, int]:
    stack: list[int] = []
    match: dict[int, int] = {}
    for i, tok in enumerate(tokens):
        if tok.kind != "op":
            continue
        if tok.text in _OPENERS:
            stack.append(i)
        elif tok.text in _CLOSERS:
            if not stack or tokens[stack[-1]].text != _CLOSERS[tok.text]:
                raise UnbalancedBraces(f"unexpected {tok.text!r} at offset {tok.start}")
            j = stack.pop()
            match[j] = i
            match[i] = j
    if stack:
        raise UnbalancedBraces(f"unclosed {tokens[stack[-1]].text!r} at offset {tokens[stack[-1]].start}")
    return match


def _squash(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


class _Parser:
    def __init__(self, source: SourceFile):
        self.src = source.text
        self.toks = tokenize(source.text)
        self.match = _match_brackets(self.toks)
        self.n = len(self.toks)

    def text(self, i: int) -> str:
        return self.toks[i].text if i < self.n else ""

    def is_op(self, i: int, ch: str) -> bool:
        return i < self.n and self.toks[i].kind == "op" and self.toks[i].text == ch

    def is_ident(self, i: int) -> bool:
        return i < self.n and self.toks[i].kind == "ident"

    def parse(self, source: SourceFile) -> JavaFile:
        package_line = None
        imports: list[str] = []
        types: list[TypeDecl] = []
        i = 0
        while i < self.n:
            t = self.toks[i]
            if self.is_op(i, ";"):
                i += 1
            elif t.kind == "ident" and t.text in ("package", "import"):
                j = i
                while j < self.n and not self.is_op(j, ";"):
                    j += 1
                line = _squash(self.src[t.start:self.toks[min(j, self.n - 1)].end])
                if t.text == "package":
                    package_line = line
                else:
                    imports.append(line)
                i = j + 1
            else:
                pkg = ""
                if package_line:
                    pkg = re.sub(r"\s+", "", package_line[len("package"):].rstrip(";"))
                i = self._member(i, self.n, None, pkg, types)
        return JavaFile(source, package_line, imports, types)

    def _skip_annotation(self, i: int) -> int:
        # i points at '@'
        i += 1
        if self.is_ident(i):
            i += 1
        while self.is_op(i, ".") and self.is_ident(i + 1):
            i += 2
        if self.is_op(i, "("):
            i = self.match[i] + 1
        return i

    def _skip_modifiers(self, i: int, end: int) -> int:
        while i < end:
            t = self.toks[i]
            if self.is_op(i, "@") and self.text(i + 1) != "interface":
                i = self._skip_annotation(i)
            elif t.kind == "ident" and t.text in _MODIFIERS:
                i += 1
            elif t.text == "non" and self.is_op(i + 1, "-") and self.text(i + 2) == "sealed":
                i += 3
            else:
                break
        return i

    def _member(self, i: int, end: int, owner: TypeDecl | None, prefix: str, sink: list[TypeDecl]) -> int:
        """Parse one member starting at token ``i``; return the index after it."""
        start = i
        i = self._skip_modifiers(i, end)
        if i >= end:
            return end
        t = self.toks[i]
        if self.is_op(i, "{"):
            # static or instance initializer
            return self.match[i] + 1
        if self.is_op(i, ";"):
            return i + 1
        if t.text in ("class", "interface", "enum") and self.is_ident(i + 1):
            return self._type_decl(start, i, i + 1, t.text, owner, prefix, sink)
        if self.is_op(i, "@") and self.text(i + 1) == "interface" and self.is_ident(i + 2):
            return self._type_decl(start, i, i + 2, "@interface", owner, prefix, sink)
        if t.text == "record" and self.is_ident(i + 1) and (self.is_op(i + 2, "(") or self.is_op(i + 2, "<")):
            return self._type_decl(start, i, i + 1, "record", owner, prefix, sink)
        if owner is None:
            # stray top-level token; skip to the next statement boundary
            return self._skip_to_semicolon(i, end)
        return self._method_or_field(start, i, end, owner)

    def _skip_to_semicolon(self, i: int, end: int) -> int:
        while i < end:
            if self.is_op(i, ";"):
                return i + 1
            if self.toks[i].text in _OPENERS and self.toks[i].kind == "op":
                close = self.match[i]
                if self.toks[i].text == "{":
                    return close + 1
                i = close
            i += 1
        return end

    def _type_decl(self, start: int, kw: int, name_idx: int, kind: str,
                   owner: TypeDecl | None, prefix: str, sink: list[TypeDecl]) -> int:
        name = self.toks[name_idx].text
        if owner is None:
            qualified = f"{prefix}.{name}" if prefix else name
        else:
            qualified = f"{owner.qualified_name}${name}"
        j = name_idx + 1
        while j < self.n and not self.is_op(j, "{"):
            if self.is_op(j, "(") or self.is_op(j, "["):
                j = self.match[j]
            elif self.is_op(j, ";"):
                # body-less declaration; nothing to descend into
                return j + 1
            j += 1
        if j >= self.n:
            return self.n
        decl_line = _squash(self.src[self.toks[start].start:self.toks[j].start]) + " {"
        decl = TypeDecl(name, qualified, kind, decl_line)
        body_end = self.match[j]
        i = j + 1
        if kind == "enum":
            i = self._enum_constants(i, body_end, decl)
        while i < body_end:
            i = self._member(i, body_end, decl, prefix, decl.members)
        sink.append(decl)
        return body_end + 1

    def _enum_constants(self, i: int, end: int, decl: TypeDecl) -> int:
        start = i
        while i < end and not self.is_op(i, ";"):
            if self.toks[i].kind == "op" and self.toks[i].text in _OPENERS:
                i = self.match[i]
            i += 1
        if i > start:
            stop = i if i < end else end
            text = self._elided_text(start, stop - 1)
            if text:
                decl.fields.append(text + ";")
        return i + 1 if i < end else end

    def _elided_text(self, first: int, last: int) -> str:
        """Source text of tokens first..last with code blocks replaced by ``{ ... }``."""
        pieces = []
        pos = self.toks[first].start
        i = first
        while i <= last:
            if self.is_op(i, "{") and i > first and (self.is_op(i - 1, ")") or self.is_op(i - 1, ">")
                                                     or self.is_ident(i - 1)):
                pieces.append(self.src[pos:self.toks[i].start])
                pieces.append("{ ... }")
                i = self.match[i]
                pos = self.toks[i].end
            i += 1
        pieces.append(self.src[pos:self.toks[last].end])
        return "".join(pieces).strip()

    def _method_or_field(self, start: int, i: int, end: int, owner: TypeDecl) -> int:
        j = i
        angle = 0
        while j < end:
            tok = self.toks[j]
            if tok.kind == "op":
                ch = tok.text
                if ch == "<":
                    angle += 1
                elif ch == ">":
                    angle = max(angle - 1, 0)
                elif ch == "@":
                    j = self._skip_annotation(j)
                    continue
                elif ch == "(":
                    if angle == 0 and j > i and self.is_ident(j - 1):
                        return self._method(start, j, end, owner)
                    j = self.match[j]
                elif ch == "[":
                    j = self.match[j]
                elif angle == 0 and ch in "=;,":
                    return self._field(start, j, end, owner)
                elif ch == "{":
                    # not a recognisable member; skip the block
                    return self.match[j] + 1
            j += 1
        return end

    def _field(self, start: int, j: int, end: int, owner: TypeDecl) -> int:
        while j < end and not self.is_op(j, ";"):
            if self.toks[j].kind == "op" and self.toks[j].text in _OPENERS:
                j = self.match[j]
            j += 1
        last = min(j, end - 1)
        owner.fields.append(self._elided_text(start, last))
        return j + 1

    def _method(self, start: int, lparen: int, end: int, owner: TypeDecl) -> int:
        name = self.toks[lparen - 1].text
        rparen = self.match[lparen]
        params = self._param_types(lparen + 1, rparen)
        k = rparen + 1
        while k < end:
            if self.is_op(k, "{"):
                close = self.match[k]
                owner.methods.append(_MethodDecl(name, params, self.toks[start].start, self.toks[close].end))
                return close + 1
            if self.is_op(k, ";"):
                return k + 1
            if self.text(k) == "default" and self.toks[k].kind == "ident":
                return self._skip_to_semicolon_flat(k, end)
            if self.toks[k].kind == "op" and self.toks[k].text in ("(", "["):
                k = self.match[k]
            k += 1
        return end

    def _skip_to_semicolon_flat(self, k: int, end: int) -> int:
        while k < end and not self.is_op(k, ";"):
            if self.toks[k].kind == "op" and self.toks[k].text in _OPENERS:
                k = self.match[k]
            k += 1
        return k + 1

    def _param_types(self, first: int, stop: int) -> tuple[str, ...]:
        groups: list[list[int]] = []
        current: list[int] = []
        angle = 0
        i = first
        while i < stop:
            tok = self.toks[i]
            if tok.kind == "op" and tok.text == "@":
                i = self._skip_annotation(i)
                continue
            if tok.kind == "op" and tok.text in ("(", "["):
                current.extend(range(i, self.match[i] + 1))
                i = self.match[i] + 1
                continue
            if tok.kind == "op" and tok.text == "<":
                angle += 1
            elif tok.kind == "op" and tok.text == ">":
                angle = max(angle - 1, 0)
            if tok.kind == "op" and tok.text == "," and angle == 0:
                groups.append(current)
                current = []
            elif not (tok.kind == "ident" and tok.text == "final"):
                current.append(i)
            i += 1
        if current:
            groups.append(current)
        return tuple(self._param_type(g) for g in groups if g)

    def _param_type(self, idx: list[int]) -> str:
        # trailing dims written after the name, e.g. ``int a[]``
        dims = 0
        while len(idx) >= 2 and self.toks[idx[-1]].text == "]" and self.toks[idx[-2]].text == "[":
            dims += 1
            idx = idx[:-2]
        if len(idx) >= 2 and self.toks[idx[-1]].kind == "ident":
            idx = idx[:-1]
        if not idx:
            return "?"
        type_text = _squash(self.src[self.toks[idx[0]].start:self.toks[idx[-1]].end])
        type_text = re.sub(r"\s*([<>,.\[\]?&])\s*", r"\1", type_text).replace(",", ", ")
        return type_text + "[]" * dims


def parse_java(file: SourceFile) -> JavaFile:
    """Tokenize and structurally parse one Java file."""
    parser = _Parser(file)
    return parser.parse(file)


def build_context_header(java_file: JavaFile, class_chain: list[TypeDecl]) -> str:
    """Package, imports, then each enclosing class line followed by its fields."""
    lines: list[str] = []
    if java_file.package_line:
        lines.append(java_file.package_line)
    lines.extend(java_file.imports)
    for depth, decl in enumerate(class_chain):
        indent = "    " * depth
        lines.append(indent + decl.declaration_line)
        for f in decl.fields:
            lines.append(indent + "    " + f)
    return "\n".join(lines)


def unit_id_for(source_path: str, class_name: str, method_name: str,
                param_types: tuple[str, ...], span: tuple[int, int]) -> str:
    key = "\x1f".join([source_path, class_name, method_name, ",".join(param_types), f"{span[0]}:{span[1]}"])
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:24]


def extract_methods(file: SourceFile) -> list[CodeUnit]:
    """Split one file into method/constructor units.

    Raises UnbalancedBraces (or JavaSyntaxError) if the file cannot be
    bracket-matched; callers decide whether that is fatal.
    """
    java = parse_java(file)
    units: list[CodeUnit] = []

    def walk(decl: TypeDecl, chain: list[TypeDecl]) -> None:
        chain = chain + [decl]
        header = build_context_header(java, chain)
        for m in decl.methods:
            span = (m.start, m.end)
            units.append(
                CodeUnit(
                    unit_id=unit_id_for(file.path, decl.qualified_name, m.name, m.param_types, span),
                    class_name=decl.qualified_name,
                    method_name=m.name,
                    param_count=len(m.param_types),
                    param_types=m.param_types,
                    context_header=header,
                    body_text=file.text[m.start:m.end],
                    source_path=file.path,
                    byte_span=span,
                )
            )
        for inner in decl.members:
            walk(inner, chain)

    for top in java.types:
        walk(top, [])
    units.sort(key=lambda u: u.byte_span)
    return units


def iter_java_files(root: str | Path) -> list[SourceFile]:
    root = Path(root)
    if not root.is_dir():
        raise RootNotFound(f"source root not found: {root}")
    paths = sorted(
        (p for p in root.rglob("*.java") if p.is_file()),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    if not paths:
        raise EmptyTree(f"no .java files under {root}")
    return [
        SourceFile(p.relative_to(root).as_posix(), p.read_text(encoding="utf-8", errors="replace"))
        for p in paths
    ]


def parse_source_tree(root: str | Path, warnings: list[str] | None = None) -> list[CodeUnit]:
    """Split every ``.java`` file under ``root``, in lexicographic path order.

    Files that fail to parse are skipped; a message is logged and, if
    ``warnings`` is given, appended to it.
    """
    units: list[CodeUnit] = []
    for src in iter_java_files(root):
        if not src.text.strip():
            _warn(warnings, f"{src.path}: empty file skipped")
            continue
        try:
            units.extend(extract_methods(src))
        except JavaSyntaxError as exc:
            _warn(warnings, f"{src.path}: {type(exc).__name__}: {exc}")
    return units


def _warn(sink: list[str] | None, message: str) -> None:
    logger.warning(message)
    if sink is not None:
        sink.append(message)
