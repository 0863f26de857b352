import json
import re
from pathlib import Path

import javalang
import pytest
from javalang import tree as jt

from droidtrace.errors import EmptyTree, RootNotFound, UnbalancedBraces
from droidtrace.splitter import (
    SourceFile,
    build_context_header,
    extract_methods,
    parse_java,
    parse_source_tree,
)

CORPUS = Path(__file__).parent / "fixtures" / "java_corpus"
EXPECTED = json.loads((CORPUS / "expected_counts.json").read_text())


def grammar_walk(text):
    """Independent oracle: (method, arity) pairs from a full Java grammar parse."""
    found = []

    def walk(node):
        body = node.body.declarations if isinstance(node, jt.EnumDeclaration) else node.body
        for member in body or []:
            if isinstance(member, (jt.MethodDeclaration, jt.ConstructorDeclaration)):
                if member.body is not None:
                    found.append((member.name, len(member.parameters)))
            elif isinstance(member, jt.TypeDeclaration):
                walk(member)

    for t in javalang.parse.parse(text).types:
        walk(t)
    return sorted(found)


def test_class_without_methods(tmp_path):
    (tmp_path / "A.java").write_text("class A {}")
    assert parse_source_tree(tmp_path) == []


def test_single_method(tmp_path):
    (tmp_path / "A.java").write_text("class A { void m(int x){} }")
    units = parse_source_tree(tmp_path)
    assert len(units) == 1
    assert units[0].method_name == "m"
    assert units[0].param_count == 1
    assert units[0].param_types == ("int",)


def test_overloads_share_field_context():
    units = extract_methods(SourceFile("A.java", "class A { int f; void m(){} void m(String s, int k){} }"))
    assert [(u.method_name, u.param_count) for u in units] == [("m", 0), ("m", 2)]
    assert all("int f;" in u.context_header for u in units)
    assert units[0].unit_id != units[1].unit_id


def test_nested_class_name():
    units = extract_methods(SourceFile("A.java", "class A { class B { void g(){} } }"))
    assert len(units) == 1
    assert units[0].class_name.endswith("A$B")


def test_package_qualifies_class_names():
    units = extract_methods(SourceFile("p/A.java", "package p.q; class A { class B { void g(){} } }"))
    assert units[0].class_name == "p.q.A$B"
    assert units[0].code_path == "p.q.A$B.g()"


def test_header_package_imports_and_declaration():
    text = "package p;\nimport a.B;\npublic class A {\n  void m() {}\n}\n"
    java = parse_java(SourceFile("A.java", text))
    header = build_context_header(java, java.types)
    assert header.splitlines() == ["package p;", "import a.B;", "public class A {"]


def test_header_fields_in_source_order():
    text = "class A { int a; void m() {} String b = \"x\"; long c; }"
    (unit,) = extract_methods(SourceFile("A.java", text))
    lines = [line.strip() for line in unit.context_header.splitlines()]
    assert lines == ["class A {", "int a;", 'String b = "x";', "long c;"]


def test_header_never_contains_method_bodies():
    text = """class A {
        Runnable r = new Runnable() { public void run() { evil(); } };
        void m() { ok(); }
    }"""
    (unit,) = extract_methods(SourceFile("A.java", text))
    assert "evil" not in unit.context_header
    assert "ok()" not in unit.context_header
    assert "{ ... }" in unit.context_header


def test_header_includes_outer_class_fields():
    text = "class A { int outer; class B { int inner; void g() {} } }"
    (unit,) = extract_methods(SourceFile("A.java", text))
    assert "int outer;" in unit.context_header
    assert "int inner;" in unit.context_header


def test_anonymous_and_lambda_bodies_stay_inline():
    text = """class A {
        void m() {
            new Thread(new Runnable() { public void run() { go(); } }).start();
            Runnable r = () -> { go(); };
        }
    }"""
    units = extract_methods(SourceFile("A.java", text))
    assert [u.method_name for u in units] == ["m"]
    assert "public void run()" in units[0].body_text


def test_initializer_blocks_are_not_units():
    text = "class A { static { x(); } { y(); } A() {} }"
    units = extract_methods(SourceFile("A.java", text))
    assert [u.method_name for u in units] == ["A"]


def test_body_starts_at_first_modifier_and_keeps_comments():
    text = "class A {\n  // lead\n  @Override public String toString() { /* keep */ return \"\"; }\n}"
    (unit,) = extract_methods(SourceFile("A.java", text))
    assert unit.body_text.startswith("@Override public String")
    assert unit.body_text.endswith("}")
    assert "/* keep */" in unit.body_text


def test_param_types_as_written():
    text = "class A { <T> void m(final Map<String, List<T>> a, int b[], @Ann(1) String... rest) {} }"
    (unit,) = extract_methods(SourceFile("A.java", text))
    assert unit.param_types == ("Map<String, List<T>>", "int[]", "String...")
    assert unit.param_count == 3


def test_unbalanced_braces_raise():
    with pytest.raises(UnbalancedBraces):
        extract_methods(SourceFile("A.java", "class A { void m() { }"))


def test_bad_file_is_skipped_with_warning(tmp_path):
    (tmp_path / "Bad.java").write_text("class Bad { void m() { ")
    (tmp_path / "Good.java").write_text("class Good { void m() {} }")
    warnings = []
    units = parse_source_tree(tmp_path, warnings)
    assert [u.class_name for u in units] == ["Good"]
    assert len(warnings) == 1 and "Bad.java" in warnings[0]


def test_root_errors(tmp_path):
    with pytest.raises(RootNotFound):
        parse_source_tree(tmp_path / "missing")
    with pytest.raises(EmptyTree):
        parse_source_tree(tmp_path)


def test_lexicographic_file_order(tmp_path):
    (tmp_path / "b").mkdir()
    (tmp_path / "b" / "Z.java").write_text("class Z { void z() {} }")
    (tmp_path / "a.java").write_text("class Y { void y() {} }")
    (tmp_path / "C.java").write_text("class X { void x() {} }")
    units = parse_source_tree(tmp_path)
    assert [u.source_path for u in units] == ["C.java", "a.java", "b/Z.java"]


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_corpus_matches_grammar_oracle(name):
    text = (CORPUS / name).read_text(encoding="utf-8")
    units = extract_methods(SourceFile(name, text))
    assert len(units) == EXPECTED[name]
    assert sorted((u.method_name, u.param_count) for u in units) == grammar_walk(text)


def test_corpus_invariants():
    units = parse_source_tree(CORPUS)
    texts = {p.name: p.read_text(encoding="utf-8") for p in CORPUS.glob("*.java")}
    assert len(units) == sum(EXPECTED.values())
    for u in units:
        text = texts[u.source_path]
        start, end = u.byte_span
        assert text[start:end] == u.body_text
        assert u.param_count == len(u.param_types)
        for line in re.findall(r"^import [^;]+;", text, flags=re.M):
            assert line in u.context_header
    # no leakage: spans of units in the same file never overlap
    by_file = {}
    for u in units:
        by_file.setdefault(u.source_path, []).append(u.byte_span)
    for spans in by_file.values():
        spans.sort()
        for (_, a_end), (b_start, _) in zip(spans, spans[1:]):
            assert a_end <= b_start


def test_determinism():
    first = parse_source_tree(CORPUS)
    second = parse_source_tree(CORPUS)
    assert first == second
    assert len({u.unit_id for u in first}) == len(first)


def test_obfuscated_fixture_hand_annotated():
    text = (CORPUS / "c18_obfuscated_opaque.java").read_text()
    units = extract_methods(SourceFile("c18_obfuscated_opaque.java", text))
    assert [(u.method_name, u.param_types) for u in units] == [("p", ("E...",)), ("p", ("String",))]
    assert units[0].class_name == "o.C0012a"


def test_unit_dict_round_trip():
    (unit,) = extract_methods(SourceFile("A.java", "class A { int m(int a, long b) { return 1; } }"))
    from droidtrace.splitter import CodeUnit

    assert CodeUnit.from_dict(json.loads(json.dumps(unit.to_dict()))) == unit
