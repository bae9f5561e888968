import numpy as np
import pytest

from spacecode.lexer import MINILANG, lex
from spacecode.minilang import (Assign, BinOp, Call, CallStmt, Decl, For, Func,
                                GenConfig, If, Lit, Program, Ret, Var, generate,
                                generate_corpus, load_jsonl, oracle_label, parse,
                                render, save_jsonl, unwrap_identity)


def program_of(*body, params=("a", "b")):
    return Program.from_func(Func("main", tuple(params), tuple(body)))


class TestOracleRules:
    def test_unguarded_division_is_defective(self):
        p = program_of(Decl("q", BinOp("/", Var("a"), Var("b"))))
        assert oracle_label(p) == 1

    def test_guarded_division_is_clean(self):
        guarded = If(BinOp("!=", Var("b"), Lit(0)),
                     (Decl("q", BinOp("/", Var("a"), Var("b"))),))
        assert oracle_label(program_of(guarded)) == 0

    def test_guard_must_match_the_divisor(self):
        wrong_guard = If(BinOp("!=", Var("a"), Lit(0)),
                         (Decl("q", BinOp("/", Var("a"), Var("b"))),))
        assert oracle_label(program_of(wrong_guard)) == 1

    def test_literal_divisor_is_safe(self):
        p = program_of(Decl("q", BinOp("/", Var("a"), Lit(3))))
        assert oracle_label(p) == 0

    def test_loop_bound_operator(self):
        loop = lambda op: For("i", Lit(0), BinOp(op, Var("i"), Var("a")),
                              (Assign("b", BinOp("+", Var("b"), Var("i"))),))
        assert oracle_label(program_of(loop("<"))) == 0
        assert oracle_label(program_of(loop("<="))) == 1

    def test_use_after_release(self):
        alloc = Decl("buf", Call("alloc", (Var("a"),)))
        rel = CallStmt(Call("release", (Var("buf"),)))
        use = CallStmt(Call("use", (Var("buf"),)))
        assert oracle_label(program_of(alloc, use, rel)) == 0
        assert oracle_label(program_of(alloc, rel, use)) == 1

    def test_empty_body_is_clean(self):
        assert oracle_label(program_of()) == 0

    def test_oracle_sees_through_identity_wrappers(self):
        cond = BinOp("&&", BinOp("!=", Var("b"), BinOp("+", Lit(0), Lit(0))), Lit(True))
        guarded = If(cond, (Decl("q", BinOp("/", Var("a"),
                                            BinOp("+", Var("b"), Lit(0)))),))
        assert oracle_label(program_of(guarded)) == 0

    def test_unwrap_identity(self):
        wrapped = BinOp("&&", BinOp("+", Var("x"), Lit(0)), Lit(True))
        assert unwrap_identity(wrapped) == Var("x")
        # boolean true is not integer zero
        assert unwrap_identity(BinOp("+", Var("x"), Lit(False))) != Var("x")

    def test_text_backed_program_rejected(self):
        p = Program(func=None, source="int f() {}", identifiers=frozenset())
        with pytest.raises(ValueError):
            oracle_label(p)


class TestGenerator:
    def test_label_matches_oracle_on_1000_samples(self):
        for sample in generate_corpus(11, 1000):
            assert oracle_label(sample.program) == sample.label
            if sample.label == 0:
                assert sample.defect_kind is None
            else:
                assert sample.defect_kind is not None

    def test_class_balance(self):
        labels = [s.label for s in generate_corpus(3, 10_000)]
        assert abs(np.mean(labels) - 0.5) < 0.02

    def test_determinism(self):
        a = generate_corpus(21, 50)
        b = generate_corpus(21, 50)
        assert [s.program.source for s in a] == [s.program.source for s in b]
        assert [s.label for s in a] == [s.label for s in b]

    def test_defect_rate_zero_and_one(self):
        clean = generate_corpus(5, 40, GenConfig(defect_rate=0.0))
        assert all(s.label == 0 for s in clean)
        dirty = generate_corpus(5, 40, GenConfig(defect_rate=1.0))
        assert all(s.label == 1 for s in dirty)

    def test_identifiers_avoid_reserved_words(self):
        for sample in generate_corpus(9, 200):
            assert not (sample.program.identifiers & MINILANG.keywords)
            assert not (sample.program.identifiers & MINILANG.builtins)

    def test_sources_relex_consistently(self):
        for sample in generate_corpus(13, 200):
            tokens = lex(sample.program.source, MINILANG)
            names = {t.text for t in tokens
                     if t.kind == "identifier" and t.text not in MINILANG.builtins}
            assert names == set(sample.program.identifiers)


class TestParser:
    def test_render_parse_round_trip(self):
        for sample in generate_corpus(17, 300):
            source = sample.program.source
            assert render(parse(source)) == source

    def test_parse_rejects_garbage(self):
        from spacecode.minilang import MiniLangSyntaxError
        with pytest.raises(MiniLangSyntaxError):
            parse("int f( {")

    def test_from_source_falls_back_to_text(self):
        p = Program.from_source("def python_func(): pass")
        assert p.func is None
        assert "python_func" in p.identifiers


class TestCorpusFiles:
    def test_jsonl_round_trip(self, tmp_path):
        samples = generate_corpus(23, 25)
        path = tmp_path / "corpus.jsonl"
        save_jsonl(samples, path)
        loaded = load_jsonl(path)
        assert len(loaded) == len(samples)
        for original, back in zip(samples, loaded):
            assert back.program.source == original.program.source
            assert back.label == original.label
            assert back.defect_kind == original.defect_kind
            assert back.program.func is not None  # MiniLang re-parses

    def test_jsonl_schema(self, tmp_path):
        import json
        samples = generate_corpus(23, 3)
        path = tmp_path / "corpus.jsonl"
        save_jsonl(samples, path)
        for line in path.read_text().splitlines():
            d = json.loads(line)
            assert set(d) == {"id", "code", "label", "defect_kind"}
