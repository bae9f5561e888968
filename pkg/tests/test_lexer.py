import json

import pytest

from spacecode.lexer import MINILANG, LanguageProfile, LexError, identifier_names, lex


def kinds_of(source, kind):
    return [t.text for t in lex(source, MINILANG) if t.kind == kind]


class TestLexExamples:
    def test_c_like_declaration(self):
        source = "int add(int x){return x;}"
        assert kinds_of(source, "identifier") == ["add", "x", "x"]
        assert kinds_of(source, "keyword") == ["int", "int", "return"]

    def test_line_comment_swallows_identifiers(self):
        tokens = lex("// x y z", MINILANG)
        assert [t.kind for t in tokens] == ["comment"]
        assert tokens[0].text == "// x y z"

    def test_block_comment(self):
        tokens = lex("a /* b c */ d", MINILANG)
        assert kinds_of("a /* b c */ d", "identifier") == ["a", "d"]
        assert any(t.kind == "comment" and "b c" in t.text for t in tokens)

    def test_string_contents_are_literal(self):
        tokens = lex('print("count (x)");', MINILANG)
        kinds = {t.text: t.kind for t in tokens}
        assert kinds['"count (x)"'] == "literal"
        assert "count" not in [t.text for t in tokens if t.kind == "identifier"]

    def test_multichar_punct(self):
        assert [t.text for t in lex("a<=b", MINILANG) if t.kind == "punct"] == ["<="]
        assert [t.text for t in lex("a != b && c", MINILANG) if t.kind == "punct"] == ["!=", "&&"]


class TestLexErrors:
    def test_unterminated_string_names_position(self):
        with pytest.raises(LexError) as exc:
            lex('x = "oops', MINILANG)
        assert exc.value.position == 4
        assert "position 4" in str(exc.value)

    def test_unterminated_block_comment(self):
        with pytest.raises(LexError) as exc:
            lex("a /* never closed", MINILANG)
        assert exc.value.position == 2


class TestTilingOracle:
    def test_spans_tile_generated_corpus(self):
        # independent oracle: spans must be sorted, disjoint, and cover [0, len)
        from spacecode.minilang import generate_corpus
        for sample in generate_corpus(7, 1000):
            source = sample.program.source
            tokens = lex(source, MINILANG)
            cursor = 0
            for tok in tokens:
                assert tok.start == cursor
                assert tok.end > tok.start
                assert source[tok.start:tok.end] == tok.text
                cursor = tok.end
            assert cursor == len(source)

    def test_empty_source(self):
        assert lex("", MINILANG) == []


class TestProfile:
    def test_keywords_and_builtins_disjoint(self):
        assert not (MINILANG.keywords & MINILANG.builtins)

    def test_builtins_lex_as_identifiers_but_are_not_renameable(self):
        tokens = lex("release(buf);", MINILANG)
        assert [t.kind for t in tokens if t.text == "release"] == ["identifier"]
        assert identifier_names(tokens, MINILANG) == ["buf"]

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "profile.json"
        MINILANG.save(path)
        loaded = LanguageProfile.load(path)
        assert loaded == MINILANG
        raw = json.loads(path.read_text())
        assert set(raw) >= {"name", "keywords", "builtins", "line_comment",
                            "block_comment", "string_quote"}
