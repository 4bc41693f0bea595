import string

import pytest
from hypothesis import given, strategies as st

from parascan.errors import TemplateError
from parascan.formulas import NamedValues
from parascan.templates import (
    DollarEscape, Literal, Placeholder, parse_template, render_value, substitute,
)


def sub(text, pars=(), vars=()):
    doc = parse_template(text)
    return substitute(
        doc,
        NamedValues([n for n, _ in pars], [v for _, v in pars]),
        NamedValues([n for n, _ in vars], [v for _, v in vars]),
    )


class TestParse:
    def test_braced_pair(self):
        doc = parse_template("${intpart}.${fracpart}")
        kinds = [type(s) for s in doc.segments]
        assert kinds == [Placeholder, Literal, Placeholder]
        assert doc.segments[0].identifier == "intpart"
        assert doc.segments[1].text == "."

    def test_dollar_escape(self):
        doc = parse_template("$$")
        assert [type(s) for s in doc.segments] == [DollarEscape]

    def test_terminator_rule(self):
        doc = parse_template("cost=$x-5")
        assert doc.segments[1] == Placeholder("x", False)
        assert doc.segments[2].text == "-5"

    def test_unterminated_brace(self):
        with pytest.raises(TemplateError, match="unterminated"):
            parse_template("${open")

    def test_lone_dollar_is_literal(self):
        doc = parse_template("$ 5")
        assert sub("$ 5") == "$ 5"

    def test_round_trip(self):
        text = "a $x ${y[0]} $$ b $pars.m end"
        doc = parse_template(text)
        assert "".join(segment.source() for segment in doc.segments) == text


class TestSubstitute:
    def test_quickstart_style(self):
        assert sub("s( ($x)^2 + ($y) )", pars=[("x", 0.0), ("y", 0.0)]) == \
            "s( (0)^2 + (0) )"

    def test_pars_take_precedence_over_vars(self):
        assert sub("$m", pars=[("m", 1.0)], vars=[("m", 2.0)]) == "1"

    def test_explicit_namespaces(self):
        assert sub("$pars.m/$vars.m", pars=[("m", 1.0)], vars=[("m", 2.0)]) == "1/2"

    def test_index_form(self):
        assert sub("${vars[0]}", vars=[("v", 3.5)]) == "3.5"
        assert sub("${pars[1]}", pars=[("a", 1.0), ("b", 2.5)]) == "2.5"

    def test_escape_renders_single_dollar(self):
        assert sub("cost: $$5") == "cost: $5"

    def test_unresolvable_identifier(self):
        with pytest.raises(TemplateError, match="nope"):
            sub("$nope")

    def test_index_out_of_range(self):
        with pytest.raises(TemplateError):
            sub("${vars[3]}", vars=[("v", 1.0)])

    def test_empty_placeholder_set_is_identity(self):
        text = "no placeholders whatsoever\nmultiple lines\n"
        assert sub(text) == text


class TestRenderValue:
    @pytest.mark.parametrize("value,expected", [
        (0.0, "0"),
        (1100.0, "1100"),
        (0.5, "0.5"),
        (-1.0, "-1"),
        (1.779e-09, "1.779e-09"),
        (3, "3"),
    ])
    def test_examples(self, value, expected):
        assert render_value(value) == expected

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_round_trips(self, value):
        assert float(render_value(value)) == value


_literal = st.text(
    alphabet=string.ascii_letters + string.digits + " ()^+*/\n\t,.-=",
    max_size=30,
)


class TestProperties:
    @given(_literal)
    def test_literal_text_passes_through(self, text):
        assert sub(text) == text

    @given(_literal, st.floats(-1e6, 1e6), _literal)
    def test_literal_spans_unaltered(self, before, value, after):
        rendered = sub(before + "${x}" + after, pars=[("x", value)])
        assert rendered.startswith(before)
        assert rendered.endswith(after)
        assert rendered[len(before):len(rendered) - len(after)] == render_value(value)
