import math
import threading

import pytest
from hypothesis import given, settings, strategies as st

from parascan.errors import EvalError, FormulaSyntaxError
from parascan.formulas import (
    EvalContext, NamedValues, builtin_registry, compile_formula, evaluate,
)


def run(source, **names):
    return evaluate(compile_formula(source), EvalContext(names=names))


class TestNamedValues:
    def test_name_and_index_address_same_storage(self):
        t = NamedValues(["a", "b"], [1.0, 2.0])
        assert t.value_by_name("a") == t[0]
        assert t[-1] == 2.0
        assert len(t) == 2

    def test_unnamed_tail_reachable_by_index_only(self):
        t = NamedValues(["a"], [1.0, 2.0, 3.0])
        assert t[2] == 3.0
        with pytest.raises(EvalError):
            t.value_by_name("c")

    def test_more_names_than_values_rejected(self):
        with pytest.raises(ValueError):
            NamedValues(["a", "b"], [1.0])


class TestCompile:
    def test_syntax_error_positioned(self):
        with pytest.raises(FormulaSyntaxError) as err:
            compile_formula("1 +")
        assert err.value.line is not None

    def test_empty_formula(self):
        with pytest.raises(FormulaSyntaxError):
            compile_formula("  ")

    def test_multiline_flattened(self):
        e = compile_formula("1 +\n    2")
        assert evaluate(e, EvalContext()) == 3

    @pytest.mark.parametrize("source", [
        "lambda x: x",
        "{1: 2}",
        "{1, 2}",
        "x = 1",
        "import os",
        "values[1:3]",
        "[x for x in a for y in b]",
        "f(*args)",
        "f(**kw)",
        "x.__class__",
        "_hidden",
        "open('/etc/passwd')",  # unknown names compile, but open is not in the registry
    ])
    def test_rejected_or_unresolvable(self, source):
        try:
            expr = compile_formula(source)
        except FormulaSyntaxError:
            return
        with pytest.raises(EvalError):
            evaluate(expr, EvalContext())


class TestEvaluate:
    def test_future_division(self):
        assert run("1 / 2") == 0.5
        assert run("1 // 2") == 0

    def test_unary_minus_precedence(self):
        assert run("-1 ** 2") == -1

    def test_attribute_squares_correctly(self):
        assert run("pars.x ** 2", pars=NamedValues(["x"], [-1.0])) == 1.0

    def test_tuple_formula(self):
        values = list(range(11))
        result = run("values[0], values[10] / pars[0]",
                     values=values, pars=NamedValues(["p"], [2.0]))
        assert result == (0, 5.0)

    def test_list_comprehension(self):
        assert run("[values[i] for i in [1, 4, 9]] + [2 * values[6]]",
                   values=list(range(11))) == [1, 4, 9, 12]

    def test_generator_expression(self):
        data = NamedValues(["m"], [9.0, 3.0, 7.0])
        assert run("min(data[i] for i in range(len(data)) if i != 0)",
                   data=data) == 3.0

    def test_comparison_chain(self):
        assert run("1 < 2 < 3") is True
        assert run("1 < 2 > 5") is False

    def test_conditional(self):
        assert run("1 if 0.0 else 2") == 2

    def test_gaussian_peak(self):
        value = run("exp(-0.5 * ((data.mh0 - 125.7) / 0.4) ** 2)",
                    data=NamedValues(["mh0"], [125.7]))
        assert value == 1.0

    def test_division_by_zero_wrapped(self):
        with pytest.raises(EvalError, match="division by zero"):
            run("1 / pars.x", pars=NamedValues(["x"], [0.0]))

    def test_index_out_of_range_wrapped(self):
        with pytest.raises(EvalError, match="index"):
            run("values[10]", values=[1])

    def test_unknown_name_wrapped(self):
        with pytest.raises(EvalError, match="nosuchname"):
            run("nosuchname + 1")

    def test_truthiness(self):
        assert run("'yes' if [] else 'no'") == "no"
        assert run("'yes' if [0] else 'no'") == "yes"

    def test_boolean_short_circuit(self):
        # the right operand would divide by zero
        assert run("0 and 1 / 0") == 0
        assert run("1 or 1 / 0") == 1

    def test_evaluation_does_not_mutate_context(self):
        values = [1, 2, 3]
        run("[v * 2 for v in values]", values=values)
        assert values == [1, 2, 3]
        with pytest.raises(EvalError):
            run("values.append(4)", values=values)
        assert values == [1, 2, 3]


class TestRegistry:
    def test_exposed_math_functions(self):
        registry = builtin_registry()
        for name in ("sin", "cos", "tan", "asin", "acos", "atan", "atan2",
                     "exp", "log", "log10", "sinh", "cosh", "tanh", "asinh",
                     "acosh", "atanh"):
            assert name in registry
        assert registry["pi"] == math.pi

    def test_atan2(self):
        assert run("atan2(1, 1)") == pytest.approx(math.pi / 4)

    def test_general_purpose(self):
        assert run("min([3, 1, 2])") == 1
        assert run("max(3, 1, 2)") == 3
        assert run("sum(range(4))") == 6
        assert run("round(2.5)") == 2
        assert run("int(2.9)") == 2
        assert run("sqrt(9)") == 3.0

    def test_math_dotted_access(self):
        assert run("math.gamma(5)") == 24
        with pytest.raises(EvalError):
            run("math.nosuch(1)")

    def test_log_with_base(self):
        assert run("log(8, 2)") == pytest.approx(3)


class TestRemember:
    def test_set_then_get(self):
        ctx = EvalContext()
        assert evaluate(compile_formula("remember(k=7)"), ctx) == 7
        assert evaluate(compile_formula('remember("k")'), ctx) == 7

    def test_unset_name(self):
        with pytest.raises(EvalError, match="never_set"):
            run('remember("never_set")')

    def test_bad_arity(self):
        ctx = EvalContext()
        with pytest.raises(EvalError):
            evaluate(compile_formula("remember(a=1, b=2)"), ctx)

    def test_store_isolation_across_contexts(self):
        first = EvalContext()
        second = EvalContext()
        evaluate(compile_formula("remember(k=1)"), first)
        with pytest.raises(EvalError):
            evaluate(compile_formula('remember("k")'), second)

    def test_store_isolation_under_concurrency(self):
        set_formula = compile_formula("remember(tag=pars.x)")
        get_formula = compile_formula('remember("tag")')
        failures = []

        def worker(tag):
            ctx = EvalContext(names={"pars": NamedValues(["x"], [float(tag)])})
            for _ in range(200):
                evaluate(set_formula, ctx)
                if evaluate(get_formula, ctx) != float(tag):
                    failures.append(tag)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not failures


class TestProperties:
    @given(st.integers(-1000, 1000), st.integers(-1000, 1000).filter(bool))
    def test_division_law(self, a, b):
        combined = run("a / b - (a // b + (a %% b) / b)".replace("%%", "%"),
                       a=a, b=b)
        assert abs(combined) < 1e-12

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    def test_comparison_chain_equivalence(self, a, b, c):
        assert run("a < b < c", a=a, b=b, c=c) == \
            run("(a < b) and (b < c)", a=a, b=b, c=c)

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    @settings(max_examples=40)
    def test_determinism(self, x, y):
        expr = compile_formula("sin(x) * cos(y) + x ** 2 - y / 3")
        first = evaluate(expr, EvalContext(names={"x": x, "y": y}))
        second = evaluate(expr, EvalContext(names={"x": x, "y": y}))
        assert first == second  # bit-for-bit
