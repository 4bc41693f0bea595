"""The formula language used throughout scan definitions.

Formulas are a closed expression subset of Python: literals, lists/tuples,
name references, attribute and index access, arithmetic (`/` always real,
`//` floor), chained comparisons, boolean logic, conditional expressions,
single-generator list comprehensions / generator expressions, and function
calls against a fixed registry of built-ins. No statements, no function
literals, no imports, no attribute writes.

A formula is compiled once into an :class:`Expr` and evaluated many times
against an :class:`EvalContext`. Evaluation never mutates anything except the
context's ``remember`` store.
"""

import ast
import math

from .errors import EvalError, FormulaSyntaxError

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.FloorDiv, ast.Mod, ast.Pow)
_ALLOWED_UNARY = (ast.UAdd, ast.USub, ast.Not)
_ALLOWED_CMPOPS = (ast.Eq, ast.NotEq, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.In, ast.NotIn)
_ALLOWED_CONSTANTS = (int, float, str, bool, type(None))

_MATH_EXPORTS = (
    "sin", "cos", "tan", "asin", "acos", "atan", "atan2", "exp", "log",
    "log10", "sinh", "cosh", "tanh", "asinh", "acosh", "atanh",
)


class NamedValues:
    """Ordered values, a leading prefix of which carries names.

    ``t.name`` and ``t[i]`` address the same storage; entries beyond the
    named prefix are reachable only by index.
    """

    __slots__ = ("_names", "_values", "_index")

    def __init__(self, names, values):
        self._names = tuple(names)
        self._values = tuple(values)
        if len(self._names) > len(self._values):
            raise ValueError(
                "%d names for %d values" % (len(self._names), len(self._values))
            )
        self._index = {name: i for i, name in enumerate(self._names)}

    @property
    def names(self):
        return self._names

    @property
    def values(self):
        return self._values

    def value_by_name(self, name):
        try:
            return self._values[self._index[name]]
        except KeyError:
            raise EvalError("no value named %r" % (name,)) from None

    def __getitem__(self, i):
        if not isinstance(i, int):
            raise EvalError("indices must be integers, got %r" % (i,))
        return self._values[i]

    def __len__(self):
        return len(self._values)

    def __iter__(self):
        return iter(self._values)

    def __eq__(self, other):
        if isinstance(other, NamedValues):
            return self._names == other._names and self._values == other._values
        return NotImplemented

    def __hash__(self):
        return hash((self._names, self._values))

    def __repr__(self):
        parts = [
            "%s=%r" % (self._names[i], v) if i < len(self._names) else repr(v)
            for i, v in enumerate(self._values)
        ]
        return "NamedValues(%s)" % ", ".join(parts)


class MathProxy:
    """Read-only access to the remaining ``math`` module functions."""

    def __getattr__(self, name):
        if name.startswith("_") or not hasattr(math, name):
            raise EvalError("math has no function %r" % (name,))
        return getattr(math, name)

    def __repr__(self):
        return "<math>"


def _attr_guard(obj, name):
    if isinstance(obj, NamedValues):
        return obj.value_by_name(name)
    if isinstance(obj, MathProxy):
        return getattr(obj, name)
    if isinstance(obj, (int, float, complex)) and name in ("real", "imag"):
        return getattr(obj, name)
    exported = getattr(type(obj), "_formula_attrs", ())
    if name in exported:
        return getattr(obj, name)
    raise EvalError("%s has no accessible attribute %r" % (type(obj).__name__, name))


class _Validator(ast.NodeVisitor):
    def __init__(self, source):
        self.source = source

    def _fail(self, node, message):
        line = getattr(node, "lineno", None)
        col = getattr(node, "col_offset", None)
        raise FormulaSyntaxError(
            "%s (at line %s, column %s in %r)" % (message, line, col, self.source),
            line=line, column=col,
        )

    def generic_visit(self, node):
        self._fail(node, "unsupported syntax: %s" % type(node).__name__)

    def visit_Expression(self, node):
        self.visit(node.body)

    def visit_Constant(self, node):
        if not isinstance(node.value, _ALLOWED_CONSTANTS):
            self._fail(node, "unsupported literal %r" % (node.value,))

    def visit_Name(self, node):
        if not isinstance(node.ctx, ast.Load):
            self._fail(node, "names can only be read")
        if node.id.startswith("_"):
            self._fail(node, "names starting with '_' are not allowed")

    def visit_Attribute(self, node):
        if not isinstance(node.ctx, ast.Load):
            self._fail(node, "attributes can only be read")
        if node.attr.startswith("_"):
            self._fail(node, "attributes starting with '_' are not allowed")
        self.visit(node.value)

    def visit_Subscript(self, node):
        if not isinstance(node.ctx, ast.Load):
            self._fail(node, "subscripts can only be read")
        if isinstance(node.slice, ast.Slice):
            self._fail(node, "slices are not supported")
        self.visit(node.value)
        self.visit(node.slice)

    def _visit_all(self, nodes):
        for child in nodes:
            self.visit(child)

    def visit_Tuple(self, node):
        self._visit_all(node.elts)

    def visit_List(self, node):
        self._visit_all(node.elts)

    def visit_UnaryOp(self, node):
        if not isinstance(node.op, _ALLOWED_UNARY):
            self._fail(node, "unsupported operator")
        self.visit(node.operand)

    def visit_BinOp(self, node):
        if not isinstance(node.op, _ALLOWED_BINOPS):
            self._fail(node, "unsupported operator")
        self.visit(node.left)
        self.visit(node.right)

    def visit_BoolOp(self, node):
        self._visit_all(node.values)

    def visit_Compare(self, node):
        for op in node.ops:
            if not isinstance(op, _ALLOWED_CMPOPS):
                self._fail(node, "unsupported comparison operator")
        self.visit(node.left)
        self._visit_all(node.comparators)

    def visit_IfExp(self, node):
        self.visit(node.test)
        self.visit(node.body)
        self.visit(node.orelse)

    def _visit_comprehension(self, node):
        if len(node.generators) != 1:
            self._fail(node, "only a single comprehension generator is supported")
        gen = node.generators[0]
        if gen.is_async:
            self._fail(node, "unsupported syntax")
        targets = [gen.target] if isinstance(gen.target, ast.Name) else (
            gen.target.elts if isinstance(gen.target, ast.Tuple) else None
        )
        if targets is None or not all(isinstance(t, ast.Name) for t in targets):
            self._fail(node, "comprehension target must be a name or names")
        for target in targets:
            if target.id.startswith("_"):
                self._fail(node, "names starting with '_' are not allowed")
        self.visit(gen.iter)
        self._visit_all(gen.ifs)
        self.visit(node.elt)

    visit_ListComp = _visit_comprehension
    visit_GeneratorExp = _visit_comprehension

    def visit_Call(self, node):
        self.visit(node.func)
        for arg in node.args:
            if isinstance(arg, ast.Starred):
                self._fail(node, "starred arguments are not supported")
            self.visit(arg)
        for kw in node.keywords:
            if kw.arg is None:
                self._fail(node, "** arguments are not supported")
            if kw.arg.startswith("_"):
                self._fail(node, "names starting with '_' are not allowed")
            self.visit(kw.value)


class _AttributeLowering(ast.NodeTransformer):
    """Route every attribute access through the runtime guard."""

    def visit_Attribute(self, node):
        self.generic_visit(node)
        return ast.copy_location(
            ast.Call(
                func=ast.Name(id="_attr", ctx=ast.Load()),
                args=[node.value, ast.Constant(node.attr)],
                keywords=[],
            ),
            node,
        )


class Expr:
    """A compiled formula; immutable and shareable across threads."""

    __slots__ = ("source", "code")

    def __init__(self, source, code):
        self.source = source
        self.code = code

    def __repr__(self):
        return "Expr(%r)" % (self.source,)


def compile_formula(text):
    """Compile formula text to an :class:`Expr` or raise a positioned error.

    Multi-line directive values are flattened (newline -> space) before
    compilation, so formulas may continue across indented lines.
    """
    if text is None or not text.strip():
        raise FormulaSyntaxError("empty formula")
    source = text.replace("\n", " ").strip()
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise FormulaSyntaxError(
            "syntax error in formula %r: %s" % (source, exc.msg),
            line=exc.lineno, column=exc.offset,
        ) from None
    _Validator(source).visit(tree)
    tree = _AttributeLowering().visit(tree)
    ast.fix_missing_locations(tree)
    return Expr(source, compile(tree, "<formula>", "eval"))


class RememberFunction:
    """Per-point value store: ``remember(name=value)`` / ``remember("name")``."""

    __slots__ = ("store",)

    def __init__(self, store):
        self.store = store

    def __call__(self, *args, **kwargs):
        if len(args) == 1 and not kwargs and isinstance(args[0], str):
            name = args[0]
            if name not in self.store:
                raise EvalError("remember: %r was never set" % (name,))
            return self.store[name]
        if not args and len(kwargs) == 1:
            ((name, value),) = kwargs.items()
            self.store[name] = value
            return value
        raise EvalError(
            "remember takes either one string or exactly one name=value assignment"
        )


def builtin_registry():
    """The fixed function registry available to every formula."""
    registry = {name: getattr(math, name) for name in _MATH_EXPORTS}
    registry["pi"] = math.pi
    registry["sqrt"] = math.sqrt
    registry["abs"] = abs
    registry["min"] = min
    registry["max"] = max
    registry["len"] = len
    registry["range"] = range
    registry["sum"] = sum
    registry["round"] = round
    registry["float"] = float
    registry["int"] = int
    registry["math"] = MathProxy()
    return registry


_SHARED_REGISTRY = builtin_registry()


class EvalContext:
    """Namespace a formula evaluates against.

    ``names`` maps the value-set objects (``pars``, ``vars``, ``data``,
    ``file``, ``slha``, ``values``) that the formula may reference; they
    shadow registry functions of the same name. ``remember_store`` is scoped
    to one point evaluation.
    """

    __slots__ = ("names", "functions", "remember_store")

    def __init__(self, names=None, functions=None, remember_store=None):
        self.names = dict(names) if names else {}
        self.functions = functions if functions is not None else _SHARED_REGISTRY
        self.remember_store = remember_store if remember_store is not None else {}


def _describe(exc):
    if isinstance(exc, ZeroDivisionError):
        return "division by zero"
    if isinstance(exc, IndexError):
        return "index out of range"
    if isinstance(exc, KeyError):
        return "unknown key %s" % exc
    if isinstance(exc, NameError):
        return str(exc)
    return "%s: %s" % (type(exc).__name__, exc)


def evaluate(expr, ctx):
    """Evaluate a compiled formula in a context; wraps failures in EvalError."""
    env = dict(ctx.functions)
    env.update(ctx.names)
    env["remember"] = RememberFunction(ctx.remember_store)
    env["_attr"] = _attr_guard
    env["__builtins__"] = {}
    try:
        return eval(expr.code, env)
    except EvalError as exc:
        raise EvalError("%s in formula %r" % (exc, expr.source)) from None
    except RecursionError:
        raise
    except Exception as exc:
        raise EvalError("%s in formula %r" % (_describe(exc), expr.source)) from None
