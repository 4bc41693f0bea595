"""SimpleProcessor: run a program, harvest the numbers it prints.

The configured program is launched with the substituted template file as its
last command line argument, in the template's directory. All integer and
floating point numbers in its stdout that are not part of a word become the
``values`` list that the ``data_values`` formula picks from.
"""

import re

from ..errors import DefinitionError, EvalError, ProcessorError
from ..formulas import EvalContext, compile_formula, evaluate
from ..pipeline import as_value_list
from .base import PointProcessor
from .shell import render_script, resolve_program, run_command, split_words, parse_command_script

DEFAULT_TIMEOUT = 10.0

# A numeric token: a leading sign counts only after whitespace/start or one of
# ( = : , -- and the token must not touch a word or a dotted digit run on
# either side (rejects abc123 and v2.0.1 style fragments).
_NUMBER_RE = re.compile(
    r"(?:"
    r"(?:(?<=[\s(=:,])|(?<![\s\S]))[+-]"
    r"|"
    r"(?<![\w.])"
    r")"
    r"(?:\d+\.\d*|\.\d+|\d+)"
    r"(?:[eE][+-]?\d+)?"
    r"(?![A-Za-z_0-9])(?!\.\d)"
)


def extract_numbers(text):
    """All standalone numeric tokens in ``text``, in order, as floats."""
    return [float(m.group(0)) for m in _NUMBER_RE.finditer(text)]


def annotate_numbers(text):
    """Echo ``text`` with every matched number marked ``value{i|-j}``.

    ``i`` indexes the token from the front (0-based), ``-j`` from the back;
    both are valid indices into the extracted ``values`` list.
    """
    matches = list(_NUMBER_RE.finditer(text))
    total = len(matches)
    out = []
    pos = 0
    for i, match in enumerate(matches):
        out.append(text[pos:match.start()])
        out.append("%s{%d|%d}" % (match.group(0), i, i - total))
        pos = match.end()
    out.append(text[pos:])
    return "".join(out)


class SimpleProcessor(PointProcessor):
    name = "SimpleProcessor"
    section = "SimpleProcessor"

    def __init__(self, config, search, definition_dir=None):
        self.search = search
        program = config.get(self.section, "program")
        if program is None:
            raise DefinitionError("[SimpleProcessor] needs a 'program' directive")
        self.argv = split_words(program)
        if not self.argv:
            raise DefinitionError("[SimpleProcessor] 'program' is empty")
        self.timeout = config.get_float(self.section, "timeout", DEFAULT_TIMEOUT)
        data_values = config.get(self.section, "data_values")
        if data_values is None:
            raise DefinitionError("[SimpleProcessor] needs a 'data_values' formula")
        self.data_values = compile_formula(data_values)

    def describe(self):
        return "SimpleProcessor: %s (timeout %gs, data_values %s)" % (
            render_script(parse_command_script(" ".join(self.argv))),
            self.timeout, self.data_values.source,
        )

    def process(self, template_path, pars, vars, workdir, remember_store):
        argv = list(self.argv)
        try:
            argv[0] = resolve_program(argv[0], self.search)
        except DefinitionError as exc:
            raise ProcessorError(str(exc)) from None
        if template_path is not None:
            argv.append(template_path)
        try:
            code, out, err = run_command(
                argv, workdir, input_bytes=b"", timeout=self.timeout
            )
        except FileNotFoundError as exc:
            raise ProcessorError("cannot run %r: %s" % (argv[0], exc)) from None
        if code != 0:
            tail = (err or b"")[-300:].decode("utf-8", "replace").strip()
            raise ProcessorError(
                "program exited with code %d%s" % (code, (": " + tail) if tail else "")
            )
        values = extract_numbers(out.decode("utf-8", "replace"))
        ctx = EvalContext(
            names={"pars": pars, "vars": vars, "values": values},
            remember_store=remember_store,
        )
        try:
            result = evaluate(self.data_values, ctx)
        except EvalError as exc:
            raise ProcessorError("data_values: %s" % exc) from None
        return as_value_list(result)
