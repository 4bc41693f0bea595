"""Template files: ``$name`` / ``${name}`` / ``$$`` placeholder substitution.

A bare placeholder identifier may contain letters, digits, underscore and
dot; the first other character terminates it. The braced form additionally
allows ``[`` and ``]`` (for index access) and is useful when identifier
characters follow the placeholder. ``$$`` produces a literal dollar sign.

``$pars.NAME`` and ``$vars.NAME`` address the respective value set; a bare
``$NAME`` searches parameters first, then variables.
"""

import re
from dataclasses import dataclass

from .errors import EvalError, TemplateError

_IDENT_CHAR = re.compile(r"[A-Za-z0-9_.]")
_INDEX_FORM = re.compile(r"(pars|vars)\[(-?\d+)\]$")


@dataclass(frozen=True)
class Literal:
    text: str

    def source(self):
        return self.text


@dataclass(frozen=True)
class Placeholder:
    identifier: str
    braced: bool

    def source(self):
        return "${%s}" % self.identifier if self.braced else "$" + self.identifier


@dataclass(frozen=True)
class DollarEscape:
    def source(self):
        return "$$"


class TemplateDoc:
    """Parsed template; concatenating segment sources reproduces the text."""

    def __init__(self, text, segments):
        self.text = text
        self.segments = segments

    def placeholders(self):
        return [s.identifier for s in self.segments if isinstance(s, Placeholder)]

    def substitute(self, pars, vars):
        return substitute(self, pars, vars)


def parse_template(text):
    """Parse template text into a :class:`TemplateDoc`."""
    segments = []
    pos = 0
    n = len(text)
    while True:
        dollar = text.find("$", pos)
        if dollar == -1:
            if pos < n:
                segments.append(Literal(text[pos:]))
            break
        if dollar > pos:
            segments.append(Literal(text[pos:dollar]))
        nxt = text[dollar + 1:dollar + 2]
        if nxt == "$":
            segments.append(DollarEscape())
            pos = dollar + 2
        elif nxt == "{":
            end = text.find("}", dollar + 2)
            if end == -1:
                raise TemplateError(
                    "unterminated '${' placeholder at offset %d" % dollar
                )
            segments.append(Placeholder(text[dollar + 2:end], True))
            pos = end + 1
        else:
            j = dollar + 1
            while j < n and _IDENT_CHAR.match(text[j]):
                j += 1
            if j == dollar + 1:
                segments.append(Literal("$"))
            else:
                segments.append(Placeholder(text[dollar + 1:j], False))
            pos = j
    return TemplateDoc(text, segments)


def render_value(value):
    """Shortest decimal form that round-trips the value.

    Integral floats drop the trailing ``.0`` (still parses back to the same
    64-bit value); everything else uses ``repr``.
    """
    if isinstance(value, float):
        text = repr(value)
        if text.endswith(".0"):
            return text[:-2]
        return text
    return str(value)


def _resolve(identifier, pars, vars):
    match = _INDEX_FORM.match(identifier)
    if match:
        namespace = pars if match.group(1) == "pars" else vars
        index = int(match.group(2))
        try:
            return namespace[index]
        except (EvalError, IndexError):
            raise TemplateError(
                "placeholder %r: index out of range" % identifier
            ) from None
    for prefix, namespace in (("pars.", pars), ("vars.", vars)):
        if identifier.startswith(prefix):
            try:
                return namespace.value_by_name(identifier[len(prefix):])
            except EvalError:
                raise TemplateError(
                    "placeholder %r names no known value" % identifier
                ) from None
    # bare name: parameters take precedence over variables
    for namespace in (pars, vars):
        if identifier in namespace.names:
            return namespace.value_by_name(identifier)
    raise TemplateError("cannot resolve placeholder %r" % identifier)


def substitute(doc, pars, vars):
    """Render the template with each placeholder replaced by its value."""
    out = []
    for segment in doc.segments:
        if isinstance(segment, Literal):
            out.append(segment.text)
        elif isinstance(segment, DollarEscape):
            out.append("$")
        else:
            out.append(render_value(_resolve(segment.identifier, pars, vars)))
    return "".join(out)
