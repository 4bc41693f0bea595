"""SLHA (Susy Les Houches Accord) spectrum files: parsing and lookup.

Default layout: within a ``BLOCK``, the last field of each data line is the
value and the preceding integer fields form the index; index-less lines are
reachable with the empty tuple ``()``. ``DECAY`` blocks invert this: the
first field is the value (the branching ratio), the rest is the index. A few
well-known blocks deviate from the default layout and carry their value in a
fixed position; those are table-driven below.

Lines with a non-numeric trailing field (version strings, status messages)
are kept with the text as value rather than rejected, since real spectrum
files always contain such blocks (SPINFO et al.).
"""

import re

from ..errors import DefinitionError, EvalError, ProcessorError
from ..formulas import EvalContext, compile_formula, evaluate
from ..pipeline import as_value_list
from .base import PointProcessor
from .shell import parse_command_script, render_script, run_script

DEFAULT_TIMEOUT = 10.0

_Q_RE = re.compile(r"Q\s*=\s*([-+0-9.eEdD]+)", re.IGNORECASE)

# value field position (0-based) for blocks that do not follow the
# last-field-is-value rule; every other field belongs to the index.
_SPECIAL_VALUE_POS = {
    "FOBS": 2,
    "FOBSSM": 2,
    "FOBSERR": 2,
    "FMASS": 1,
    "FPARAM": 1,
    "FCONSTRATIO": 2,
    "HIGGSBOUNDSINPUTHIGGSCOUPLINGSBOSONS": 0,
    "HIGGSBOUNDSINPUTHIGGSCOUPLINGSFERMIONS": 0,
}


def _to_number(token):
    try:
        return float(token.replace("D", "E").replace("d", "e"))
    except ValueError:
        return None


def _to_int(token):
    try:
        return int(token)
    except ValueError:
        return None


class SlhaBlock:
    __slots__ = ("name", "q", "entries")

    def __init__(self, name, q=None):
        self.name = name.upper()
        self.q = q
        self.entries = {}

    def __getitem__(self, key):
        if isinstance(key, int):
            key = (key,)
        elif isinstance(key, list):
            key = tuple(key)
        elif not isinstance(key, tuple):
            raise EvalError("block index must be integers or (), got %r" % (key,))
        try:
            return self.entries[key]
        except KeyError:
            raise EvalError(
                "block %s has no entry %r" % (self.name, key)
            ) from None

    def __len__(self):
        return len(self.entries)

    def __repr__(self):
        q = " Q=%g" % self.q if self.q is not None else ""
        return "SlhaBlock(%s%s, %d entries)" % (self.name, q, len(self.entries))


class DecayEntry:
    __slots__ = ("pdg", "width", "channels")

    def __init__(self, pdg, width):
        self.pdg = pdg
        self.width = width
        self.channels = {}

    def __getitem__(self, key):
        if isinstance(key, str):
            if key.lower() == "width":
                return self.width
            raise EvalError("decay entries only know 'width', not %r" % (key,))
        if isinstance(key, int):
            key = (key,)
        elif isinstance(key, list):
            key = tuple(key)
        try:
            return self.channels[key]
        except KeyError:
            raise EvalError(
                "decay %d has no channel %r" % (self.pdg, key)
            ) from None

    def __repr__(self):
        return "DecayEntry(%d, width=%g, %d channels)" % (
            self.pdg, self.width, len(self.channels)
        )


class DecayTable:
    __slots__ = ("entries",)

    def __init__(self, entries):
        self.entries = entries

    def __getitem__(self, pdg):
        try:
            return self.entries[pdg]
        except KeyError:
            raise EvalError("no DECAY block for pdg code %r" % (pdg,)) from None

    def __len__(self):
        return len(self.entries)


class SlhaDocument:
    """Parsed SLHA file: ``doc[name]``, ``doc[name, Q]``, ``doc["DECAY"]``.

    Block names are case-insensitive. Asking for a scale picks the block
    with the nearest Q and records a warning on the document when it is more
    than 1% off the request.
    """

    _formula_attrs = ("matrix",)

    def __init__(self):
        self.blocks = []
        self._by_name = {}
        self.decays = {}
        self.warnings = []

    def _add_block(self, block):
        self.blocks.append(block)
        self._by_name.setdefault(block.name, []).append(block)

    def block(self, name, q=None):
        candidates = self._by_name.get(name.upper())
        if not candidates:
            raise EvalError("no block named %r" % (name,))
        if q is None:
            return candidates[0]
        scaled = [b for b in candidates if b.q is not None]
        if not scaled:
            self.warnings.append(
                "block %s carries no scale; ignoring request for Q=%g" % (name, q)
            )
            return candidates[0]
        best = min(scaled, key=lambda b: abs(b.q - q))
        if q != 0 and abs(best.q - q) / abs(q) > 0.01:
            self.warnings.append(
                "block %s: requested Q=%g, nearest is Q=%g (>1%% off)"
                % (name, q, best.q)
            )
        return best

    def __getitem__(self, key):
        q = None
        if isinstance(key, tuple):
            if len(key) != 2:
                raise EvalError("block lookup takes (name, Q), got %r" % (key,))
            key, q = key
        if not isinstance(key, str):
            raise EvalError("block name must be a string, got %r" % (key,))
        if key.upper() == "DECAY":
            return DecayTable(self.decays)
        return self.block(key, q)

    def matrix(self, name):
        """Block entries as a 0-based nested list; adds an IM<name> block
        as imaginary parts when present."""
        block = self.block(name)
        size = 0
        for key in block.entries:
            if len(key) != 2:
                raise EvalError("block %s is not a matrix" % (name,))
            size = max(size, key[0], key[1])
        rows = [[0.0] * size for _ in range(size)]
        for (i, j), value in block.entries.items():
            rows[i - 1][j - 1] = value
        imaginary = self._by_name.get(("IM" + name).upper())
        if imaginary:
            for (i, j), value in imaginary[0].entries.items():
                rows[i - 1][j - 1] = rows[i - 1][j - 1] + 1j * value
        return rows


def _parse_block_line(block, fields, where):
    value_pos = _SPECIAL_VALUE_POS.get(block.name)
    if value_pos is not None:
        if value_pos >= len(fields):
            raise ProcessorError("%s: too few fields for block %s" % (where, block.name))
        value = _to_number(fields[value_pos])
        if value is None:
            raise ProcessorError(
                "%s: non-numeric value %r in block %s"
                % (where, fields[value_pos], block.name)
            )
        index = []
        for k, field in enumerate(fields):
            if k == value_pos:
                continue
            as_int = _to_int(field)
            index.append(as_int if as_int is not None else _to_number(field) or field)
        block.entries[tuple(index)] = value
        return
    # default layout: leading integers index, last field is the value
    index = []
    i = 0
    while i < len(fields) - 1:
        as_int = _to_int(fields[i])
        if as_int is None:
            break
        index.append(as_int)
        i += 1
    rest = fields[i:]
    if len(rest) == 1:
        value = _to_number(rest[0])
        if value is None:
            value = rest[0]
    else:
        value = " ".join(rest)
    block.entries[tuple(index)] = value


def parse_slha(text, source="<slha>"):
    """Parse SLHA text into a :class:`SlhaDocument`."""
    doc = SlhaDocument()
    current = None  # SlhaBlock or DecayEntry
    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        fields = line.split()
        keyword = fields[0].upper()
        where = "%s:%d" % (source, lineno)
        if keyword == "BLOCK":
            if len(fields) < 2:
                raise ProcessorError("%s: BLOCK header without a name" % where)
            q_match = _Q_RE.search(" ".join(fields[2:]))
            q = float(q_match.group(1).replace("D", "E").replace("d", "e")) if q_match else None
            current = SlhaBlock(fields[1], q)
            doc._add_block(current)
        elif keyword == "DECAY":
            if len(fields) < 3:
                raise ProcessorError("%s: malformed DECAY header" % where)
            pdg = _to_int(fields[1])
            width = _to_number(fields[2])
            if pdg is None or width is None:
                raise ProcessorError("%s: malformed DECAY header" % where)
            current = DecayEntry(pdg, width)
            doc.decays[pdg] = current
        elif current is None:
            raise ProcessorError("%s: data line before any BLOCK/DECAY header" % where)
        elif isinstance(current, DecayEntry):
            value = _to_number(fields[0])
            if value is None:
                raise ProcessorError(
                    "%s: non-numeric branching ratio %r" % (where, fields[0])
                )
            index = []
            for field in fields[1:]:
                as_int = _to_int(field)
                if as_int is None:
                    raise ProcessorError(
                        "%s: non-integer decay product %r" % (where, field)
                    )
                index.append(as_int)
            current.channels[tuple(index)] = value
        else:
            _parse_block_line(current, fields, where)
    return doc


def render_document(doc):
    """Readable dump of a parsed document (used by the slha-dump tool)."""
    lines = []
    for block in doc.blocks:
        header = "BLOCK %s" % block.name
        if block.q is not None:
            header += " Q= %s" % repr(block.q)
        lines.append(header)
        for index, value in block.entries.items():
            key = " ".join(str(k) for k in index) or "()"
            lines.append("    %s -> %r" % (key, value))
    for pdg, entry in doc.decays.items():
        lines.append("DECAY %d width=%r" % (pdg, entry.width))
        for index, value in entry.channels.items():
            lines.append("    %s -> %r" % (" ".join(str(k) for k in index), value))
    return "\n".join(lines)


class SLHAProcessor(PointProcessor):
    """Feed the template to a spectrum generator, read SLHA files back."""

    name = "SLHAProcessor"
    section = "SLHAProcessor"

    def __init__(self, config, search, definition_dir=None):
        self.search = search
        program = config.get(self.section, "program")
        if program is None:
            raise DefinitionError("[SLHAProcessor] needs a 'program' directive")
        self.script = parse_command_script(program)
        if not self.script.commands:
            raise DefinitionError("[SLHAProcessor] 'program' is empty")
        self.timeout = config.get_float(self.section, "timeout", DEFAULT_TIMEOUT)
        files = config.get(self.section, "slha_files")
        if files is None:
            raise DefinitionError("[SLHAProcessor] needs an 'slha_files' directive")
        self.slha_files = [part for part in files.strip().split(":") if part]
        slha_data = config.get(self.section, "slha_data")
        if slha_data is None:
            raise DefinitionError("[SLHAProcessor] needs an 'slha_data' formula")
        self.slha_data = compile_formula(slha_data)
        self.last_warnings = []

    def describe(self):
        return "SLHAProcessor: %s (timeout %gs, files %s)" % (
            render_script(self.script), self.timeout, ":".join(self.slha_files)
        )

    def process(self, template_path, pars, vars, workdir, remember_store):
        import os

        run_script(
            self.script, workdir, self.search,
            template_path=template_path, timeout=self.timeout,
        )
        documents = []
        for name in self.slha_files:
            path = name if os.path.isabs(name) else os.path.join(workdir, name)
            try:
                with open(path, encoding="utf-8", errors="replace") as handle:
                    documents.append(parse_slha(handle.read(), source=name))
            except OSError as exc:
                raise ProcessorError("missing SLHA output %r: %s" % (name, exc)) from None
        ctx = EvalContext(
            names={"pars": pars, "vars": vars, "slha": documents},
            remember_store=remember_store,
        )
        try:
            result = evaluate(self.slha_data, ctx)
        except EvalError as exc:
            raise ProcessorError("slha_data: %s" % exc) from None
        self.last_warnings = [w for doc in documents for w in doc.warnings]
        return as_value_list(result)
