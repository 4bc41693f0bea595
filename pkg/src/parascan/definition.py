"""Scan definition files.

The definition format is an INI dialect: ``[section]`` headers, ``key = value``
or ``key : value`` lines, ``#``/``;`` comments, indented continuation lines for
multi-line values, ``%(name)s`` value interpolation with a ``DEFAULT`` section
fallback, and ``@include path`` lines that splice another file in verbatim.

Later assignments to the same (section, key) overwrite earlier ones; lookups
are case-sensitive throughout.
"""

import os
import re
import sys

from .errors import DefinitionError, InterpolationError

MAX_INTERPOLATION_DEPTH = 10
MAX_INCLUDE_DEPTH = 32
DEFAULT_SECTION = "DEFAULT"

_SECTION_RE = re.compile(r"\[(?P<header>[^]]+)\]\s*$")
_OPTION_RE = re.compile(r"(?P<key>[^:=\s][^:=]*?)\s*(?P<vi>[:=])\s*(?P<value>.*)$")
_REFERENCE_RE = re.compile(r"%\(([^()]*)\)s")

_MISSING = object()


class SearchPath:
    """Ordered directories probed when resolving relative paths.

    The order is fixed: current working directory, directory of the main
    definition file, directory of the executable, directory of the
    executable's symlink target (when the executable is a symlink). The first
    directory containing the file wins.
    """

    def __init__(self, directories):
        self.directories = []
        for d in directories:
            d = os.path.abspath(d)
            if d not in self.directories:
                self.directories.append(d)

    @classmethod
    def default(cls, main_file=None, executable=None):
        dirs = [os.getcwd()]
        if main_file:
            dirs.append(os.path.dirname(os.path.abspath(main_file)))
        exe = executable if executable is not None else sys.argv[0]
        if exe:
            dirs.append(os.path.dirname(os.path.abspath(exe)))
            real = os.path.realpath(exe)
            if real != os.path.abspath(exe):
                dirs.append(os.path.dirname(real))
        return cls(dirs)

    def __iter__(self):
        return iter(self.directories)

    def __repr__(self):
        return "SearchPath(%r)" % (self.directories,)


def resolve_path(path, search, output_dir=None):
    """Resolve ``path`` to an absolute path.

    ``~``/``~user`` prefixes are expanded. Absolute paths are returned
    unchanged. A bare file name is first looked for in ``output_dir`` when
    given (the behavior of the ``files`` directives); after that the search
    path directories are probed in order. Raises with the full probe list
    when the file exists nowhere.
    """
    expanded = os.path.expanduser(path)
    if os.path.isabs(expanded):
        return expanded
    probed = []
    if output_dir is not None and os.path.basename(path) == path:
        candidate = os.path.join(os.path.abspath(output_dir), path)
        if os.path.exists(candidate):
            return candidate
        probed.append(os.path.abspath(output_dir))
    for directory in search:
        candidate = os.path.join(directory, expanded)
        if os.path.exists(candidate):
            return candidate
        probed.append(directory)
    raise DefinitionError(
        "file %r not found; looked in: %s" % (path, ", ".join(probed) or "<nowhere>")
    )


class ScanDefinition:
    """Fully parsed directive tree: section -> key -> raw string value.

    Values are stored raw; ``get`` interpolates ``%(name)s`` references on
    read. ``source_paths`` lists the files given on the command line in
    order; the last one is the main file and determines output naming.
    """

    def __init__(self, sections, source_paths=()):
        self._sections = sections
        self.source_paths = list(source_paths)

    @property
    def main_path(self):
        return self.source_paths[-1] if self.source_paths else None

    def section_names(self):
        return [s for s in self._sections if s != DEFAULT_SECTION]

    def has_section(self, section):
        return section in self._sections

    def has_option(self, section, key):
        if key in self._sections.get(section, {}):
            return True
        return key in self._sections.get(DEFAULT_SECTION, {})

    def options(self, section):
        """Keys visible in ``section``, including DEFAULT fallbacks."""
        keys = dict.fromkeys(self._sections.get(DEFAULT_SECTION, {}))
        keys.update(dict.fromkeys(self._sections.get(section, {})))
        return list(keys)

    def raw(self, section, key, fallback=_MISSING):
        sect = self._sections.get(section, {})
        if key in sect:
            return sect[key]
        default = self._sections.get(DEFAULT_SECTION, {})
        if key in default:
            return default[key]
        if fallback is not _MISSING:
            return fallback
        raise DefinitionError("no directive %r in section [%s]" % (key, section))

    def get(self, section, key, fallback=_MISSING, raw=False):
        """Value of ``key`` in ``section`` with all references interpolated."""
        value = self.raw(section, key, fallback=fallback)
        if raw or value is fallback or value is None:
            return value
        return self._interpolate(section, key, value, 1)

    def items(self, section):
        return [(k, self.get(section, k)) for k in self.options(section)]

    def _interpolate(self, section, key, value, depth):
        if depth > MAX_INTERPOLATION_DEPTH:
            raise InterpolationError(
                "interpolation in [%s] %s exceeds depth %d (reference cycle?)"
                % (section, key, MAX_INTERPOLATION_DEPTH)
            )
        out = []
        i = 0
        n = len(value)
        while i < n:
            ch = value[i]
            if ch != "%":
                out.append(ch)
                i += 1
                continue
            if value.startswith("%%", i):
                out.append("%")
                i += 2
                continue
            match = _REFERENCE_RE.match(value, i)
            if not match:
                raise InterpolationError(
                    "invalid '%%' in [%s] %s at offset %d; write '%%%%' for a literal"
                    % (section, key, i)
                )
            name = match.group(1)
            ref = self.raw(section, name, fallback=None)
            if ref is None:
                raise InterpolationError(
                    "[%s] %s references unknown name %r" % (section, key, name)
                )
            out.append(self._interpolate(section, name, ref, depth + 1))
            i = match.end()
        return "".join(out)

    def sections_map(self, interpolated=True):
        """Plain ``{section: {key: value}}`` copy, e.g. for shipping to workers."""
        result = {}
        for section in self._sections:
            if interpolated:
                result[section] = {k: self.get(section, k) for k in self._sections[section]}
            else:
                result[section] = dict(self._sections[section])
        return result

    def serialize(self):
        """Render back to definition-file text (raw values, no comments)."""
        lines = []
        for section, entries in self._sections.items():
            lines.append("[%s]" % section)
            for key, value in entries.items():
                parts = value.split("\n")
                lines.append("%s = %s" % (key, parts[0]))
                lines.extend("\t" + cont for cont in parts[1:])
            lines.append("")
        return "\n".join(lines)


def _strip_inline_comment(value):
    # ';' starts a comment only when preceded by whitespace
    for i, ch in enumerate(value):
        if ch == ";" and i > 0 and value[i - 1].isspace():
            return value[:i]
    return value


def _include_lines(path, text, search, active, depth):
    """Yield (where, line) pairs with ``@include`` lines spliced in."""
    if depth > MAX_INCLUDE_DEPTH:
        raise DefinitionError("@include nesting deeper than %d levels" % MAX_INCLUDE_DEPTH)
    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.rstrip()
        if line.startswith("@include"):
            rest = line[len("@include"):]
            target = rest.strip()
            if not target or (rest and not rest[0].isspace()):
                raise DefinitionError("%s:%d: malformed @include line" % (path, lineno))
            resolved = os.path.realpath(resolve_path(target, search))
            if resolved in active:
                raise DefinitionError(
                    "%s:%d: @include cycle through %s" % (path, lineno, resolved)
                )
            try:
                with open(resolved, encoding="utf-8") as handle:
                    included = handle.read()
            except OSError as exc:
                raise DefinitionError(
                    "%s:%d: cannot read include file: %s" % (path, lineno, exc)
                ) from exc
            yield from _include_lines(
                resolved, included, search, active | {resolved}, depth + 1
            )
        else:
            yield ("%s:%d" % (path, lineno), line)


def parse_definition(sources, search=None, source_paths=None):
    """Parse definition file contents into a :class:`ScanDefinition`.

    ``sources`` is an ordered list of ``(path, text)`` pairs; multiple files
    concatenate into one logical document, read in sequence. ``search`` is
    used for resolving ``@include`` paths and defaults to a search path built
    from the last source file.
    """
    sources = list(sources)
    if not sources:
        raise DefinitionError("no scan definition input")
    if search is None:
        main = sources[-1][0]
        search = SearchPath.default(main if os.path.exists(main) else None)

    sections = {}
    cursect = None
    curkey = None
    for path, text in sources:
        active = frozenset(
            {os.path.realpath(path)} if os.path.exists(path) else set()
        )
        for where, line in _include_lines(path, text, search, active, 0):
            if not line.strip():
                continue
            if line[0] in "#;":
                continue
            if line[0].isspace():
                stripped = line.strip()
                if cursect is not None and curkey is not None:
                    cursect[curkey] = cursect[curkey] + "\n" + stripped
                elif stripped[0] in "#;":
                    continue
                else:
                    raise DefinitionError(
                        "%s: continuation line without a preceding key" % where
                    )
                continue
            if line.lstrip().startswith("["):
                match = _SECTION_RE.match(line)
                if not match:
                    raise DefinitionError("%s: malformed section header" % where)
                cursect = sections.setdefault(match.group("header"), {})
                curkey = None
                continue
            if cursect is None:
                raise DefinitionError("%s: key assignment before any [section]" % where)
            match = _OPTION_RE.match(line)
            if not match:
                raise DefinitionError("%s: malformed line %r" % (where, line))
            key = match.group("key").rstrip()
            value = _strip_inline_comment(match.group("value")).strip()
            cursect[key] = value
            curkey = key

    paths = source_paths if source_paths is not None else [p for p, _ in sources]
    return ScanDefinition(sections, paths)


def load_definition(paths, search=None):
    """Read and parse definition files from disk (last one is the main file)."""
    sources = []
    for path in paths:
        try:
            with open(path, encoding="utf-8") as handle:
                sources.append((os.path.abspath(path), handle.read()))
        except OSError as exc:
            raise DefinitionError("cannot read %s: %s" % (path, exc)) from exc
    if search is None and sources:
        search = SearchPath.default(sources[-1][0])
    return parse_definition(sources, search=search)
