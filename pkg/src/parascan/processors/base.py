"""Point processor protocol and configuration access."""

from ..definition import ScanDefinition
from ..errors import DefinitionError

DEFAULT_SECTION = "DEFAULT"

_MISSING = object()


class ConfigView:
    """Read access to definition sections for processors.

    Backed either by a :class:`ScanDefinition` or by a plain
    ``{section: {key: value}}`` mapping (the form shipped to workers).
    ``prefixes`` implements the processor-chain overlay: a lookup of
    ``[Section] key`` first tries ``[<prefix>Section] key`` for each prefix
    in order, then the unprefixed section.
    """

    def __init__(self, source, prefixes=()):
        self._definition = source if isinstance(source, ScanDefinition) else None
        self._mapping = None if self._definition is not None else dict(source)
        self._prefixes = tuple(prefixes)

    def _lookup(self, section, key):
        if self._definition is not None:
            if self._definition.has_option(section, key):
                return self._definition.get(section, key)
            return _MISSING
        if key in self._mapping.get(section, {}):
            return self._mapping[section][key]
        if key in self._mapping.get(DEFAULT_SECTION, {}):
            return self._mapping[DEFAULT_SECTION][key]
        return _MISSING

    def with_prefix(self, prefix):
        source = self._definition if self._definition is not None else self._mapping
        return ConfigView(source, (prefix,) + self._prefixes)

    def get(self, section, key, fallback=None):
        for prefix in self._prefixes:
            value = self._lookup(prefix + section, key)
            if value is not _MISSING:
                return value
        value = self._lookup(section, key)
        return fallback if value is _MISSING else value

    def get_float(self, section, key, fallback=None):
        value = self.get(section, key)
        if value is None:
            return fallback
        try:
            return float(value)
        except ValueError:
            raise DefinitionError(
                "[%s] %s must be a number, got %r" % (section, key, value)
            ) from None

    def require(self, section, key):
        value = self.get(section, key)
        if value is None:
            raise DefinitionError("missing directive %r in section [%s]" % (key, section))
        return value

    def _section_names(self):
        if self._definition is not None:
            return list(self._definition.section_names())
        return [s for s in self._mapping if s != DEFAULT_SECTION]

    def section_items(self, section):
        """Merged key/value view of one section with prefixes applied."""
        merged = {}
        if self._definition is not None:
            if self._definition.has_section(section):
                merged.update(
                    {k: self._definition.get(section, k)
                     for k in self._definition.options(section)}
                )
        else:
            merged.update(self._mapping.get(DEFAULT_SECTION, {}))
            merged.update(self._mapping.get(section, {}))
        for prefix in reversed(self._prefixes):
            prefixed = prefix + section
            if self._definition is not None:
                if self._definition.has_section(prefixed):
                    merged.update(
                        {k: self._definition.get(prefixed, k)
                         for k in self._definition.options(prefixed)}
                    )
            else:
                merged.update(self._mapping.get(prefixed, {}))
        return merged

    def snapshot(self):
        """Plain mapping of every section, e.g. for shipping to a plugin."""
        return {name: self.section_items(name) for name in self._section_names()}


class PointProcessor:
    """Turns a substituted template file (plus pars/vars) into data values.

    One instance per worker slot; instances are never shared between slots.
    """

    name = "processor"

    def process(self, template_path, pars, vars, workdir, remember_store):
        """Return the list of derived data values for one point.

        Raises :class:`~parascan.errors.ProcessorError` for point-level
        failures (bad exit code, timeout, unparseable output).
        """
        raise NotImplementedError

    def describe(self):
        """One-line summary of the derived configuration for the overview."""
        return self.name

    def close(self):
        pass
