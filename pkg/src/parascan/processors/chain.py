"""ProcessorChain: run several processors per point, concatenate their data.

Each chained processor can be configured individually by prefixing its
section with ``ProcessorChain:<i>:``; the prefixed section is merged over
the unprefixed one.
"""

from ..errors import DefinitionError
from .base import PointProcessor


class ProcessorChain(PointProcessor):
    name = "ProcessorChain"
    section = "ProcessorChain"

    def __init__(self, config, search, definition_dir=None):
        from . import create_processor

        spec = config.get(self.section, "point_processors")
        if spec is None:
            raise DefinitionError("[ProcessorChain] needs a 'point_processors' list")
        entries = spec.strip().split(":")
        if not entries or any(not entry for entry in entries):
            raise DefinitionError("[ProcessorChain] point_processors list is malformed")
        self.processors = []
        for index, entry in enumerate(entries):
            view = config.with_prefix("ProcessorChain:%d:" % index)
            self.processors.append(
                create_processor(entry, view, search, definition_dir)
            )

    def describe(self):
        return "ProcessorChain: [%s]" % "; ".join(p.describe() for p in self.processors)

    def process(self, template_path, pars, vars, workdir, remember_store):
        data = []
        for processor in self.processors:
            data.extend(
                processor.process(template_path, pars, vars, workdir, remember_store)
            )
        return data

    def close(self):
        for processor in self.processors:
            processor.close()
