"""Built-in point processors and the plugin protocol.

A ``point_processor`` directive names either one of the built-ins (by file
name, e.g. ``processors/SimpleProcessor.py``) or an executable implementing
the JSON-over-stdio plugin protocol (see :mod:`parascan.processors.plugin`).
"""

import os

from ..definition import resolve_path
from .base import ConfigView, PointProcessor
from .chain import ProcessorChain
from .plugin import PluginHandle, PluginProcessor
from .shell import CommandScript, parse_command_script, run_script, split_words
from .simple import SimpleProcessor, annotate_numbers, extract_numbers
from .slha import SLHAProcessor, SlhaDocument, parse_slha, render_document


class ExampleProcessor(PointProcessor):
    """Minimal processor demonstrating the structure; returns no data."""

    name = "ExampleProcessor"

    def __init__(self, config, search, definition_dir=None):
        self.greeting = config.get("ExampleProcessor", "greeting", "hello")

    def describe(self):
        return "ExampleProcessor (does nothing, greeting=%r)" % self.greeting

    def process(self, template_path, pars, vars, workdir, remember_store):
        return []


_BUILTINS = {
    "ExampleProcessor": ExampleProcessor,
    "SimpleProcessor": SimpleProcessor,
    "SLHAProcessor": SLHAProcessor,
    "ProcessorChain": ProcessorChain,
}


def processor_stem(path_or_name):
    return os.path.splitext(os.path.basename(path_or_name.strip()))[0]


def create_processor(path_or_name, config, search, definition_dir=None):
    """Instantiate the processor a ``point_processor`` directive names.

    Built-in names resolve by the file stem; anything else is treated as a
    plugin executable looked up through the search path.
    """
    stem = processor_stem(path_or_name)
    builtin = _BUILTINS.get(stem)
    if builtin is not None:
        return builtin(config, search, definition_dir)
    executable = resolve_path(path_or_name.strip(), search)
    return PluginProcessor(executable, config, search, definition_dir)


__all__ = [
    "ConfigView", "PointProcessor", "ExampleProcessor", "SimpleProcessor",
    "SLHAProcessor", "ProcessorChain", "PluginProcessor", "PluginHandle",
    "CommandScript", "parse_command_script", "run_script", "split_words",
    "extract_numbers", "annotate_numbers", "parse_slha", "SlhaDocument",
    "render_document", "create_processor", "processor_stem",
]
