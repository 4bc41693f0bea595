"""Resolve a parsed scan definition into runnable components.

A :class:`Session` owns the interpreted setup/parameter_space/algorithm
directives, the output file set, the local slot pool and (when workers are
configured) the dispatcher. Strategy drivers in :mod:`parascan.strategies`
consume it.
"""

import logging
import os
import random

from .definition import SearchPath, resolve_path
from .errors import DefinitionError, EvalError, ScanAbort
from .execution import LocalPool
from .formulas import compile_formula
from .network import Dispatcher, parse_workers
from .pipeline import (
    PointEvaluator, SpaceSpec, evaluate_over_record, parse_name_list,
)
from .processors import ConfigView, create_processor
from .storage import OutputSet, space_hash
from .templates import parse_template

log = logging.getLogger("parascan.session")

SETUP = "setup"
SPACE = "parameter_space"
ALGORITHM = "algorithm"

MODES = ("scan", "mcmc", "optimize", "explorer", "worker", "test")
SPACE_MODES = ("grid", "scatter", "file")

DEFAULT_PORT = 31415


def _nonempty(definition, section, key):
    """Directive value, with a present-but-empty value counting as absent."""
    value = definition.get(section, key, fallback=None)
    if value is None or not value.strip():
        return None
    return value.strip()


def _get_int(definition, section, key, fallback=None):
    value = _nonempty(definition, section, key)
    if value is None:
        return fallback
    try:
        return int(value)
    except ValueError:
        raise DefinitionError(
            "[%s] %s must be an integer, got %r" % (section, key, value)
        ) from None


def _get_float(definition, section, key, fallback=None):
    value = _nonempty(definition, section, key)
    if value is None:
        return fallback
    try:
        return float(value)
    except ValueError:
        raise DefinitionError(
            "[%s] %s must be a number, got %r" % (section, key, value)
        ) from None


class Session:
    def __init__(self, definition, *, mode=None, output_dir=".", port=None,
                 debug=False, randomseed=None, force_resume=False,
                 search=None, slots=None):
        from .ranges import parse_range

        self.definition = definition
        self.debug = debug
        self.randomseed = randomseed
        self.force_resume = force_resume
        self.output_dir = os.path.abspath(output_dir)
        main = definition.main_path
        self.search = search or SearchPath.default(main)
        self.definition_dir = os.path.dirname(main) if main else os.getcwd()
        self.scan_name = os.path.basename(main) if main else "scan"

        helper_modules = _nonempty(definition, SETUP, "helper_modules")
        if helper_modules:
            raise DefinitionError(
                "helper_modules is not supported; wrap the helper code in an "
                "external plugin processor instead (point_processor can name "
                "any executable speaking the JSON-over-stdio protocol)"
            )

        self.mode = (mode or _nonempty(definition, SETUP, "mode") or "").strip()
        if not self.mode:
            raise DefinitionError(
                "no mode configured; set [setup] mode or pass --mode"
            )
        if self.mode not in MODES:
            raise DefinitionError(
                "unknown mode %r (one of %s)" % (self.mode, ", ".join(MODES))
            )

        self.slots = slots if slots is not None else _get_int(
            definition, SETUP, "concurrent_processors", os.cpu_count() or 1
        )
        if self.slots < 1:
            raise DefinitionError("concurrent_processors must be positive")
        self.unit_length = _get_int(definition, SETUP, "unit_length")

        self.workers = parse_workers(_nonempty(definition, SETUP, "workers") or "")
        self.authkey = _nonempty(definition, SETUP, "authkey")
        self.port = port if port is not None else _get_int(
            definition, SETUP, "port", DEFAULT_PORT
        )
        if not 1 <= self.port <= 65535:
            raise DefinitionError("port must be between 1 and 65535")
        if self.mode == "mcmc" and self.workers:
            raise DefinitionError(
                "mcmc mode does not distribute over workers; start separate "
                "mcmc instances per machine instead"
            )

        # template
        self.template_doc = None
        self.template_name = "template.in"
        self.template_text = None
        template = _nonempty(definition, SETUP, "template")
        if template:
            path = resolve_path(template, self.search)
            with open(path, encoding="utf-8") as handle:
                self.template_text = handle.read()
            self.template_doc = parse_template(self.template_text)
            self.template_name = os.path.basename(path)

        self.processor_ref = _nonempty(definition, SETUP, "point_processor")

        # parameter space
        self.space_mode = (_nonempty(definition, SPACE, "mode") or "grid").strip()
        if self.space_mode not in SPACE_MODES:
            raise DefinitionError(
                "unknown parameter_space mode %r (one of %s)"
                % (self.space_mode, ", ".join(SPACE_MODES))
            )
        par_names = parse_name_list(_nonempty(definition, SPACE, "par_names") or "")
        var_names = parse_name_list(_nonempty(definition, SPACE, "var_names") or "")
        data_names = parse_name_list(_nonempty(definition, SPACE, "data_names") or "")
        var_exprs = []
        for name in var_names:
            formula = definition.get(SPACE, "var_%s" % name, fallback=None)
            if formula is None:
                raise DefinitionError("missing var_%s directive" % name)
            var_exprs.append(compile_formula(formula))
        bound_count = _get_int(definition, SPACE, "bound_count", 0)
        bound_exprs = []
        for i in range(bound_count):
            formula = definition.get(SPACE, "bound_%d" % i, fallback=None)
            if formula is None:
                raise DefinitionError(
                    "bound_count is %d but bound_%d is missing" % (bound_count, i)
                )
            bound_exprs.append(compile_formula(formula))
        out_columns = _nonempty(definition, ALGORITHM, "out_columns")
        self.space = SpaceSpec(
            par_names, var_names, data_names, var_exprs, bound_exprs,
            bound_count,
            compile_formula(out_columns) if out_columns else None,
        )

        if self.mode != "worker" and not par_names:
            raise DefinitionError("par_names must name at least one parameter")

        # ranges (grid/scatter/mcmc/optimize/explorer) or file-mode formulas
        self.ranges = []
        self.file_par_exprs = []
        if self.mode != "worker":
            if self.space_mode == "file" and self.mode in ("scan", "test"):
                for name in par_names:
                    formula = definition.get(SPACE, "par_%s" % name, fallback=None)
                    if formula is None:
                        raise DefinitionError("missing par_%s directive" % name)
                    self.file_par_exprs.append(compile_formula(formula))
            else:
                for name in par_names:
                    text = definition.get(SPACE, "par_%s" % name, fallback=None)
                    if text is None:
                        raise DefinitionError("missing par_%s directive" % name)
                    self.ranges.append(parse_range(text))

        self.file_columns = parse_name_list(
            _nonempty(definition, SPACE, "file_columns") or ""
        )
        self.point_count = _get_int(definition, SPACE, "point_count")
        files = _nonempty(definition, SPACE, "files")
        self.files = [part for part in files.split(":") if part] if files else []

        likelihood = _nonempty(definition, ALGORITHM, "likelihood")
        self.likelihood_expr = compile_formula(likelihood) if likelihood else None

        self.outputs = OutputSet(self.output_dir, self.scan_name)
        self.rng = random.Random(randomseed)
        self._pool = None
        self._dispatcher = None
        self._described = False

    # -- derived values -----------------------------------------------------

    @property
    def dimension_count(self):
        """Number of parameters with at least two possible values."""
        return sum(1 for r in self.ranges if r.is_multi_valued)

    def space_fingerprint(self):
        items = []
        if self.definition.has_section(SPACE):
            items = [
                (key, self.definition.get(SPACE, key, raw=True))
                for key in self.definition.options(SPACE)
            ]
        return space_hash(items)

    def resolve_files(self):
        return [
            resolve_path(name, self.search, output_dir=self.output_dir)
            for name in self.files
        ]

    def likelihood_of(self, record, file_row=None):
        """Evaluate the likelihood/fitness formula; failures stop the scan."""
        try:
            return evaluate_over_record(self.likelihood_expr, record, file_row)
        except EvalError as exc:
            raise ScanAbort("likelihood formula failed: %s" % exc) from None

    # -- evaluation machinery -------------------------------------------------

    def create_processor(self):
        if self.processor_ref is None:
            return None
        processor = create_processor(
            self.processor_ref, ConfigView(self.definition), self.search,
            self.definition_dir,
        )
        if not self._described:
            self._described = True
            log.info("point processor: %s", processor.describe())
        return processor

    def evaluator_factory(self):
        def factory():
            return PointEvaluator(
                self.space, self.template_doc, self.create_processor(),
                scan_name=self.scan_name, template_name=self.template_name,
                keep_workdirs=self.debug,
            )
        return factory

    def new_evaluator(self):
        return self.evaluator_factory()()

    @property
    def pool(self):
        if self._pool is None:
            self._pool = LocalPool(self.slots)
        return self._pool

    def init_payload(self):
        return {
            "scan": self.scan_name,
            "space": {
                "par_names": self.space.par_names,
                "var_names": self.space.var_names,
                "data_names": self.space.data_names,
                "var_formulas": [e.source for e in self.space.var_exprs],
                "bound_count": self.space.bound_count,
                "bound_formulas": [e.source for e in self.space.bound_exprs],
            },
            "template": self.template_text,
            "template_name": self.template_name,
            "processor": self.processor_ref,
            "config": ConfigView(self.definition).snapshot(),
        }

    @property
    def dispatcher(self):
        if self._dispatcher is None:
            self._dispatcher = Dispatcher(
                self.pool, self.evaluator_factory(), self.space,
                workers=self.workers, authkey=self.authkey,
                init_payload=self.init_payload(),
                needs_template=self.template_doc is not None,
            )
        return self._dispatcher

    def close(self):
        if self._dispatcher is not None:
            self._dispatcher.close()
            self._dispatcher = None
        if self._pool is not None:
            self._pool.close()
            self._pool = None
        self.outputs.close()

    # -- configuration overview ----------------------------------------------

    def overview(self):
        lines = [
            "scan definition : %s" % (self.definition.main_path or "<inline>"),
            "mode            : %s" % self.mode,
            "output files    : %s.*" % self.outputs.base,
            "local slots     : %d" % self.slots,
        ]
        if self.workers:
            lines.append("workers         : %s" % ", ".join(str(w) for w in self.workers))
        if self.template_doc is not None:
            lines.append("template        : %s" % self.template_name)
        if self.processor_ref:
            lines.append("point processor : %s" % self.processor_ref)
        lines.append("parameters      : %s" % ", ".join(self.space.par_names))
        if self.space_mode == "file":
            lines.append("point source    : file (%s)" % ":".join(self.files))
        else:
            for name, spec in zip(self.space.par_names, self.ranges):
                lines.append("  par_%-10s: %r" % (name, spec))
        if self.space.var_names:
            lines.append("variables       : %s" % ", ".join(self.space.var_names))
        if self.space.data_names:
            lines.append("data values     : %s" % ", ".join(self.space.data_names))
        if self.space.bound_count:
            lines.append("bounds          : %d" % self.space.bound_count)
        if self.likelihood_expr is not None:
            lines.append("likelihood      : %s" % self.likelihood_expr.source)
        return "\n".join(lines)


def build_worker_context(search, *, keep_workdirs=False):
    """Factory builder for worker connections.

    Given one connection's init payload, returns an evaluator factory that
    reconstructs the space spec, template and processor from the payload;
    workers need no shared filesystem beyond their own binaries.
    """

    def build(payload):
        space_payload = payload.get("space") or {}
        spec = SpaceSpec(
            space_payload.get("par_names") or [],
            space_payload.get("var_names") or [],
            space_payload.get("data_names") or [],
            [compile_formula(s) for s in space_payload.get("var_formulas") or []],
            [compile_formula(s) for s in space_payload.get("bound_formulas") or []],
            int(space_payload.get("bound_count") or 0),
        )
        template_text = payload.get("template")
        template_doc = parse_template(template_text) if template_text else None
        processor_ref = payload.get("processor")
        config = ConfigView(payload.get("config") or {})
        scan_name = payload.get("scan") or "remote"

        def factory():
            processor = None
            if processor_ref:
                processor = create_processor(processor_ref, config, search)
            return PointEvaluator(
                spec, template_doc, processor,
                scan_name=scan_name,
                template_name=payload.get("template_name") or "template.in",
                keep_workdirs=keep_workdirs,
            )

        return factory

    return build
