"""Single-point evaluation: variables -> template -> processor -> bounds.

Each point runs through the phases in that order. Variable or bound failures
exclude the point; processor failures mark it as errored and skip the bound
checks. The ``remember`` store lives for exactly one point evaluation,
spanning variable formulas, processor data formulas and bounds.
"""

import keyword
import os
import re
import shutil
import tempfile

from .errors import EvalError, DefinitionError, ProcessorError, ScanAbort, TemplateError
from .formulas import EvalContext, NamedValues, evaluate
from .templates import substitute

VALID = "valid"
EXCLUDED = "excluded"
ERROR = "error"

_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*$")


def validate_names(names, what):
    """Enforce the naming rules for parameter/variable/data/file columns."""
    seen = set()
    for name in names:
        if not name:
            raise DefinitionError("empty name in %s" % what)
        if not _NAME_RE.match(name):
            raise DefinitionError(
                "invalid name %r in %s (letters, digits and underscore; "
                "must not start with a digit or underscore)" % (name, what)
            )
        if keyword.iskeyword(name):
            raise DefinitionError("reserved word %r cannot be used in %s" % (name, what))
        if name in seen:
            raise DefinitionError("duplicate name %r in %s" % (name, what))
        seen.add(name)
    return list(names)


def parse_name_list(text):
    if text is None or not text.strip():
        return []
    return [part.strip() for part in text.split(",")]


def as_value_list(result):
    """Normalize a formula result to a list of values (scalars wrap as [x])."""
    if isinstance(result, (list, tuple)):
        return list(result)
    if isinstance(result, range):
        return list(result)
    return [result]


class SpaceSpec:
    """Static description of the point pipeline for one scan."""

    def __init__(self, par_names, var_names=(), data_names=(), var_exprs=(),
                 bound_exprs=(), bound_count=0, out_columns=None):
        self.par_names = validate_names(par_names, "par_names")
        self.var_names = validate_names(var_names, "var_names")
        self.data_names = validate_names(data_names, "data_names")
        self.var_exprs = list(var_exprs)
        if len(self.var_exprs) != len(self.var_names):
            raise DefinitionError(
                "%d var formulas for %d var names"
                % (len(self.var_exprs), len(self.var_names))
            )
        self.bound_exprs = list(bound_exprs)
        self.bound_count = bound_count
        if len(self.bound_exprs) < bound_count:
            raise DefinitionError(
                "bound_count is %d but only %d bounds are defined"
                % (bound_count, len(self.bound_exprs))
            )
        self.out_columns = out_columns


class PointRecord:
    """One evaluated point. ``vars``/``data`` are None for failed phases."""

    __slots__ = ("pars", "vars", "data", "status", "reason", "annotations")

    def __init__(self, pars, vars=None, data=None, status=VALID, reason=None,
                 annotations=None):
        self.pars = pars
        self.vars = vars
        self.data = data
        self.status = status
        self.reason = reason
        self.annotations = list(annotations) if annotations else []

    @property
    def is_valid(self):
        return self.status == VALID

    def __repr__(self):
        if self.is_valid:
            return "PointRecord(%r, vars=%r, data=%r)" % (self.pars, self.vars, self.data)
        return "PointRecord(%r, %s: %s)" % (self.pars, self.status, self.reason)


def compute_vars(pars, spec, remember_store=None):
    """Evaluate variable formulas in declaration order.

    Returns ``(values, None)`` on success or ``(None, reason)`` when a
    formula failed; each formula sees the parameters and all previously
    computed variables.
    """
    store = {} if remember_store is None else remember_store
    values = []
    for name, expr in zip(spec.var_names, spec.var_exprs):
        ctx = EvalContext(
            names={
                "pars": pars,
                "vars": NamedValues(spec.var_names[:len(values)], values),
            },
            remember_store=store,
        )
        try:
            values.append(evaluate(expr, ctx))
        except EvalError as exc:
            return None, "var_%s: %s" % (name, exc)
    return NamedValues(spec.var_names, values), None


def record_env(record, file_row=None):
    """Formula namespace over a finished record (pars/vars/data [+file])."""
    names = {"pars": record.pars}
    if record.vars is not None:
        names["vars"] = record.vars
    if record.data is not None:
        names["data"] = record.data
    if file_row is not None:
        names["file"] = file_row
    return names


def evaluate_over_record(expr, record, file_row=None):
    ctx = EvalContext(names=record_env(record, file_row))
    return evaluate(expr, ctx)


def project_out_columns(record, spec, file_row=None):
    """Columns written to the data file for one valid record.

    Without ``out_columns`` this is pars ++ vars ++ data (file values are
    never included by default). A failing out_columns formula aborts the
    scan; it is not a bound.
    """
    if not record.is_valid:
        raise ValueError("only valid records have output columns")
    if spec.out_columns is None:
        return list(record.pars) + list(record.vars) + list(record.data)
    ctx = EvalContext(names=record_env(record, file_row))
    try:
        result = evaluate(spec.out_columns, ctx)
    except EvalError as exc:
        raise ScanAbort("out_columns formula failed: %s" % exc) from None
    return as_value_list(result)


class PointEvaluator:
    """Runs the full pipeline for one point at a time.

    One instance per worker slot: the processor instance it owns is not
    shared. Each evaluation gets a fresh temporary working directory (named
    after the scan and point id) that is removed afterwards unless
    ``keep_workdirs`` is set.
    """

    def __init__(self, spec, template_doc=None, processor=None, *,
                 scan_name="scan", template_name="template.in",
                 keep_workdirs=False, workdir_root=None):
        self.spec = spec
        self.template_doc = template_doc
        self.processor = processor
        self.scan_name = scan_name
        self.template_name = template_name
        self.keep_workdirs = keep_workdirs
        self.workdir_root = workdir_root

    def close(self):
        if self.processor is not None:
            self.processor.close()

    def evaluate(self, point_id, pars_values):
        pars = NamedValues(self.spec.par_names, [float(v) for v in pars_values])
        store = {}
        vars_values, reason = compute_vars(pars, self.spec, store)
        if vars_values is None:
            return PointRecord(pars, status=EXCLUDED, reason=reason)

        workdir = None
        try:
            template_path = None
            if self.template_doc is not None or self.processor is not None:
                workdir = tempfile.mkdtemp(
                    prefix="%s.%s." % (self.scan_name, point_id),
                    dir=self.workdir_root,
                )
            if self.template_doc is not None:
                try:
                    text = substitute(self.template_doc, pars, vars_values)
                except TemplateError as exc:
                    return PointRecord(pars, vars_values, status=ERROR, reason=str(exc))
                template_path = os.path.join(workdir, self.template_name)
                with open(template_path, "w", encoding="utf-8") as handle:
                    handle.write(text)

            data_list = []
            if self.processor is not None:
                try:
                    data_list = self.processor.process(
                        template_path, pars, vars_values, workdir, store
                    )
                except ProcessorError as exc:
                    return PointRecord(pars, vars_values, status=ERROR, reason=str(exc))
            if len(data_list) < len(self.spec.data_names):
                return PointRecord(
                    pars, vars_values, status=ERROR,
                    reason="short data: %d values for %d data names"
                    % (len(data_list), len(self.spec.data_names)),
                )
            data = NamedValues(self.spec.data_names, data_list)

            for i in range(self.spec.bound_count):
                ctx = EvalContext(
                    names={"pars": pars, "vars": vars_values, "data": data},
                    remember_store=store,
                )
                try:
                    satisfied = evaluate(self.spec.bound_exprs[i], ctx)
                except EvalError as exc:
                    return PointRecord(pars, vars_values, status=EXCLUDED, reason=str(exc))
                if not satisfied:
                    return PointRecord(pars, vars_values, status=EXCLUDED,
                                       reason="bound %d" % i)
            return PointRecord(pars, vars_values, data)
        finally:
            if workdir is not None and not self.keep_workdirs:
                shutil.rmtree(workdir, ignore_errors=True)
