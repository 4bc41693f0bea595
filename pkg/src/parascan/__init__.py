"""parascan: parallel parameter-space scanning.

A declarative scan definition file names parameters, their ranges, derived
variables, a template file and a point processor; parascan evaluates the
points of the parameter space through the processor, in parallel locally and
across networked workers, and writes plain TSV result files.

Exploration strategies: exhaustive/random/file-driven scan, Markov chain
Monte Carlo sampling, differential evolution, and a swarm-style grid
explorer.
"""

__version__ = "1.0.0"

from .definition import ScanDefinition, SearchPath, load_definition, parse_definition, resolve_path
from .errors import (
    DefinitionError, EvalError, FormulaSyntaxError, InterpolationError,
    NetworkError, ParascanError, ProcessorError, RangeError, ResumeError,
    ScanAbort, TemplateError,
)
from .formulas import EvalContext, Expr, NamedValues, builtin_registry, compile_formula, evaluate
from .pipeline import (
    ERROR, EXCLUDED, VALID, PointEvaluator, PointRecord, SpaceSpec,
    compute_vars, project_out_columns,
)
from .ranges import FiniteList, Interval, Normal, RangeSpec, parse_range
from .templates import TemplateDoc, parse_template, substitute

__all__ = [
    "__version__",
    "ScanDefinition", "SearchPath", "load_definition", "parse_definition",
    "resolve_path",
    "ParascanError", "DefinitionError", "InterpolationError", "RangeError",
    "FormulaSyntaxError", "EvalError", "TemplateError", "ProcessorError",
    "NetworkError", "ResumeError", "ScanAbort",
    "Expr", "EvalContext", "NamedValues", "compile_formula", "evaluate",
    "builtin_registry",
    "RangeSpec", "FiniteList", "Interval", "Normal", "parse_range",
    "TemplateDoc", "parse_template", "substitute",
    "SpaceSpec", "PointRecord", "PointEvaluator", "compute_vars",
    "project_out_columns", "VALID", "EXCLUDED", "ERROR",
]
