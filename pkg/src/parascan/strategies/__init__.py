"""Point-selection strategies: scan, mcmc, optimize, explorer."""

from ..errors import DefinitionError
from .explorer import neighbors, run_explorer
from .mcmc import run_mcmc
from .optimize import run_optimize
from .scan import file_points, grid_points, run_scan, scatter_points

_DRIVERS = {
    "scan": run_scan,
    "mcmc": run_mcmc,
    "optimize": run_optimize,
    "explorer": run_explorer,
}


def run(session, progress=None):
    driver = _DRIVERS.get(session.mode)
    if driver is None:
        raise DefinitionError("mode %r has no scan driver" % session.mode)
    return driver(session, progress=progress)


__all__ = [
    "run", "run_scan", "run_mcmc", "run_optimize", "run_explorer",
    "grid_points", "scatter_points", "file_points", "neighbors",
]
