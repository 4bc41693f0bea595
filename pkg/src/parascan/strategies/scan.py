"""Plain scan: process a fixed point set from a grid, random draws or files."""

import itertools
import logging
import time

from ..errors import DefinitionError, EvalError, RangeError, ScanAbort
from ..formulas import EvalContext, NamedValues, evaluate
from ..pipeline import project_out_columns
from ..storage import SpeedTracker, iter_tsv_rows

log = logging.getLogger("parascan.scan")


def grid_points(ranges):
    """Cartesian product in row-major order (last parameter fastest)."""
    try:
        axes = [spec.expand() for spec in ranges]
    except RangeError as exc:
        raise DefinitionError("grid mode needs finite ranges: %s" % exc) from None
    for values in itertools.product(*axes):
        yield values, None


def grid_size(ranges):
    size = 1
    for spec in ranges:
        size *= len(spec.expand())
    return size


def scatter_points(ranges, count, rng):
    """``count`` independent draws from the parameter distributions."""
    for _ in range(count):
        yield tuple(spec.sample(rng) for spec in ranges), None


def file_points(paths, file_columns, par_exprs):
    """Points listed in TSV files, mapped through the par_NAME formulas.

    Rows whose first column is ``E`` (excluded points) are skipped. Named
    file columns are a prefix of the row; extra columns stay reachable by
    index. Each par formula sees only the ``file`` values.
    """
    for path in paths:
        for row in iter_tsv_rows(path, skip_excluded=True):
            if len(row) < len(file_columns):
                raise DefinitionError(
                    "%s: row has %d columns but file_columns names %d"
                    % (path, len(row), len(file_columns))
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise DefinitionError("%s: non-numeric row: %s" % (path, exc)) from None
            file_row = NamedValues(file_columns, values)
            ctx = EvalContext(names={"file": file_row})
            try:
                pars = tuple(evaluate(expr, ctx) for expr in par_exprs)
            except EvalError as exc:
                raise ScanAbort("file-mode parameter formula failed: %s" % exc) from None
            yield pars, file_row


def _point_stream(session):
    """Returns (stream of (pars, file_row), total count or None)."""
    if session.space_mode == "grid":
        return grid_points(session.ranges), grid_size(session.ranges)
    if session.space_mode == "scatter":
        if session.point_count is None:
            raise DefinitionError("scatter mode needs [parameter_space] point_count")
        return (
            scatter_points(session.ranges, session.point_count, session.rng),
            session.point_count,
        )
    paths = session.resolve_files()
    if not paths:
        raise DefinitionError("file mode needs [parameter_space] files")
    points = list(file_points(paths, session.file_columns, session.file_par_exprs))
    return iter(points), len(points)


def run_scan(session, progress=None):
    """Drive a full scan; resumable, exactly-once persistence per point."""
    outputs = session.outputs
    fingerprint = session.space_fingerprint()
    done = outputs.load_scan_resume(fingerprint, force=session.force_resume)
    stream, total = _point_stream(session)
    if done:
        log.info("resuming after %d already persisted points", done)
        stream = itertools.islice(stream, done, None)

    dispatcher = session.dispatcher
    unit_length = session.unit_length
    if unit_length is None:
        unit_length = 100 * dispatcher.total_slots
    speed = SpeedTracker(outputs)

    while True:
        batch = list(itertools.islice(stream, unit_length))
        if not batch:
            break
        started = time.monotonic()
        items = [
            ("%d" % (done + offset), pars)
            for offset, (pars, _) in enumerate(batch)
        ]
        records = dispatcher.run_batch(items)
        for (pars, file_row), record in zip(batch, records):
            if record.is_valid:
                outputs.write_valid(project_out_columns(record, session.space, file_row))
            else:
                outputs.write_excluded(record)
        done += len(batch)
        outputs.save_scan_resume(done, fingerprint)
        speed.update(len(batch), time.monotonic() - started)
        line = speed.status_line(done, total)
        log.info("%s", line)
        if progress is not None:
            progress(done, total, line)
    log.info("scan complete: %d points", done)
    return 0
