"""Swarm-style exploration of a finite parameter grid.

Points are processed in waves emanating from the most promising known
points, never twice. With projections defined, the algorithm cycles through
three states:

  state 1  per projection, the point with maximal z in each (x, y) plane
           cell is refined: its grid neighbors, rasterized line segments
           between maxima of adjacent plane cells (plus their extensions)
           and symmetry images are queued.
  state 2  like state 1 but maxima are taken over boundary points only
           (points with at least one uncomputed neighbor), and only their
           plain neighbors are queued.
  state 3  projections are ignored: boundary points are binned by
           likelihood and the neighbors of (at most unit_length of) the
           points in the highest non-empty bin are queued.

An empty queue advances the state; any newly processed points reset it to
state 1 while projections exist. Without projections the algorithm starts
and stays in state 3. Points below ``min_likelihood`` are saved but treated
as invalid for exploration.
"""

import bisect
import logging
import re

from ..errors import DefinitionError, EvalError, ScanAbort
from ..formulas import EvalContext, NamedValues, compile_formula, evaluate
from ..pipeline import PointRecord, project_out_columns, record_env
from ..session import ALGORITHM, SPACE, _get_float, _get_int, _nonempty
from ..storage import BOUNDARY, WORK, iter_tsv_rows

log = logging.getLogger("parascan.explorer")

ORBIT8 = tuple(
    (dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)
)
_QUOTED = re.compile(r"""^(['"])(.*)\1$""")


def neighbors(idx, lengths):
    """Grid index tuples differing by one step in exactly one coordinate."""
    result = []
    for k, (i, n) in enumerate(zip(idx, lengths)):
        if i > 0:
            result.append(idx[:k] + (i - 1,) + idx[k + 1:])
        if i + 1 < n:
            result.append(idx[:k] + (i + 1,) + idx[k + 1:])
    return result


def raster_line(a, b, extend=False):
    """Integer raster of the segment a..b (or of its extension beyond b).

    The extension covers the same index length again, continuing past b.
    """
    deltas = [bk - ak for ak, bk in zip(a, b)]
    steps = max((abs(d) for d in deltas), default=0)
    if steps == 0:
        return [] if extend else [a]
    span = range(steps + 1, 2 * steps + 1) if extend else range(steps + 1)
    points = []
    for t in span:
        points.append(tuple(
            round(ak + t * d / steps) for ak, d in zip(a, deltas)
        ))
    return points


def split_top_level(text, separator=","):
    """Split on ``separator`` outside parentheses, brackets and strings."""
    parts = []
    depth = 0
    quote = None
    start = 0
    for i, ch in enumerate(text):
        if quote is not None:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == separator and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts


class GridSpace:
    """The finite grid: axis values, index <-> value mapping, snapping."""

    def __init__(self, ranges):
        self.axes = []
        for spec in ranges:
            if not spec.is_expandable:
                raise DefinitionError(
                    "explorer mode needs a finite grid; %r is continuous" % spec
                )
            self.axes.append(spec.expand())
        self.lengths = tuple(len(axis) for axis in self.axes)
        self._sorted = [sorted(axis) for axis in self.axes]
        self._order = [
            [i for _, i in sorted((v, i) for i, v in enumerate(axis))]
            for axis in self.axes
        ]

    @property
    def size(self):
        size = 1
        for n in self.lengths:
            size *= n
        return size

    def idx_to_pars(self, idx):
        return tuple(axis[i] for axis, i in zip(self.axes, idx))

    def snap_axis(self, k, value):
        """Index of the axis value matching ``value`` within tolerance."""
        axis = self._sorted[k]
        pos = bisect.bisect_left(axis, value)
        best = None
        for candidate in (pos - 1, pos):
            if 0 <= candidate < len(axis):
                if best is None or abs(axis[candidate] - value) < abs(axis[best] - value):
                    best = candidate
        if best is None:
            return None
        nearest = axis[best]
        tolerance = max(1e-9 * max(abs(nearest), abs(value)), 1e-12)
        if abs(nearest - value) > tolerance:
            return None
        return self._order[k][best]

    def snap(self, values):
        if len(values) != len(self.axes):
            return None
        idx = []
        for k, value in enumerate(values):
            i = self.snap_axis(k, value)
            if i is None:
                return None
            idx.append(i)
        return tuple(idx)

    def neighbors(self, idx):
        return neighbors(idx, self.lengths)


class Projection:
    """One (x, y, z) projection with per-cell maximum tracking."""

    def __init__(self, index, xy_expr=None, x_expr=None, y_expr=None,
                 z_expr=None, filter_expr=None, extrapolate=True):
        self.index = index
        self.xy_expr = xy_expr
        self.x_expr = x_expr
        self.y_expr = y_expr
        self.z_expr = z_expr
        self.filter_expr = filter_expr
        self.extrapolate = extrapolate

    def coordinates(self, record, likelihood):
        """(x, y, z) for one record, or None when the filter rejects it."""
        ctx = EvalContext(names=record_env(record))
        if self.filter_expr is not None:
            try:
                if not evaluate(self.filter_expr, ctx):
                    return None
            except EvalError:
                return None  # filter behaves like a bound
        try:
            if self.xy_expr is not None:
                xy = evaluate(self.xy_expr, ctx)
                if not isinstance(xy, (tuple, list)) or len(xy) != 2:
                    raise ScanAbort(
                        "projection_%d must produce two values" % self.index
                    )
                x, y = xy
            else:
                x = evaluate(self.x_expr, ctx)
                y = evaluate(self.y_expr, ctx)
            z = likelihood if self.z_expr is None else evaluate(self.z_expr, ctx)
        except EvalError as exc:
            raise ScanAbort("projection_%d failed: %s" % (self.index, exc)) from None
        return x, y, z


def parse_symmetry(text, par_names):
    """Rules ``selector: formula`` into [(parameter index, Expr), ...]."""
    rules = []
    for part in split_top_level(text):
        part = part.strip()
        if not part:
            continue
        selector, sep, formula = part.partition(":")
        if not sep:
            raise DefinitionError("malformed symmetry rule %r" % part)
        selector = selector.strip()
        quoted = _QUOTED.match(selector)
        if quoted:
            name = quoted.group(2)
            if name not in par_names:
                raise DefinitionError("symmetry names unknown parameter %r" % name)
            index = par_names.index(name)
        elif selector.lstrip("+-").isdigit():
            index = int(selector)
            if not 0 <= index < len(par_names):
                raise DefinitionError("symmetry parameter index %d out of range" % index)
        elif selector in par_names:
            index = par_names.index(selector)
        else:
            raise DefinitionError("symmetry names unknown parameter %r" % selector)
        rules.append((index, compile_formula(formula)))
    return rules


def parse_likelihood_steps(text):
    try:
        thresholds = sorted(float(v) for v in text.split(","))
    except ValueError as exc:
        raise DefinitionError("malformed likelihood_steps: %s" % exc) from None
    return thresholds


class ExplorerRun:
    def __init__(self, session, space, projections, symmetries, thresholds,
                 min_likelihood, disabled_states, unit_length):
        self.session = session
        self.space = space
        self.projections = projections
        self.symmetries = symmetries
        self.thresholds = thresholds  # ascending
        self.min_likelihood = min_likelihood
        self.disabled = set(disabled_states)
        self.unit_length = unit_length
        self.records = {}    # idx -> (record, likelihood); alive points
        self.processed = set()
        self.forced_pending = set()
        self.state = self.reset_state()
        self._iteration = 0

    # -- state machine -------------------------------------------------------

    def _enabled_states(self):
        states = [3] if not self.projections else [1, 2, 3]
        return [s for s in states if s not in self.disabled]

    def reset_state(self):
        enabled = self._enabled_states()
        if not enabled:
            raise DefinitionError("every explorer state is disabled")
        return enabled[0]

    def advance_state(self):
        """Next enabled state above the current one, or None when done."""
        for state in self._enabled_states():
            if state > self.state:
                self.state = state
                return state
        return None

    # -- bookkeeping ---------------------------------------------------------

    def bin_rank(self, likelihood):
        """0 is the most likely bin."""
        return len(self.thresholds) - bisect.bisect_right(self.thresholds, likelihood)

    def boundary(self):
        result = set()
        for idx in self.records:
            for neighbor in self.space.neighbors(idx):
                if neighbor not in self.processed:
                    result.add(idx)
                    break
        return result

    def maybe_unload(self, boundary):
        """Forget the most likely bin once >3 leading bins have no boundary."""
        if not self.thresholds:
            return False
        ranks_with_boundary = {
            self.bin_rank(self.records[idx][1]) for idx in boundary
        }
        depleted = 0
        for rank in range(len(self.thresholds) + 1):
            if rank in ranks_with_boundary:
                break
            depleted += 1
        if depleted <= 3:
            return False
        victims = [
            idx for idx, (_, likelihood) in self.records.items()
            if self.bin_rank(likelihood) == 0
        ]
        if not victims:
            return False
        for idx in victims:
            del self.records[idx]
            self.processed.discard(idx)
        log.info("unloaded %d points of the most likely bin from memory",
                 len(victims))
        return True

    # -- selection per state ---------------------------------------------------

    def _plane_of(self, projection, eligible):
        plane = {}
        for idx in sorted(eligible):
            record, likelihood = self.records[idx]
            coords = projection.coordinates(record, likelihood)
            if coords is None:
                continue
            x, y, z = coords
            cell = (x, y)
            kept = plane.get(cell)
            if kept is None or z > kept[0]:
                plane[cell] = (z, idx)
        return plane

    def _apply_symmetries(self, record):
        images = set()
        for rules in self.symmetries:
            values = list(record.pars)
            ctx = EvalContext(names=record_env(record))
            try:
                for index, expr in rules:
                    values[index] = evaluate(expr, ctx)
            except EvalError:
                continue  # erroring images are ignored
            idx = self.space.snap(values)
            if idx is not None:  # off-grid images are ignored
                images.add(idx)
        return images

    def _select_projected(self):
        pending = set()
        planes = []
        boundary = self.boundary() if self.state > 1 else None
        for projection in self.projections:
            eligible = self.records.keys() if boundary is None else boundary
            plane = self._plane_of(projection, eligible)
            planes.append(plane)
            if self.state == 1:
                xs = sorted({x for x, _ in plane})
                ys = sorted({y for _, y in plane})
                x_ord = {x: i for i, x in enumerate(xs)}
                y_ord = {y: j for j, y in enumerate(ys)}
                by_ordinal = {(x_ord[x], y_ord[y]): cell
                              for cell in plane for x, y in [cell]}
                for (x, y), (_, idx) in sorted(plane.items()):
                    pending.update(self.space.neighbors(idx))
                    if projection.extrapolate:
                        for dx, dy in ORBIT8:
                            other = by_ordinal.get((x_ord[x] + dx, y_ord[y] + dy))
                            if other is None:
                                continue
                            other_idx = plane[other][1]
                            for point in raster_line(idx, other_idx):
                                pending.add(point)
                            for point in raster_line(idx, other_idx, extend=True):
                                if all(0 <= i < n for i, n in
                                       zip(point, self.space.lengths)):
                                    pending.add(point)
                    pending.update(self._apply_symmetries(self.records[idx][0]))
            else:
                for _, idx in plane.values():
                    pending.update(self.space.neighbors(idx))
        if self.state == 1:
            self._save_projection_files(planes)
        return pending

    def _select_state3(self):
        boundary = self.boundary()
        if self.maybe_unload(boundary):
            boundary = self.boundary()
        self.session.outputs.save_index_set(BOUNDARY, boundary)
        if not boundary:
            return set()
        best_rank = min(self.bin_rank(self.records[idx][1]) for idx in boundary)
        candidates = sorted(
            (idx for idx in boundary
             if self.bin_rank(self.records[idx][1]) == best_rank),
            key=lambda idx: (-self.records[idx][1], idx),
        )
        pending = set()
        for idx in candidates[: self.unit_length]:
            pending.update(self.space.neighbors(idx))
        return pending

    def _save_projection_files(self, planes):
        outputs = self.session.outputs
        maximal = set()
        for projection, plane in zip(self.projections, planes):
            rows = [
                (x, y, z) for (x, y), (z, _) in sorted(plane.items())
            ]
            outputs.save_projection(projection.index, rows)
            maximal.update(plane[cell][1] for cell in plane)
        outputs.save_projected_points(
            [self.space.idx_to_pars(idx) for idx in sorted(maximal)]
        )

    # -- evaluation -------------------------------------------------------------

    def evaluate_pending(self, pending):
        session = self.session
        ordered = sorted(pending)
        session.outputs.save_index_set(WORK, ordered)
        self._iteration += 1
        items = [
            ("e%d.%d" % (self._iteration, i), self.space.idx_to_pars(idx))
            for i, idx in enumerate(ordered)
        ]
        records = session.dispatcher.run_batch(items)
        for idx, record in zip(ordered, records):
            self.processed.add(idx)
            if record.is_valid:
                likelihood = session.likelihood_of(record)
                session.outputs.write_valid(
                    project_out_columns(record, session.space),
                    annotations=[likelihood],
                )
                if likelihood >= self.min_likelihood:
                    self.records[idx] = (record, likelihood)
            else:
                session.outputs.write_excluded(record)
        session.outputs.save_index_set(WORK, [])
        session.outputs.flush()
        return len(ordered)

    # -- one iteration ------------------------------------------------------------

    def iterate(self):
        """Run one wave; returns the number of newly processed points or
        None when the exploration is complete."""
        if self.forced_pending:
            pending = self.forced_pending - self.processed
            self.forced_pending = set()
        elif self.projections and self.state < 3:
            pending = self._select_projected() - self.processed
        else:
            pending = self._select_state3() - self.processed
        if not pending:
            if self.advance_state() is None:
                return None
            return 0
        count = self.evaluate_pending(pending)
        if count and self.projections:
            self.state = self.reset_state()
        return count

    # -- loading ------------------------------------------------------------------

    def load_rows(self, path, filter_expr=None):
        """Known points from a TSV file; off-grid rows are skipped."""
        space_spec = self.session.space
        p = len(space_spec.par_names)
        v = len(space_spec.var_names)
        loaded = 0
        skipped = 0
        for row in iter_tsv_rows(path, skip_excluded=True):
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                skipped += 1
                continue
            idx = self.space.snap(values[:p])
            if idx is None:
                skipped += 1
                continue
            if idx in self.processed:
                continue
            pars = NamedValues(space_spec.par_names, values[:p])
            vars_values = NamedValues(space_spec.var_names, values[p:p + v])
            data_values = values[p + v:]
            data = NamedValues(
                space_spec.data_names[:len(data_values)], data_values
            )
            record = PointRecord(pars, vars_values, data)
            if filter_expr is not None:
                ctx = EvalContext(names=record_env(record))
                try:
                    if not evaluate(filter_expr, ctx):
                        continue
                except EvalError:
                    continue
            likelihood = self.session.likelihood_of(record)
            self.processed.add(idx)
            if likelihood >= self.min_likelihood:
                self.records[idx] = (record, likelihood)
            loaded += 1
        if skipped:
            log.warning("%s: ignored %d rows that do not fall onto the grid",
                        path, skipped)
        return loaded

    def load_excluded(self, path):
        p = len(self.session.space.par_names)
        for row in iter_tsv_rows(path, skip_excluded=False):
            if not row or row[0] != "E":
                continue
            try:
                idx = self.space.snap([float(cell) for cell in row[1:1 + p]])
            except ValueError:
                continue
            if idx is not None:
                self.processed.add(idx)


def build_explorer(session):
    definition = session.definition
    if session.likelihood_expr is None:
        raise DefinitionError("explorer mode needs an [algorithm] likelihood formula")
    space = GridSpace(session.ranges)

    count = _get_int(definition, ALGORITHM, "projection_count", 0)
    extrapolated_text = _nonempty(definition, ALGORITHM, "extrapolated_projections")
    if extrapolated_text is None:
        extrapolated = None  # all projections
    else:
        try:
            extrapolated = {int(v) for v in extrapolated_text.split(",")}
        except ValueError as exc:
            raise DefinitionError(
                "malformed extrapolated_projections: %s" % exc
            ) from None
    projections = []
    for i in range(count):
        combined = _nonempty(definition, ALGORITHM, "projection_%d" % i)
        x_text = _nonempty(definition, ALGORITHM, "projection_%d_x" % i)
        y_text = _nonempty(definition, ALGORITHM, "projection_%d_y" % i)
        if combined is None and (x_text is None or y_text is None):
            raise DefinitionError(
                "projection_count is %d but projection_%d is missing" % (count, i)
            )
        z_text = _nonempty(definition, ALGORITHM, "projection_%d_z" % i)
        filter_text = _nonempty(definition, ALGORITHM, "projection_%d_filter" % i)
        projections.append(Projection(
            i,
            xy_expr=compile_formula(combined) if combined else None,
            x_expr=compile_formula(x_text) if x_text else None,
            y_expr=compile_formula(y_text) if y_text else None,
            z_expr=compile_formula(z_text) if z_text else None,
            filter_expr=compile_formula(filter_text) if filter_text else None,
            extrapolate=extrapolated is None or i in extrapolated,
        ))

    symmetry_count = _get_int(definition, ALGORITHM, "symmetry_count", 0)
    symmetries = []
    for i in range(symmetry_count):
        text = _nonempty(definition, ALGORITHM, "symmetry_%d" % i)
        if text is None:
            raise DefinitionError(
                "symmetry_count is %d but symmetry_%d is missing"
                % (symmetry_count, i)
            )
        symmetries.append(parse_symmetry(text, session.space.par_names))

    steps_text = _nonempty(definition, ALGORITHM, "likelihood_steps")
    thresholds = parse_likelihood_steps(steps_text) if steps_text else []
    min_likelihood = _get_float(definition, ALGORITHM, "min_likelihood",
                                float("-inf"))
    disabled_text = _nonempty(definition, ALGORITHM, "disabled_states")
    disabled = set()
    if disabled_text:
        try:
            disabled = {int(v) for v in disabled_text.split(",")}
        except ValueError as exc:
            raise DefinitionError("malformed disabled_states: %s" % exc) from None
    if 3 in disabled and not projections:
        raise DefinitionError("cannot disable state three without projections")

    unit_length = session.unit_length or 10 * max(session.dimension_count, 1)
    return ExplorerRun(session, space, projections, symmetries, thresholds,
                       min_likelihood, disabled, unit_length)


def run_explorer(session, progress=None):
    run = build_explorer(session)
    outputs = session.outputs

    loading_text = _nonempty(session.definition, ALGORITHM, "loading_filter")
    loading_filter = compile_formula(loading_text) if loading_text else None

    data_path = outputs.path(".data")
    if outputs.byte_size(data_path):
        loaded = run.load_rows(data_path, loading_filter)
        log.info("loaded %d known points from %s", loaded, data_path)
    excluded_path = outputs.path(".excluded-data")
    if outputs.byte_size(excluded_path):
        run.load_excluded(excluded_path)
    for path in session.resolve_files():
        loaded = run.load_rows(path, loading_filter)
        log.info("loaded %d known points from %s", loaded, path)

    work = outputs.load_index_set(WORK)
    if work:
        run.forced_pending.update(tuple(idx) for idx in work)
    if not run.processed and not run.forced_pending:
        while len(run.forced_pending) < min(run.unit_length, run.space.size):
            idx = tuple(
                session.rng.randrange(n) for n in run.space.lengths
            )
            run.forced_pending.add(idx)

    while True:
        count = run.iterate()
        if count is None:
            break
        if count:
            line = "state %d: %d new points (%d known, %d processed)" % (
                run.state, count, len(run.records), len(run.processed)
            )
            log.info("%s", line)
            if progress is not None:
                progress(len(run.processed), run.space.size, line)
    log.info("exploration complete: %d points processed", len(run.processed))
    return 0
