"""Output files, resume state and progress bookkeeping.

All files of one scan share the base path ``<output_dir>/<definition file
name>`` plus a mode-specific suffix. Rows are tab-separated values with
``\\n`` line endings; numbers are written in shortest round-trip form
(``repr``). A single writer owns the files; appends are one ``write`` call
per line.
"""

import hashlib
import json
import os
import time

from .errors import ResumeError

DATA = ".data"
EXCLUDED = ".excluded-data"
LOG = ".log"
RESUME = ".resume"
SPEED = ".speed"
TESTHISTORY = ".testhistory"
TESTDATA = ".testdata"
WORK = ".work"
BOUNDARY = ".boundary"
PROJECTEDPOINTS = ".projectedpoints"
POPULATION = ".population"
OPTIMUM = ".optimum"


def format_value(value):
    """Shortest round-trip text for one TSV cell."""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return value.replace("\t", " ").replace("\n", "\\n")
    return str(value)


def format_row(values):
    return "\t".join(format_value(v) for v in values)


def escape_reason(text):
    return str(text).replace("\t", " ").replace("\n", "\\n")


def parse_row(line):
    return line.rstrip("\n").split("\t")


def iter_tsv_rows(path, skip_excluded=True):
    """Yield rows of a TSV file as string lists; 'E'-prefixed rows optional."""
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            row = parse_row(line)
            if skip_excluded and row and row[0] == "E":
                continue
            yield row


def atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)


def space_hash(items):
    """Stable fingerprint of the parameter-space directives for resume checks."""
    digest = hashlib.sha256()
    for key, value in sorted(items):
        digest.update(("%s=%s\n" % (key, value)).encode("utf-8"))
    return digest.hexdigest()[:16]


class OutputSet:
    """File handles and naming for one scan definition."""

    def __init__(self, output_dir, definition_name):
        os.makedirs(output_dir, exist_ok=True)
        self.output_dir = output_dir
        self.definition_name = definition_name
        self.base = os.path.join(output_dir, definition_name)
        self._handles = {}

    def path(self, suffix):
        return self.base + suffix

    def chain_path(self, i):
        return self.base + ".chain.%d" % i

    def rejected_path(self, i):
        return self.base + ".rejected.%d" % i

    def projection_path(self, i):
        return self.base + ".projection.%d" % i

    # -- appending ---------------------------------------------------------

    def _handle(self, path):
        handle = self._handles.get(path)
        if handle is None:
            handle = open(path, "a", encoding="utf-8")
            self._handles[path] = handle
        return handle

    def append_row(self, path, values):
        self._handle(path).write(format_row(values) + "\n")

    def write_valid(self, columns, annotations=()):
        """One valid point: projected columns plus appended annotations."""
        self.append_row(self.path(DATA), list(columns) + list(annotations))

    def write_excluded(self, record):
        """One excluded/errored point: E, parameter values, reason text."""
        row = ["E"] + list(record.pars) + [escape_reason(record.reason or "")]
        self.append_row(self.path(EXCLUDED), row)

    def chain_append(self, i, record, likelihood, stay_count):
        row = (list(record.pars) + list(record.vars) + list(record.data)
               + [likelihood, stay_count])
        self.append_row(self.chain_path(i), row)

    def rejected_append(self, i, record, likelihood):
        row = (list(record.pars) + list(record.vars) + list(record.data)
               + [likelihood])
        self.append_row(self.rejected_path(i), row)

    def append_testdata(self, columns, likelihood=None):
        row = list(columns) + ([likelihood] if likelihood is not None else [])
        self.append_row(self.path(TESTDATA), row)

    def flush(self):
        for handle in self._handles.values():
            handle.flush()
            os.fsync(handle.fileno())

    def close(self):
        for handle in self._handles.values():
            handle.close()
        self._handles.clear()

    # -- sizes and truncation for exactly-once resume ----------------------

    def byte_size(self, path):
        try:
            return os.path.getsize(path)
        except OSError:
            return 0

    def truncate_to(self, path, offset):
        size = self.byte_size(path)
        if size < offset:
            raise ResumeError(
                "%s is shorter (%d bytes) than the resume state records (%d)"
                % (path, size, offset)
            )
        if size > offset:
            handle = self._handles.pop(path, None)
            if handle is not None:
                handle.close()
            with open(path, "rb+") as raw:
                raw.truncate(offset)

    def count_rows(self, path):
        if not os.path.exists(path):
            return 0
        with open(path, encoding="utf-8") as handle:
            return sum(1 for line in handle if line.strip())

    # -- json state files --------------------------------------------------

    def save_json(self, suffix, payload):
        atomic_write(self.path(suffix), json.dumps(payload, sort_keys=True) + "\n")

    def load_json(self, suffix):
        path = self.path(suffix)
        if not os.path.exists(path):
            return None
        try:
            with open(path, encoding="utf-8") as handle:
                return json.load(handle)
        except ValueError as exc:
            raise ResumeError("corrupt state file %s: %s" % (path, exc)) from None

    # -- scan resume -------------------------------------------------------

    def save_scan_resume(self, points_done, fingerprint):
        self.flush()
        self.save_json(RESUME, {
            "points_done": points_done,
            "space_hash": fingerprint,
            "data_bytes": self.byte_size(self.path(DATA)),
            "excluded_bytes": self.byte_size(self.path(EXCLUDED)),
        })

    def load_scan_resume(self, fingerprint, force=False):
        """Returns points already persisted, reconciling partial batches.

        Rows written after the last resume snapshot belong to an interrupted
        batch; they are truncated away so the batch recomputes without ever
        double-writing. A parameter-space fingerprint mismatch refuses to
        resume unless forced.
        """
        state = self.load_json(RESUME)
        if state is None:
            return 0
        if state.get("space_hash") != fingerprint and not force:
            raise ResumeError(
                "the parameter space changed since %s was written; delete the "
                "output files to restart or pass --force-resume"
                % self.path(RESUME)
            )
        self.truncate_to(self.path(DATA), int(state.get("data_bytes", 0)))
        self.truncate_to(self.path(EXCLUDED), int(state.get("excluded_bytes", 0)))
        return int(state.get("points_done", 0))

    # -- optimize files ----------------------------------------------------

    def write_population(self, members):
        """Rows of ``fitness<TAB>par1..parD``, best first not required."""
        lines = [format_row([f] + list(pars)) for f, pars in members]
        atomic_write(self.path(POPULATION), "\n".join(lines) + "\n" if lines else "")

    def load_population(self):
        path = self.path(POPULATION)
        if not os.path.exists(path):
            return None
        members = []
        for row in iter_tsv_rows(path, skip_excluded=False):
            try:
                members.append((float(row[0]), tuple(float(v) for v in row[1:])))
            except ValueError as exc:
                raise ResumeError("corrupt population file %s: %s" % (path, exc)) from None
        return members or None

    def write_optimum(self, fitness, pars):
        atomic_write(self.path(OPTIMUM), format_row([fitness] + list(pars)) + "\n")

    # -- explorer files ----------------------------------------------------

    def save_index_set(self, suffix_or_path, indices):
        path = suffix_or_path if suffix_or_path.startswith(self.base) \
            else self.path(suffix_or_path)
        lines = ["\t".join(str(k) for k in idx) for idx in sorted(indices)]
        atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))

    def load_index_set(self, suffix_or_path):
        path = suffix_or_path if suffix_or_path.startswith(self.base) \
            else self.path(suffix_or_path)
        if not os.path.exists(path):
            return None
        indices = []
        for row in iter_tsv_rows(path, skip_excluded=False):
            try:
                indices.append(tuple(int(v) for v in row))
            except ValueError as exc:
                raise ResumeError("corrupt index file %s: %s" % (path, exc)) from None
        return indices

    def save_projection(self, i, rows):
        lines = [format_row(row) for row in rows]
        atomic_write(self.projection_path(i), "\n".join(lines) + ("\n" if lines else ""))

    def save_projected_points(self, rows):
        lines = [format_row(row) for row in rows]
        atomic_write(self.path(PROJECTEDPOINTS),
                     "\n".join(lines) + ("\n" if lines else ""))


class SpeedTracker:
    """Exponential moving average of the processing rate, kept in .speed.

    The file regenerates over time if deleted; it only feeds the progress
    display, never correctness.
    """

    alpha = 0.3

    def __init__(self, outputs):
        self.outputs = outputs
        self.rate = None
        state = None
        try:
            state = outputs.load_json(SPEED)
        except ResumeError:
            state = None
        if state and isinstance(state.get("rate"), (int, float)) and state["rate"] > 0:
            self.rate = float(state["rate"])

    def update(self, points, seconds):
        if seconds <= 0 or points <= 0:
            return self.rate
        instantaneous = points / seconds
        if self.rate is None:
            self.rate = instantaneous
        else:
            self.rate = self.alpha * instantaneous + (1 - self.alpha) * self.rate
        try:
            self.outputs.save_json(SPEED, {"rate": self.rate, "updated": time.time()})
        except OSError:
            pass
        return self.rate

    def eta_seconds(self, remaining):
        if not self.rate or remaining is None:
            return None
        return remaining / self.rate

    def status_line(self, done, total):
        if total:
            fraction = "%d/%d (%.1f%%)" % (done, total, 100.0 * done / total)
        else:
            fraction = "%d points" % done
        rate = "%.1f points/s" % self.rate if self.rate else "rate unknown"
        eta = self.eta_seconds(total - done if total else None)
        if eta is None:
            eta_text = "ETA unknown"
        else:
            eta_text = "ETA %s" % format_duration(eta)
        return "%s, %s, %s" % (fraction, rate, eta_text)


def format_duration(seconds):
    seconds = int(round(seconds))
    hours, rest = divmod(seconds, 3600)
    minutes, secs = divmod(rest, 60)
    if hours:
        return "%dh%02dm%02ds" % (hours, minutes, secs)
    if minutes:
        return "%dm%02ds" % (minutes, secs)
    return "%ds" % secs
