"""Command line interface and the interactive test mode."""

import argparse
import glob
import logging
import os
import re
import sys
import time

from . import __version__, strategies
from .definition import load_definition
from .errors import DefinitionError, NetworkError, ParascanError, ResumeError
from .network import WorkerServer, WorkerClient, record_from_wire
from .pipeline import project_out_columns
from .session import MODES, Session, build_worker_context
from .storage import TESTHISTORY, format_value

log = logging.getLogger("parascan.cli")

_SPLIT_VALUES = re.compile(r"[,\s]+")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="parascan",
        description="Run parameter scans driven by a scan definition file.",
        epilog="Debug tools: 'parascan slha-dump FILE' prints a parsed SLHA "
               "file; 'parascan match-numbers' echoes stdin with extracted "
               "numbers marked.",
    )
    parser.add_argument("input_file", nargs="*",
                        help="scan definition file(s); read in sequence, the "
                             "last one names the output files. Without one, a "
                             "menu of *.scan files in the working directory "
                             "is shown.")
    parser.add_argument("-v", "--version", action="version",
                        version="parascan %s" % __version__)
    parser.add_argument("--mode", choices=MODES,
                        help="override the [setup] mode directive")
    parser.add_argument("-o", "--output_dir", default=".",
                        help="directory for result files (created if needed)")
    parser.add_argument("-p", "--port", type=int,
                        help="override the [setup] port directive (worker mode)")
    parser.add_argument("--pars", action="append", nargs="+", metavar="VALUE",
                        help="a test-mode point; repeat for several points")
    parser.add_argument("-P", "--profiling", action="store_true",
                        help="accepted for compatibility; profiling is "
                             "delegated to external tooling")
    parser.add_argument("-D", "--debug", action="store_true",
                        help="keep per-point work directories and log more")
    parser.add_argument("--randomseed", type=int,
                        help="seed the random number generator for "
                             "reproducible runs")
    parser.add_argument("--yes", action="store_true",
                        help="skip the confirmation prompt (scripted runs)")
    parser.add_argument("--force-resume", action="store_true",
                        help="resume even if the parameter space hash changed")
    return parser


def _setup_logging(debug, log_path=None):
    root = logging.getLogger("parascan")
    root.setLevel(logging.DEBUG if debug else logging.INFO)
    if not any(isinstance(h, logging.StreamHandler) for h in root.handlers):
        console = logging.StreamHandler()
        console.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(console)
    if log_path:
        file_handler = logging.FileHandler(log_path)
        file_handler.setFormatter(logging.Formatter(
            "%(asctime)s %(levelname)s %(name)s: %(message)s"
        ))
        root.addHandler(file_handler)
        return file_handler
    return None


def _choose_definition_file():
    candidates = sorted(glob.glob("*.scan"))
    if not candidates:
        print("no scan definition given and no *.scan files found here",
              file=sys.stderr)
        return None
    print("Choose a scan definition file:")
    for i, name in enumerate(candidates):
        print("  [%d] %s" % (i, name))
    while True:
        try:
            answer = input("> ").strip()
        except EOFError:
            return None
        if answer.isdigit() and int(answer) < len(candidates):
            return candidates[int(answer)]
        if answer in candidates:
            return answer
        print("enter a number between 0 and %d" % (len(candidates) - 1))


def _confirm(args):
    if args.yes or not sys.stdin.isatty():
        return True
    try:
        answer = input("Start the calculation? [y/N] ")
    except EOFError:
        return False
    return answer.strip().lower() in ("y", "yes")


def _slha_dump(paths):
    from .processors import parse_slha, render_document

    if len(paths) != 1:
        print("usage: parascan slha-dump FILE", file=sys.stderr)
        return 1
    try:
        with open(paths[0], encoding="utf-8", errors="replace") as handle:
            document = parse_slha(handle.read(), source=paths[0])
    except (OSError, ParascanError) as exc:
        print("slha-dump: %s" % exc, file=sys.stderr)
        return 1
    print(render_document(document))
    if document.warnings:
        for warning in document.warnings:
            print("warning: %s" % warning, file=sys.stderr)
    return 0


def _match_numbers():
    from .processors import annotate_numbers

    sys.stdout.write(annotate_numbers(sys.stdin.read()))
    return 0


# -- test mode ----------------------------------------------------------------

def _table(pairs, per_row):
    """Two/three cells per row, as 'label: value' columns."""
    if not pairs:
        return "(no values)"
    label_width = max(len(str(label)) for label, _ in pairs)
    value_width = max(max(len(v) for _, v in pairs), 9)
    cells = []
    for label, value in pairs:
        cells.append("%s: %s" % (str(label).ljust(label_width),
                                 value.rjust(value_width)))
    filler = "%s: %s" % ("---".ljust(label_width), "---".rjust(value_width))
    while len(cells) % per_row:
        cells.append(filler)
    rows = [" | ".join(cells[i:i + per_row]) for i in range(0, len(cells), per_row)]
    border = "-" * max(len(row) for row in rows)
    return "\n".join([border] + rows + [border])


def _parse_point(text, count):
    parts = [p for p in _SPLIT_VALUES.split(text.strip()) if p]
    if len(parts) != count:
        raise ValueError("expected %d values, got %d" % (count, len(parts)))
    return tuple(float(p) for p in parts)


def _print_record(session, record, elapsed, worker_note=""):
    pars = record.pars
    print("# Parameters:")
    print(", ".join("%s = %s" % (n, format_value(v))
                    for n, v in zip(pars.names, pars.values)))
    print("# Calculation done after: %f s%s" % (elapsed, worker_note))
    if not record.is_valid:
        print("# Point %s: %s" % (record.status, record.reason))
        return
    data = record.data
    labels = list(data.names) + [
        "data[%d]" % i for i in range(len(data.names), len(data))
    ]
    print("# Data:")
    print(_table([(l, format_value(v)) for l, v in zip(labels, data.values)], 2))
    columns = project_out_columns(record, session.space)
    print("# Output columns:")
    print(_table([(i + 1, format_value(v)) for i, v in enumerate(columns)], 3))
    likelihood = None
    if session.likelihood_expr is not None:
        likelihood = session.likelihood_of(record)
        print("# Likelihood: %s" % format_value(likelihood))
    session.outputs.append_testdata(columns, likelihood)


def run_test_repl(session, preloaded_points):
    try:
        import readline
    except ImportError:
        readline = None
    history_path = session.outputs.path(TESTHISTORY)
    if readline is not None:
        try:
            readline.read_history_file(history_path)
        except OSError:
            pass

    names = session.space.par_names
    evaluator = session.new_evaluator()
    remote_client = None
    counter = 0

    def evaluate_local(pars):
        return evaluator.evaluate("t%d" % counter, pars)

    def evaluate_remote(pars):
        nonlocal remote_client
        if not session.workers:
            raise NetworkError("no workers configured in [setup] workers")
        if remote_client is None:
            remote_client = WorkerClient(
                session.workers[0], session.authkey, session.init_payload()
            )
        wires = remote_client.run_batch(
            counter, [pars], needs_template=session.template_doc is not None,
            timeout=120.0,
        )
        return record_from_wire(wires[0], session.space)

    def handle(text, remote=False):
        nonlocal counter
        counter += 1
        if text.strip().lower() == "random":
            if not session.ranges:
                print("random needs parameter ranges (not available in file mode)")
                return
            pars = tuple(spec.sample(session.rng) for spec in session.ranges)
        else:
            try:
                pars = _parse_point(text, len(names))
            except ValueError as exc:
                print("! %s" % exc)
                return
        started = time.monotonic()
        try:
            record = evaluate_remote(pars) if remote else evaluate_local(pars)
        except NetworkError as exc:
            print("! worker failed: %s" % exc)
            return
        _print_record(session, record, time.monotonic() - started,
                      " (on %s)" % session.workers[0] if remote else "")
        processor = getattr(evaluator, "processor", None)
        for warning in getattr(processor, "last_warnings", []) or []:
            print("# Warning: %s" % warning)

    try:
        for point in preloaded_points or []:
            handle(" ".join(point))
        prompt = "# Enter point (format: %s; as numbers or 'random'):" % \
            ", ".join(names)
        while True:
            print(prompt)
            try:
                line = input("> ")
            except EOFError:
                break
            if not line.strip():
                continue
            if line.strip() in ("quit", "exit"):
                break
            if line.strip().startswith("remote"):
                handle(line.strip()[len("remote"):], remote=True)
            else:
                handle(line)
    finally:
        if readline is not None:
            try:
                readline.write_history_file(history_path)
            except OSError:
                pass
        evaluator.close()
        if remote_client is not None:
            remote_client.close()
        session.outputs.flush()
    return 0


def run_worker(session):
    if not session.authkey:
        raise DefinitionError("worker mode needs an [setup] authkey")
    server = WorkerServer(
        session.port, session.authkey, session.pool,
        build_worker_context(session.search, keep_workdirs=session.debug),
    )
    print("worker listening on port %d (Ctrl+C stops it)" % server.port)
    try:
        server.serve_forever()
    finally:
        server.stop()
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv[:1] == ["slha-dump"]:
        return _slha_dump(argv[1:])
    if argv[:1] == ["match-numbers"]:
        return _match_numbers()

    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.debug)
    if args.profiling:
        print("note: -P/--profiling is accepted for compatibility; use "
              "external tooling (e.g. py-spy, cProfile) to profile runs")

    paths = list(args.input_file)
    if not paths:
        chosen = _choose_definition_file()
        if chosen is None:
            return 1
        paths = [chosen]

    session = None
    try:
        definition = load_definition(paths)
        session = Session(
            definition,
            mode=args.mode,
            output_dir=args.output_dir,
            port=args.port,
            debug=args.debug,
            randomseed=args.randomseed,
            force_resume=args.force_resume,
        )
        _setup_logging(args.debug, session.outputs.path(".log"))
        print(session.overview())
        if not _confirm(args):
            print("aborted before any calculation")
            return 0
        if session.mode == "worker":
            return run_worker(session)
        if session.mode == "test":
            return run_test_repl(session, args.pars)
        return strategies.run(session)
    except KeyboardInterrupt:
        if session is not None:
            session.outputs.flush()
        print("\ninterrupted; relaunch with the same definition and "
              "output directory to resume", file=sys.stderr)
        return 130
    except (DefinitionError, ResumeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except ParascanError as exc:
        print("aborted: %s" % exc, file=sys.stderr)
        return 2
    finally:
        if session is not None:
            session.close()


if __name__ == "__main__":
    sys.exit(main())
