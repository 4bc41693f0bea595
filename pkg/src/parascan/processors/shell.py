"""A small shell-like command script language.

Supports POSIX-style quoting and backslash escapes, ``< file`` / ``> file``
redirection, and command chaining with ``;``, ``&&`` or newlines (all three
equivalent; execution aborts at the first non-zero exit code). No globbing,
no variable expansion, no pipes. The substituted template file can be
referenced with the ``{template}`` placeholder inside any word.
"""

import os
import shutil
import signal
import subprocess
import time
from dataclasses import dataclass, field

from ..definition import resolve_path
from ..errors import DefinitionError, ProcessorError

_WORD = "word"
_SEP = "sep"
_RIN = "<"
_ROUT = ">"


@dataclass
class Command:
    argv: list = field(default_factory=list)
    stdin_path: str = None
    stdout_path: str = None


@dataclass
class CommandScript:
    commands: list = field(default_factory=list)

    @property
    def template_referenced(self):
        return any(
            "{template}" in word for cmd in self.commands for word in cmd.argv
        ) or any(
            cmd.stdin_path and "{template}" in cmd.stdin_path
            or cmd.stdout_path and "{template}" in cmd.stdout_path
            for cmd in self.commands
        )


def _lex(text):
    tokens = []
    current = []
    has_word = False

    def flush():
        nonlocal has_word
        if has_word:
            tokens.append((_WORD, "".join(current)))
            current.clear()
            has_word = False

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\":
            if i + 1 < n:
                current.append(text[i + 1])
                i += 2
            else:
                current.append("\\")
                i += 1
            has_word = True
        elif ch == "'":
            end = text.find("'", i + 1)
            if end == -1:
                raise DefinitionError("unbalanced single quote in command script")
            current.append(text[i + 1:end])
            has_word = True
            i = end + 1
        elif ch == '"':
            i += 1
            while True:
                if i >= n:
                    raise DefinitionError("unbalanced double quote in command script")
                ch = text[i]
                if ch == '"':
                    i += 1
                    break
                if ch == "\\" and i + 1 < n and text[i + 1] in ('"', "\\"):
                    current.append(text[i + 1])
                    i += 2
                else:
                    current.append(ch)
                    i += 1
            has_word = True
        elif ch in " \t":
            flush()
            i += 1
        elif ch in ";\n":
            flush()
            tokens.append((_SEP, ch))
            i += 1
        elif ch == "&" and text.startswith("&&", i):
            flush()
            tokens.append((_SEP, "&&"))
            i += 2
        elif ch == "<":
            flush()
            tokens.append((_RIN, ch))
            i += 1
        elif ch == ">":
            flush()
            tokens.append((_ROUT, ch))
            i += 1
        else:
            current.append(ch)
            has_word = True
            i += 1
    flush()
    return tokens


def parse_command_script(text):
    """Parse ``program`` directive text into a :class:`CommandScript`."""
    commands = []
    current = Command()
    pending = None

    def finish():
        nonlocal current
        if current.argv or current.stdin_path or current.stdout_path:
            if not current.argv:
                raise DefinitionError("redirection without a command")
            commands.append(current)
        current = Command()

    for kind, value in _lex(text):
        if kind == _WORD:
            if pending == _RIN:
                current.stdin_path = value
            elif pending == _ROUT:
                # later redirections of the same stream replace earlier ones
                current.stdout_path = value
            else:
                current.argv.append(value)
            pending = None
        elif kind == _SEP:
            if pending is not None:
                raise DefinitionError("redirection without a target file")
            finish()
        else:
            if pending is not None:
                raise DefinitionError("redirection without a target file")
            pending = kind
    if pending is not None:
        raise DefinitionError("redirection without a target file")
    finish()
    return CommandScript(commands)


def split_words(text):
    """Split a single-command line into argv (no separators, no redirects)."""
    script = parse_command_script(text)
    if len(script.commands) != 1:
        raise DefinitionError("expected a single command, got %d" % len(script.commands))
    command = script.commands[0]
    if command.stdin_path or command.stdout_path:
        raise DefinitionError("redirection is not supported here")
    return command.argv


def render_word(word):
    """Quote a word so that the lexer reads it back verbatim."""
    if word and not any(c in word for c in " \t\n;&<>'\"\\"):
        return word
    return "'" + word.replace("'", "'\\''") + "'"


def render_script(script):
    parts = []
    for cmd in script.commands:
        words = [render_word(w) for w in cmd.argv]
        if cmd.stdin_path:
            words.append("< " + render_word(cmd.stdin_path))
        if cmd.stdout_path:
            words.append("> " + render_word(cmd.stdout_path))
        parts.append(" ".join(words))
    return "; ".join(parts)


def resolve_program(word, search):
    """PATH lookup for bare names, search-path lookup otherwise."""
    if os.path.isabs(word):
        return word
    if os.sep not in word:
        found = shutil.which(word)
        if found:
            return found
    return resolve_path(word, search)


def run_command(argv, cwd, stdin=None, stdout=None, input_bytes=None, timeout=None):
    """Run one command in its own process group; kill the group on timeout.

    Returns ``(returncode, stdout_bytes, stderr_bytes)``. ``stdin``/``stdout``
    are file objects or None (None captures stdout, feeds ``input_bytes``).
    """
    proc = subprocess.Popen(
        argv,
        cwd=cwd,
        stdin=stdin if stdin is not None else subprocess.PIPE,
        stdout=stdout if stdout is not None else subprocess.PIPE,
        stderr=subprocess.PIPE,
        start_new_session=True,
    )
    try:
        out, err = proc.communicate(input=input_bytes, timeout=timeout)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        proc.wait()
        raise ProcessorError(
            "timeout: %r did not finish within %gs" % (argv[0], timeout)
        ) from None
    return proc.returncode, out, err


def _open_redirect(path, workdir, mode):
    target = path if os.path.isabs(path) else os.path.join(workdir, path)
    try:
        return open(target, mode)
    except OSError as exc:
        raise ProcessorError("cannot open %r: %s" % (path, exc)) from None


def run_script(script, workdir, search, template_path=None, timeout=10.0):
    """Execute a command script in ``workdir``; returns last captured stdout.

    When the script never references ``{template}``, the template file is fed
    to the first command's stdin. The timeout covers the whole script.
    """
    deadline = time.monotonic() + timeout
    feed_template = template_path is not None and not script.template_referenced
    last_stdout = b""
    for index, cmd in enumerate(script.commands):
        argv = [w.replace("{template}", template_path or "") for w in cmd.argv]
        try:
            argv[0] = resolve_program(argv[0], search)
        except DefinitionError as exc:
            raise ProcessorError(str(exc)) from None
        stdin = None
        input_bytes = None
        stdout = None
        try:
            if cmd.stdin_path:
                stdin = _open_redirect(
                    cmd.stdin_path.replace("{template}", template_path or ""),
                    workdir, "rb",
                )
            elif index == 0 and feed_template:
                with open(template_path, "rb") as handle:
                    input_bytes = handle.read()
            else:
                input_bytes = b""
            if cmd.stdout_path:
                stdout = _open_redirect(cmd.stdout_path, workdir, "wb")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProcessorError("timeout: command script exceeded %gs" % timeout)
            code, out, err = run_command(
                argv, workdir,
                stdin=stdin, stdout=stdout,
                input_bytes=input_bytes, timeout=remaining,
            )
        except FileNotFoundError as exc:
            raise ProcessorError("cannot run %r: %s" % (argv[0], exc)) from None
        finally:
            if stdin is not None:
                stdin.close()
            if stdout is not None:
                stdout.close()
        if code != 0:
            tail = (err or b"")[-300:].decode("utf-8", "replace").strip()
            raise ProcessorError(
                "command %r exited with code %d%s"
                % (argv[0], code, (": " + tail) if tail else "")
            )
        if out is not None:
            last_stdout = out
    return last_stdout
