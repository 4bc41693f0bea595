"""External plugin processors.

A plugin is any executable speaking newline-delimited JSON on stdio. One
child runs per worker slot and is reused across points; exactly one request
is outstanding at a time.

Wire protocol (UTF-8 JSON, one object per line, no embedded newlines):

    -> {"t": "init", "v": 1, "dir": <definition dir>, "config": {section: {k: v}}}
    <- {"t": "ready"}
    -> {"t": "point", "template": <path or null>, "pars": [...], "vars": [...]}
    <- {"t": "ok", "data": [...]}   or   {"t": "err", "msg": "..."}
"""

import json
import os
import select
import subprocess

from ..errors import ProcessorError, ScanAbort
from .base import PointProcessor

PROTOCOL_VERSION = 1
INIT_TIMEOUT = 30.0
DEFAULT_POINT_TIMEOUT = 10.0


class PluginHandle:
    """One running plugin child with a framed message channel."""

    def __init__(self, executable, definition_dir, config_sections,
                 init_timeout=INIT_TIMEOUT):
        self.executable = executable
        try:
            self.proc = subprocess.Popen(
                [executable],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise ScanAbort("cannot start plugin %r: %s" % (executable, exc)) from None
        self._buffer = b""
        try:
            self._send({
                "t": "init",
                "v": PROTOCOL_VERSION,
                "dir": definition_dir,
                "config": config_sections,
            })
            reply = self._receive(init_timeout)
        except ProcessorError as exc:
            self.close()
            raise ScanAbort("plugin %r failed to initialize: %s" % (executable, exc)) from None
        if reply.get("t") != "ready":
            self.close()
            raise ScanAbort(
                "plugin %r sent %r instead of ready" % (executable, reply.get("t"))
            )

    @property
    def alive(self):
        return self.proc.poll() is None

    def _send(self, message):
        try:
            line = json.dumps(message) + "\n"
        except (TypeError, ValueError) as exc:
            raise ProcessorError("unserializable plugin request: %s" % exc) from None
        try:
            self.proc.stdin.write(line.encode("utf-8"))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProcessorError("plugin pipe closed: %s" % exc) from None

    def _receive(self, timeout):
        fd = self.proc.stdout.fileno()
        import time
        deadline = time.monotonic() + timeout
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProcessorError("timeout waiting for plugin reply")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ProcessorError("plugin exited unexpectedly")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        try:
            message = json.loads(line.decode("utf-8"))
        except ValueError as exc:
            raise ProcessorError("plugin sent invalid JSON: %s" % exc) from None
        if not isinstance(message, dict):
            raise ProcessorError("plugin sent a non-object frame")
        return message

    def request(self, template_path, pars, vars, timeout):
        self._send({
            "t": "point",
            "template": template_path,
            "pars": list(pars),
            "vars": list(vars),
        })
        reply = self._receive(timeout)
        kind = reply.get("t")
        if kind == "ok":
            data = reply.get("data")
            if not isinstance(data, list):
                raise ProcessorError("plugin 'ok' frame without a data list")
            return data
        if kind == "err":
            raise ProcessorError(str(reply.get("msg", "plugin error")))
        raise ProcessorError("plugin sent unexpected frame %r" % (kind,))

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                if stream and not stream.closed:
                    stream.close()
            except OSError:
                pass


class PluginProcessor(PointProcessor):
    """Adapter that feeds points to a plugin child, restarting it on crashes."""

    def __init__(self, executable, config, search, definition_dir=None):
        self.executable = executable
        self.definition_dir = definition_dir
        self.config_sections = config.snapshot()
        stem = os.path.splitext(os.path.basename(executable))[0]
        self.name = stem
        self.timeout = config.get_float(stem, "timeout", DEFAULT_POINT_TIMEOUT)
        self.handle = PluginHandle(executable, definition_dir, self.config_sections)

    def describe(self):
        return "plugin %s (timeout %gs)" % (self.executable, self.timeout)

    def process(self, template_path, pars, vars, workdir, remember_store):
        if self.handle is None or not self.handle.alive:
            if self.handle is not None:
                self.handle.close()
            self.handle = PluginHandle(
                self.executable, self.definition_dir, self.config_sections
            )
        try:
            return self.handle.request(
                template_path, pars.values, vars.values, self.timeout
            )
        except ProcessorError:
            # the channel is in an unknown state after any failure; restart
            # the child before the next point
            self.handle.close()
            self.handle = None
            raise

    def close(self):
        if self.handle is not None:
            self.handle.close()
            self.handle = None
