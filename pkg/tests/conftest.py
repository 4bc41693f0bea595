import os
import stat
import sys
import textwrap

import pytest

from parascan.definition import SearchPath, parse_definition
from parascan.session import Session


def make_definition(text, path="/tmp/test.scan", search=None):
    return parse_definition(
        [(path, textwrap.dedent(text))],
        search=search or SearchPath([os.getcwd()]),
    )


def write_script(path, body):
    """An executable script file (python shebang unless body brings its own)."""
    body = textwrap.dedent(body)
    if not body.startswith("#!"):
        body = "#!%s\n" % sys.executable + body.lstrip("\n")
    path = str(path)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(body)
    os.chmod(path, os.stat(path).st_mode | stat.S_IXUSR | stat.S_IXGRP)
    return path


@pytest.fixture
def make_session(tmp_path):
    """Build a Session from definition text, outputs under tmp_path."""
    sessions = []

    def build(text, name="test.scan", **kwargs):
        scan_path = tmp_path / name
        scan_path.write_text(textwrap.dedent(text), encoding="utf-8")
        definition = parse_definition(
            [(str(scan_path), scan_path.read_text(encoding="utf-8"))],
        )
        kwargs.setdefault("output_dir", str(tmp_path))
        kwargs.setdefault("slots", 2)
        session = Session(definition, **kwargs)
        sessions.append(session)
        return session

    yield build
    for session in sessions:
        session.close()


# the sin/cos plugin used by several end-to-end tests
SINCOS_PLUGIN = """\
import json
import math
import sys

for line in sys.stdin:
    msg = json.loads(line)
    if msg["t"] == "init":
        print(json.dumps({"t": "ready"}), flush=True)
    elif msg["t"] == "point":
        x, y = msg["pars"]
        value = math.sin(x * x + y) * math.cos(y * y + 3 * x)
        print(json.dumps({"t": "ok", "data": [value]}), flush=True)
"""
