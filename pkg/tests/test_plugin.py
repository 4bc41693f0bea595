import pytest

from parascan.definition import SearchPath
from parascan.errors import ProcessorError, ScanAbort
from parascan.formulas import NamedValues
from parascan.processors import ConfigView, PluginProcessor, create_processor

from conftest import make_definition, write_script

EMPTY = NamedValues([], [])


def empty_config():
    return ConfigView(make_definition("[setup]\nmode = scan\n"))


ECHO_PLUGIN = """
    import json
    import sys

    for line in sys.stdin:
        msg = json.loads(line)
        if msg["t"] == "init":
            print(json.dumps({"t": "ready"}), flush=True)
        elif msg["t"] == "point":
            print(json.dumps({"t": "ok", "data": msg["pars"]}), flush=True)
"""


def make_plugin(tmp_path, body, name="plugin.py"):
    return write_script(tmp_path / name, body)


class TestPlugin:
    def test_echo_plugin_returns_pars(self, tmp_path):
        path = make_plugin(tmp_path, ECHO_PLUGIN)
        processor = PluginProcessor(path, empty_config(), SearchPath([str(tmp_path)]))
        pars = NamedValues(["a", "b"], [1.5, -2.0])
        try:
            assert processor.process(None, pars, EMPTY, str(tmp_path), {}) == [1.5, -2.0]
        finally:
            processor.close()

    def test_err_frame_becomes_point_error(self, tmp_path):
        path = make_plugin(tmp_path, """
            import json
            import sys
            for line in sys.stdin:
                msg = json.loads(line)
                if msg["t"] == "init":
                    print(json.dumps({"t": "ready"}), flush=True)
                else:
                    print(json.dumps({"t": "err", "msg": "point rejected"}),
                          flush=True)
        """)
        processor = PluginProcessor(path, empty_config(), SearchPath([str(tmp_path)]))
        try:
            with pytest.raises(ProcessorError, match="point rejected"):
                processor.process(None, EMPTY, EMPTY, str(tmp_path), {})
        finally:
            processor.close()

    def test_init_failure_aborts_startup(self, tmp_path):
        path = make_plugin(tmp_path, """
            raise SystemExit(3)
        """)
        with pytest.raises(ScanAbort):
            PluginProcessor(path, empty_config(), SearchPath([str(tmp_path)]))

    def test_crash_restarts_child(self, tmp_path):
        counter_file = tmp_path / "starts"
        path = make_plugin(tmp_path, """
            import json
            import sys
            with open(%r, "a") as h:
                h.write("x")
            served = 0
            for line in sys.stdin:
                msg = json.loads(line)
                if msg["t"] == "init":
                    print(json.dumps({"t": "ready"}), flush=True)
                else:
                    if served == 1:
                        raise SystemExit(9)  # crash on the second point
                    served += 1
                    print(json.dumps({"t": "ok", "data": [served]}), flush=True)
        """ % str(counter_file))
        processor = PluginProcessor(path, empty_config(), SearchPath([str(tmp_path)]))
        try:
            assert processor.process(None, EMPTY, EMPTY, str(tmp_path), {}) == [1]
            with pytest.raises(ProcessorError):
                processor.process(None, EMPTY, EMPTY, str(tmp_path), {})
            # restarted child serves again
            assert processor.process(None, EMPTY, EMPTY, str(tmp_path), {}) == [1]
            assert counter_file.read_text() == "xx"
        finally:
            processor.close()

    def test_config_sections_shipped_on_init(self, tmp_path):
        path = make_plugin(tmp_path, """
            import json
            import sys
            factor = None
            for line in sys.stdin:
                msg = json.loads(line)
                if msg["t"] == "init":
                    factor = float(msg["config"]["plugin"]["factor"])
                    print(json.dumps({"t": "ready"}), flush=True)
                else:
                    print(json.dumps({"t": "ok",
                                      "data": [p * factor for p in msg["pars"]]}),
                          flush=True)
        """)
        config = ConfigView(make_definition("[plugin]\nfactor = 3\n"))
        processor = PluginProcessor(path, config, SearchPath([str(tmp_path)]))
        pars = NamedValues(["x"], [2.0])
        try:
            assert processor.process(None, pars, EMPTY, str(tmp_path), {}) == [6.0]
        finally:
            processor.close()

    def test_soak_order_preserved(self, tmp_path):
        path = make_plugin(tmp_path, """
            import json
            import sys
            for line in sys.stdin:
                msg = json.loads(line)
                if msg["t"] == "init":
                    print(json.dumps({"t": "ready"}), flush=True)
                else:
                    print(json.dumps({"t": "ok", "data": [msg["pars"][0] * 2]}),
                          flush=True)
        """)
        processor = PluginProcessor(path, empty_config(), SearchPath([str(tmp_path)]))
        try:
            for i in range(1000):
                pars = NamedValues(["x"], [float(i)])
                assert processor.process(None, pars, EMPTY, str(tmp_path), {}) == [2.0 * i]
        finally:
            processor.close()

    def test_factory_creates_plugins_for_unknown_names(self, tmp_path):
        path = make_plugin(tmp_path, ECHO_PLUGIN, name="custom_code.py")
        processor = create_processor(path, empty_config(), SearchPath([str(tmp_path)]))
        try:
            assert isinstance(processor, PluginProcessor)
            pars = NamedValues(["x"], [4.0])
            assert processor.process(None, pars, EMPTY, str(tmp_path), {}) == [4.0]
        finally:
            processor.close()

    def test_timeout_from_config_section(self, tmp_path):
        path = make_plugin(tmp_path, """
            import json
            import sys
            import time
            for line in sys.stdin:
                msg = json.loads(line)
                if msg["t"] == "init":
                    print(json.dumps({"t": "ready"}), flush=True)
                else:
                    time.sleep(30)
        """, name="slowpoke.py")
        config = ConfigView(make_definition("[slowpoke]\ntimeout = 0.5\n"))
        processor = PluginProcessor(path, config, SearchPath([str(tmp_path)]))
        try:
            with pytest.raises(ProcessorError, match="timeout"):
                processor.process(None, EMPTY, EMPTY, str(tmp_path), {})
        finally:
            processor.close()
