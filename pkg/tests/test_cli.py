import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bayesmix import cli
from bayesmix.config import CONFIG_DIR, bundled_configs, load_config, parse_config
from bayesmix.errors import ConfigurationError

GOLDEN = Path(__file__).parent / "golden"


def _run(tmp_path, *argv):
    out = tmp_path / "out"
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def _bundled(name):
    return json.loads((CONFIG_DIR / f"{name}.json").read_text())


class TestGoldenFiles:
    @pytest.mark.parametrize("name", ["kt_bernoulli", "countable", "linreg"])
    def test_redundancy(self, tmp_path, name):
        code, out = _run(tmp_path, "redundancy", "--config", name)
        assert code == 0
        assert (out / "redundancy.csv").read_text() == (GOLDEN / f"{name}.csv").read_text()
        assert (out / "gap.json").read_text() == (GOLDEN / f"{name}.gap.json").read_text()

    def test_counterexample(self, tmp_path):
        code, out = _run(tmp_path, "counterexample", "--config", "counterexample")
        assert code == 0
        assert (out / "redundancy.csv").read_text() == (GOLDEN / "counterexample.csv").read_text()
        assert json.loads((out / "gap.json").read_text())["flag"] == "diverging"

    def test_csv_schema(self):
        header = (GOLDEN / "kt_bernoulli.csv").read_text().splitlines()[0]
        assert header == "n,D_n,std_error,method,bound_total,gap"


class TestDeterminism:
    def test_monte_carlo_config_twice(self, tmp_path):
        raw = _bundled("markov_uniform")
        raw["grid"] = {"values": [16, 32, 64]}
        raw["method"] = {"kind": "monte-carlo", "samples": 2000}
        raw.pop("trend", None)
        path = tmp_path / "mc.json"
        path.write_text(json.dumps(raw))
        outputs = []
        for i in range(2):
            out = tmp_path / f"run{i}"
            assert cli.main(["redundancy", "--config", str(path), "--seed", "11", "--out", str(out)]) == 0
            outputs.append(((out / "redundancy.csv").read_bytes(), (out / "gap.json").read_bytes()))
        assert outputs[0] == outputs[1]

    def test_threads_do_not_change_output(self, tmp_path):
        raw = _bundled("markov_uniform")
        raw["grid"] = {"values": [16, 32, 64]}
        raw["method"] = {"kind": "monte-carlo", "samples": 3000}
        raw.pop("trend", None)
        path = tmp_path / "mc.json"
        path.write_text(json.dumps(raw))
        texts = []
        for threads in (1, 3):
            out = tmp_path / f"t{threads}"
            assert cli.main(["redundancy", "--config", str(path), "--threads", str(threads), "--out", str(out)]) == 0
            texts.append((out / "redundancy.csv").read_bytes())
        assert texts[0] == texts[1]


class TestConfigErrors:
    def test_two_point_grid(self, tmp_path):
        raw = _bundled("kt_bernoulli")
        raw["grid"] = {"values": [16, 32]}
        path = tmp_path / "short.json"
        path.write_text(json.dumps(raw))
        code, _ = _run(tmp_path, "redundancy", "--config", str(path))
        assert code == 1

    def test_unknown_key(self, tmp_path):
        raw = {**_bundled("kt_bernoulli"), "bogus": 1}
        path = tmp_path / "bogus.json"
        path.write_text(json.dumps(raw))
        code, _ = _run(tmp_path, "redundancy", "--config", str(path))
        assert code == 1

    def test_parameter_outside_domain(self):
        raw = {**_bundled("kt_bernoulli"), "family": {"kind": "categorical", "theta": [1.2]}}
        with pytest.raises(ConfigurationError):
            parse_config(raw)

    def test_decreasing_grid(self):
        raw = {**_bundled("kt_bernoulli"), "grid": {"values": [64, 32, 128]}}
        with pytest.raises(ConfigurationError):
            parse_config(raw)

    def test_missing_file(self, tmp_path):
        code, _ = _run(tmp_path, "redundancy", "--config", str(tmp_path / "nope.json"))
        assert code == 1

    def test_all_bundled_configs_load(self):
        names = bundled_configs()
        assert len(names) >= 7
        for name in names:
            load_config(name)


class TestTrendExitCodes:
    def test_monotone_requirement_fails_on_kt(self, tmp_path):
        raw = _bundled("kt_bernoulli")
        raw["trend"] = {**raw["trend"], "require_monotone_gap": True}
        path = tmp_path / "strict.json"
        path.write_text(json.dumps(raw))
        code, _ = _run(tmp_path, "redundancy", "--config", str(path))
        assert code == 2

    def test_bounded_schedule_converges(self, tmp_path):
        raw = _bundled("counterexample")
        raw["family"] = {"kind": "counterexample", "theta": 0.5, "schedule": "constant", "a": 1.0}
        raw["grid"] = {"values": [4, 5, 6, 7, 8, 9, 10]}
        raw["trend"] = {"expect": "converging"}
        path = tmp_path / "bounded.json"
        path.write_text(json.dumps(raw))
        code, out = _run(tmp_path, "counterexample", "--config", str(path))
        assert code == 0
        assert json.loads((out / "gap.json").read_text())["flag"] == "converging"


class TestBoundCommand:
    def test_countable(self, tmp_path):
        code, out = _run(tmp_path, "bound", "--config", "countable")
        assert code == 0
        reports = json.loads((out / "bounds.json").read_text())
        assert all(r["total"] == pytest.approx(0.69314718056) for r in reports)


class TestCompression:
    def test_roundtrip_bits(self, tmp_path):
        data = bytes(np.random.default_rng(0).integers(0, 256, 300, dtype=np.uint8)) + b"\x00" * 200
        src, packed, back = tmp_path / "in.bin", tmp_path / "in.bmx", tmp_path / "out.bin"
        src.write_bytes(data)
        assert cli.main(["compress", "--config", "compress", str(src), str(packed)]) == 0
        assert cli.main(["decompress", "--config", "compress", str(packed), str(back)]) == 0
        assert back.read_bytes() == data
        assert packed.stat().st_size < len(data)

    def test_truncated_file(self, tmp_path):
        src, packed, back = tmp_path / "in.bin", tmp_path / "in.bmx", tmp_path / "out.bin"
        src.write_bytes(bytes(range(200)))
        assert cli.main(["compress", "--config", "compress", str(src), str(packed)]) == 0
        packed.write_bytes(packed.read_bytes()[:-20])
        assert cli.main(["decompress", "--config", "compress", str(packed), str(back)]) == 1


class TestCheck:
    def test_check_passes(self, capsys):
        assert cli.main(["check"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith("PASS") for line in lines)

    def test_console_script(self, tmp_path):
        env = {**os.environ, "PYTHONPATH": str(Path(__file__).parents[1] / "src")}
        proc = subprocess.run([sys.executable, "-m", "bayesmix.cli", "bound", "--config", "kt_bernoulli",
                               "--out", str(tmp_path)], capture_output=True, text=True, env=env)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)[0]["variant"] == "half-log-det-In"
