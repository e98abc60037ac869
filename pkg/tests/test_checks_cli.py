import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from brokenray import checks as C
from brokenray.cli import main
from brokenray.fields import grid_for_domain
from brokenray.transport import BrokenRayOperator, SamplingSpec

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def run_cli(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def kv(output):
    out = {}
    for line in output.splitlines():
        if "=" in line and "," not in line.split("=")[0]:
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    """Scaled-down copy of the 3-edge square config for quick CLI runs."""
    path = os.path.join(CONFIG_DIR, "square3.json")
    with open(path) as fh:
        raw = json.load(fh)
    raw["grid"]["resolution"] = 32
    raw["sampling"] = {"n_pos": 24, "n_dir": 24}
    raw["solver"]["max_iters"] = 60
    raw["invariants"] = {"n_rays": 120, "n_mc": 40000, "n_fields": 10, "n_source": 800}
    p = tmp_path_factory.mktemp("cfg") / "small.json"
    p.write_text(json.dumps(raw))
    return str(p)


class TestChecksSuite:
    def test_all_named_checks_pass(self, square3, small_op):
        lo, hi = (0.25, 0.25), (0.75, 0.75)
        results = [
            C.check_unfold_collinearity(square3, 200, 6, 0),
            C.check_reversibility(square3, 60, 6, 0),
            C.check_adjoint_exactness(small_op, 10, 0),
            C.check_phase_space_identity(square3, SamplingSpec(64, 64), 60000, 0),
            C.check_measure_invariance(square3, 100000, 0),
            C.check_norm_bound(small_op, 20, 0),
            C.check_reflected_source_bound(square3, lo, hi, 1500, 6, 0),
            C.check_normal_split_identity(small_op, 3, 0),
        ]
        for r in results:
            assert r.passed, r.line()

    def test_check_result_line_format(self, square3):
        r = C.check_unfold_collinearity(square3, 20, 6, 0)
        assert r.line().startswith("PASS")
        assert "unfold_collinearity" in r.line()


class TestCLI:
    def test_trace(self, tmp_path):
        cfg = os.path.join(CONFIG_DIR, "square_left.json")
        res = run_cli(["trace", "--config", cfg, "--out", str(tmp_path)])
        assert res.exit_code == 0
        d = kv(res.output)
        assert d["status"] == "MEASURED"
        assert d["segments"] == "4"
        assert float(d["total_length"]) == pytest.approx(2 * np.sqrt(2), rel=1e-12)
        table = (tmp_path / "trace.csv").read_text().splitlines()
        assert table[0].startswith("start0")
        assert len(table) == 5

    def test_forward_and_reconstruct_roundtrip(self, small_cfg, tmp_path):
        res = run_cli(["forward", "--config", small_cfg, "--out", str(tmp_path)])
        assert res.exit_code == 0
        assert (tmp_path / "sinogram.csv").exists()
        assert (tmp_path / "sinogram.bin").exists()
        res2 = run_cli(["reconstruct", "--config", small_cfg, "--out", str(tmp_path),
                        "--data", str(tmp_path / "sinogram.bin")])
        assert res2.exit_code == 0
        assert (tmp_path / "reconstruction.field").exists()
        assert (tmp_path / "convergence.csv").exists()

    def test_reconstruct_simulated(self, small_cfg, tmp_path):
        res = run_cli(["reconstruct", "--config", small_cfg, "--out", str(tmp_path)])
        assert res.exit_code == 0
        d = kv(res.output)
        assert float(d["rel_error_on_support"]) < 0.05

    def test_adjoint_check(self, small_cfg, tmp_path):
        res = run_cli(["adjoint-check", "--config", small_cfg, "--out", str(tmp_path)])
        assert res.exit_code == 0
        assert float(kv(res.output)["rel_discrepancy"]) < 1e-10

    def test_normal_fields(self, small_cfg, tmp_path):
        res = run_cli(["normal", "--config", small_cfg, "--out", str(tmp_path)])
        assert res.exit_code == 0
        assert float(kv(res.output)["split_residual"]) < 1e-12
        for name in ("normal_total", "normal_ballistic", "normal_reflect"):
            assert (tmp_path / f"{name}.field").exists()

    def test_symbol(self, small_cfg, tmp_path):
        res = run_cli(["symbol", "--config", small_cfg, "--out", str(tmp_path)])
        assert res.exit_code == 0
        assert (tmp_path / "symbol.csv").exists()
        assert float(kv(res.output)["positive_fraction"]) > 0.9

    def test_visibility(self, small_cfg, tmp_path):
        res = run_cli(["visibility", "--config", small_cfg, "--out", str(tmp_path)])
        assert res.exit_code == 0
        assert (tmp_path / "visible_fraction.field").exists()
        assert (tmp_path / "invisible_covectors.csv").exists()

    def test_stability_and_perturb(self, small_cfg, tmp_path):
        res = run_cli(["stability", "--config", small_cfg, "--out", str(tmp_path)])
        assert res.exit_code == 0
        assert float(kv(res.output)["c_lower"]) > 0
        res2 = run_cli(["perturb", "--config", small_cfg, "--out", str(tmp_path)])
        assert res2.exit_code == 0
        assert 0.8 <= float(kv(res2.output)["slope"]) <= 1.2

    def test_invariants_exit_code(self, small_cfg, tmp_path):
        res = run_cli(["invariants", "--config", small_cfg, "--out", str(tmp_path)])
        assert res.exit_code == 0, res.output
        d = kv(res.output)
        assert d["failed"] == "0"

    def test_validation_failure_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"grid": {"resolution": 8}}))
        res = run_cli(["forward", "--config", str(bad), "--out", str(tmp_path)])
        assert res.exit_code == 2

    def test_determinism_byte_identical(self, small_cfg, tmp_path):
        outs = []
        for sub in ("a", "b"):
            d = tmp_path / sub
            d.mkdir()
            res = run_cli(["forward", "--config", small_cfg, "--seed", "7",
                           "--out", str(d)])
            assert res.exit_code == 0
            outs.append((d / "sinogram.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_stock_configs_parse(self):
        for name in ("square3", "square3_attenuated", "square_left",
                     "cube_corner", "cube_slab", "beam_square"):
            from brokenray.config import load_run_config
            cfg = load_run_config(os.path.join(CONFIG_DIR, f"{name}.json"))
            dom = cfg.domain()
            assert dom.volume > 0
