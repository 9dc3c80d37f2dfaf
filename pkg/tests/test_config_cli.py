import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from cvsheet.cli import main
from cvsheet.config import initial_state, load_scenario, parse_text, scenario_from_dict
from cvsheet.dynamics import Model, planar_state
from cvsheet.errors import ConfigError
from cvsheet.fields import Grid
from cvsheet.runner import write_snapshot

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

BASE = {"scenario.name": "t", "physics.c0": "0.1", "grid.nx": "8", "grid.ny": "8", "grid.nz": "7"}


def cfg(tmp_path, **kv):
    d = dict(BASE)
    d.update({k.replace("__", "."): str(v) for k, v in kv.items()})
    p = tmp_path / "run.cfg"
    p.write_text("".join(f"{k} = {v}\n" for k, v in d.items()))
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_parse_comments_and_separators(self):
        d = parse_text("# note\n\nphysics.v = 1, 0\n  grid.nx=16  \n")
        assert d == {"physics.v": "1, 0", "grid.nx": "16"}
        assert scenario_from_dict({**BASE, "physics.v": "1 0"}).v == (1.0, 0.0)

    @pytest.mark.parametrize("text, key", [
        ("no equals sign", "line 1"),
        ("= 3", "line 1"),
    ])
    def test_parse_errors(self, text, key):
        with pytest.raises(ConfigError) as exc:
            parse_text(text)
        assert exc.value.key == key

    @pytest.mark.parametrize("patch, key", [
        ({"physics.c0": ""}, "physics.c0"),
        ({"physics.c0": "0.7"}, "physics.c0"),
        ({"grid.nx": "many"}, "grid.nx"),
        ({"physics.v": "1, 2, 3"}, "physics.v"),
        ({"initial.kind": "vortex"}, "initial.kind"),
        ({"initial.kind": "custom"}, "initial.file"),
        ({"perturbation.mode": "0, 0"}, "perturbation.mode"),
        ({"time.cfl_safety": "2"}, "time.cfl_safety"),
        ({"physics.h_plus": "1, 0"}, "initial.kind"),
        ({"run.stability_gate": "perhaps"}, "run.stability_gate"),
        ({"geometry.delta0": "0"}, "geometry.delta0"),
        ({"elliptic.max_iter": "0"}, "elliptic.max_iter"),
    ])
    def test_validation_names_the_key(self, patch, key):
        with pytest.raises(ConfigError) as exc:
            scenario_from_dict({**BASE, **patch})
        assert exc.value.key == key

    def test_synonyms(self):
        d = {"scenario.name": "t", "geometry.c0": "0.2", "geometry.Nz": "9", "elliptic.tol": "1e-9"}
        sc = scenario_from_dict(d)
        assert (sc.c0, sc.nz, sc.tol, sc.delta0, sc.max_iter) == (0.2, 9, 1e-9, 0.1, 500)
        with pytest.raises(ConfigError) as exc:
            scenario_from_dict({**BASE, "geometry.c0": "0.3"})
        assert exc.value.key == "geometry.c0"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_scenario(tmp_path / "absent.cfg")

    def test_custom_initial_round_trip(self, tmp_path):
        g = Grid.make(8, 8, 7)
        st0 = planar_state(g, (0.5, 0), (-0.5, 0), (1, 0), (0, 1), amplitude=0.05, mode=(1, 1))
        write_snapshot(tmp_path / "init.cvs1", st0)
        sc = load_scenario(cfg(tmp_path, initial__kind="custom", initial__file=tmp_path / "init.cvs1"))
        back = initial_state(sc)
        for k, v in st0.pack().items():
            np.testing.assert_array_equal(back.pack()[k], v)

    def test_custom_grid_mismatch(self, tmp_path):
        st0 = planar_state(Grid.make(16, 16, 7), (0, 0), (0, 0), (0, 0), (0, 0))
        write_snapshot(tmp_path / "init.cvs1", st0)
        sc = load_scenario(cfg(tmp_path, initial__kind="custom", initial__file=tmp_path / "init.cvs1"))
        with pytest.raises(ConfigError, match="does not match"):
            initial_state(sc)

    def test_shipped_scenarios_load(self):
        for p in sorted(SCENARIOS.glob("*.cfg")):
            sc = load_scenario(p)
            assert sc.name == p.stem


class TestSimulate:
    def test_equilibrium_columns_constant(self, tmp_path):
        out = tmp_path / "eq"
        assert main(["simulate", str(SCENARIOS / "planar_equilibrium.cfg"), "--out", str(out)]) == 0
        rows = read_csv(out / "diagnostics.csv")
        assert len(rows) > 2
        for col in ("lambda_min", "energy", "mean_f", "Es"):
            vals = np.array([float(r[col]) for r in rows])
            assert np.ptp(vals) <= 1e-10 * max(1.0, abs(vals[0]))
        assert float(rows[0]["lambda_min"]) == pytest.approx(0.5)
        man = json.loads((out / "manifest.json").read_text())
        assert man["exit_code"] == 0 and man["status"] == "ok"
        assert {"diagnostics.csv", "final.cvs1", "manifest.json"} <= set(man["outputs"])
        assert man["config"]["physics.c0"] == "0.1"
        assert man["final"]["within_delta0"] and man["final"]["surface_w1inf_drift"] < 1e-12

    def test_deterministic(self, tmp_path):
        p = cfg(tmp_path, initial__kind="magnetized_kh", physics__v="1, 0", physics__h_plus="2, 0",
                physics__h_minus="0, 2", perturbation__amplitude=0.05, perturbation__mode="1, 1",
                time__t_end=0.2)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", str(p), "--out", str(a)]) == 0
        assert main(["simulate", str(p), "--out", str(b)]) == 0
        assert (a / "diagnostics.csv").read_bytes() == (b / "diagnostics.csv").read_bytes()
        assert (a / "final.cvs1").read_bytes() == (b / "final.cvs1").read_bytes()

    def test_growth_column(self, tmp_path):
        p = cfg(tmp_path, physics__v="0.5, 0", perturbation__amplitude="1e-6",
                run__stability_gate="false", time__t_end=3, time__dt=0.05)
        assert main(["simulate", str(p), "--out", str(tmp_path / "kh")]) == 0
        rows = read_csv(tmp_path / "kh" / "diagnostics.csv")
        assert float(rows[-1]["lambda_min"]) < 0
        man = json.loads((tmp_path / "kh" / "manifest.json").read_text())
        assert man["final"]["growth_fit"]["rate"] == pytest.approx(0.5, rel=0.02)
        assert rows[-1]["growth_rate"] != ""

    def test_missing_key_exit_2(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("scenario.name = bad\n")
        assert main(["simulate", str(p), "--out", str(tmp_path / "bad")]) == 2
        man = json.loads((tmp_path / "bad" / "manifest.json").read_text())
        assert man["failure"]["key"] == "physics.c0"

    def test_gate_refusal(self, tmp_path):
        p = cfg(tmp_path, physics__v="0.5, 0")
        assert main(["simulate", str(p), "--out", str(tmp_path / "g")]) == 2
        man = json.loads((tmp_path / "g" / "manifest.json").read_text())
        assert man["failure"]["key"] == "run.stability_gate"

    def test_dt_above_cfl(self, tmp_path):
        p = cfg(tmp_path, initial__kind="magnetized_kh", physics__v="1, 0", physics__h_plus="2, 0",
                physics__h_minus="0, 2", time__dt=5)
        assert main(["simulate", str(p), "--out", str(tmp_path / "c")]) == 2
        man = json.loads((tmp_path / "c" / "manifest.json").read_text())
        assert man["failure"]["key"] == "time.dt"
        assert 0 < man["failure"]["suggested_dt"] < 5


class TestTools:
    def test_dispersion_csv(self, tmp_path):
        out = tmp_path / "d.csv"
        assert main(["dispersion", "--v", "1,0", "--hplus", "0,0", "--hminus", "0,0",
                     "--modes", "1,0;0,1", "--out", str(out)]) == 0
        rows = read_csv(out)
        assert len(rows) == 2
        assert float(rows[0]["growth_rate"]) == pytest.approx(1.0)
        assert float(rows[1]["growth_rate"]) == pytest.approx(0.0)

    def test_dispersion_kmax(self, capsys):
        assert main(["dispersion", "--v", "1,0", "--hplus", "2,0", "--hminus", "0,2", "--kmax", "2"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        # 12 lattice points with 0 < |xi| <= 2 split into +- pairs, plus the header
        assert len(lines) == 1 + 6

    @pytest.mark.parametrize("args, code, stable", [
        (["--v", "1,0", "--hplus", "2,0", "--hminus", "0,2"], 0, True),
        (["--v", "1,0"], 1, False),
        (["--uplus", "1.3,0", "--uminus=-1.3,0", "--hplus", "2,0", "--hminus", "0,2", "--c0", "0.45"], 1, True),
    ])
    def test_stability_check(self, capsys, args, code, stable):
        assert main(["stability-check", *args]) == code
        rep = json.loads(capsys.readouterr().out)
        assert rep["stable"] is stable

    def test_stability_check_config(self, capsys):
        assert main(["stability-check", "--config", str(SCENARIOS / "planar_equilibrium.cfg")]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["gate_passed"] and rep["lambda_min"] == pytest.approx(0.5)

    def test_stability_check_needs_input(self, capsys):
        assert main(["stability-check"]) == 2

    def test_selftest_filter(self, capsys):
        assert main(["selftest", "--filter", "dno"]) == 0
        out = capsys.readouterr().out
        assert out.strip().splitlines()[-1] == "2/2 passed"

    def test_dno_selftest_tightened(self, capsys, tmp_path):
        path = tmp_path / "r.json"
        assert main(["dno-selftest", "--tighten", "1e6", "--json", str(path)]) == 1
        out = capsys.readouterr().out
        assert "failing: 1, 2" in out
        assert [r["number"] for r in json.loads(path.read_text())] == [1, 2]

    def test_console_script_installed(self):
        assert shutil.which("cvsheet") is not None
