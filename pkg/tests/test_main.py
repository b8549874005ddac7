import json
from pathlib import Path
from unittest.mock import patch

import pytest

from src.errors import ConfigError
from src.experiments import ExperimentReport, ExperimentRow, LemmaCoefficients
from src.identities import IdentityRow
from src.main import cmd_compute, main, parse_eta
from src.sphereint import CapPolynomial
from src.symtensor import metric_tensor
from src.valuations import Full, ProductIndicator

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestParseEta:
    def test_full(self):
        assert isinstance(parse_eta(None, 3), Full)
        assert isinstance(parse_eta(["full"], 3), Full)

    def test_box_and_cap(self):
        eta = parse_eta(["box:0,0,0:0.5,1,1", "cap:1,0,0:0.5"], 3)
        assert isinstance(eta, ProductIndicator)
        assert eta.beta.volume == pytest.approx(0.5)
        assert eta.omega.cap_threshold == pytest.approx(0.5)

    def test_weight(self):
        f = parse_eta(["weight:0,0,1:1,0.5:0.2"], 3)
        assert isinstance(f, CapPolynomial)
        assert f.threshold == pytest.approx(0.2)
        assert f.coefficients == (1.0, 0.5)

    @pytest.mark.parametrize("items", [
        ["bogus"],
        ["cap:1,0,0"],
        ["box:a,b,c:1,1,1"],
        ["weight:0,0,1:1", "cap:0,0,1:0.5"],
        ["weight:0,1:1"],
    ])
    def test_invalid(self, items):
        with pytest.raises(ConfigError):
            parse_eta(items, 3)


class TestCompute:
    def test_cube(self, capsys):
        assert main(["compute", "--body", "cube", "--k", "1"]) == 0
        assert "Value: 3" in capsys.readouterr().out

    def test_segment(self):
        tensor = cmd_compute(body="segment:L=2", k=1)
        assert tensor.coefficients[0] == pytest.approx(2.0)

    def test_localized(self):
        tensor = cmd_compute(body="cube", k=2, eta=["cap:1,0,0:0.5"])
        assert tensor.coefficients[0] == pytest.approx(0.5)

    def test_ball(self):
        tensor = cmd_compute(body="ball:R=1", k=1, j=1)
        assert tensor.allclose(metric_tensor(3) * (4.0 / 3.0), atol=1e-9)

    def test_smooth_surface_indices(self):
        assert main(["compute", "--body", "ball:R=1", "--k", "0"]) == 2

    def test_written_tensor(self, tmp_path):
        out = tmp_path / "tensor.csv"
        assert main(["compute", "--body", "cube", "--k", "1", "--s", "2", "--out", str(out), "--format", "csv"]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "index,value"
        assert len(lines) == 7

    def test_polytope_file(self, tmp_path):
        path = tmp_path / "tetra.json"
        path.write_text(json.dumps({"dimension": 3, "vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]}))
        assert main(["compute", "--polytope", str(path), "--k", "0"]) == 0

    def test_input_errors(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"dimension\": 3}")
        assert main(["compute", "--polytope", str(bad)]) == 2
        assert main(["compute"]) == 2
        assert main(["compute", "--body", "pyramid"]) == 2
        assert main(["compute", "--body", "cube", "--k", "0", "--j", "1"]) == 2


class TestIdentitySuiteCommand:
    @patch("src.main.run_identity_suite")
    def test_passing(self, mock_suite, tmp_path):
        mock_suite.return_value = [IdentityRow(check="mcmullen", case="c", defect=0.0, tolerance=1e-8, status="pass")]
        out = tmp_path / "identities.csv"
        assert main(["identity-suite", "--scope", "mcmullen", "--out", str(out)]) == 0
        assert out.exists()
        assert mock_suite.call_args.args[0] == ["mcmullen"]

    @patch("src.main.run_identity_suite")
    def test_failing(self, mock_suite, tmp_path):
        mock_suite.return_value = [IdentityRow(check="valuation", case="c", defect=1.0, tolerance=1e-8, status="fail")]
        assert main(["identity-suite", "--all", "--out", str(tmp_path / "x.csv")]) == 1


class TestExperimentCommand:
    @staticmethod
    def report(defects):
        rows = [ExperimentRow(t=0.02 / 2 ** i, w_k=1.0, gamma_e=1.0, gamma_theta_e=1.0 + d, defect=d, quad_err=1e-12)
                for i, d in enumerate(defects)]
        return ExperimentReport(name="j2_n4", config_hash="0" * 16, lemma=LemmaCoefficients(s0=0, q=2), rows=rows)

    @patch("src.main.convergence_study")
    def test_run_writes_reports(self, mock_study, tmp_path):
        mock_study.return_value = self.report([0.5, 0.30, 0.31])
        out = tmp_path / "j2_n4.csv"
        assert main(["experiment", "run", str(CONFIG_DIR / "j2_n4.json"), "--out", str(out)]) == 0
        assert out.read_text().startswith("t,W_k,")
        summary = json.loads(out.with_suffix(".summary.json").read_text())
        assert summary["certificates"][0]["passed"] is True

    @patch("src.main.convergence_study")
    def test_vanishing_defect_fails(self, mock_study, tmp_path):
        mock_study.return_value = self.report([0.5, 0.05, 0.005])
        assert main(["experiment", "run", str(CONFIG_DIR / "j2_n4.json"), "--out", str(tmp_path / "r.csv")]) == 1

    def test_upsilon(self, capsys):
        assert main(["experiment", "upsilon", str(CONFIG_DIR / "j3_n3.json")]) == 0
        assert "polygon" in capsys.readouterr().out

    def test_missing_config(self, tmp_path):
        assert main(["experiment", "run", str(tmp_path / "none.json")]) == 2


class TestValidateCommand:
    def test_valid(self):
        assert main(["validate", "--config", str(CONFIG_DIR / "j1_n3.json")]) == 0

    @patch("src.main.settings")
    def test_bad_settings(self, mock_settings):
        mock_settings.validate_settings.return_value = ["THREADS (must be >= 1)"]
        assert main(["validate"]) == 2

    def test_no_command(self, capsys):
        assert main([]) == 0
        assert "usage" in capsys.readouterr().out


class TestReproducibility:
    def test_identity_table_is_byte_identical(self, tmp_path):
        outputs = []
        for name, threads in (("first.csv", "1"), ("second.csv", "2")):
            path = tmp_path / name
            args = ["identity-suite", "--scope", "intrinsic", "--scope", "mcmullen", "--scope", "valuation",
                    "--trials", "3", "--max-rank", "1", "--seed", "5", "--threads", threads, "--out", str(path)]
            assert main(args) == 0
            outputs.append(path.read_bytes())
        assert outputs[0] == outputs[1]

    @pytest.mark.slow
    def test_experiment_table_is_byte_identical(self, tmp_path):
        outputs = []
        for name in ("first.csv", "second.csv"):
            path = tmp_path / name
            assert main(["experiment", "run", str(CONFIG_DIR / "j1_n3.json"), "--threads", "2", "--out", str(path)]) == 0
            outputs.append(path.read_bytes())
        assert outputs[0] == outputs[1]
