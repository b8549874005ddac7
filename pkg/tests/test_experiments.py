import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
import sympy as sp

from src.errors import ConfigError, DimensionMismatchError, SpecError, UnsupportedError
from src.experiments import (
    CSV_COLUMNS,
    ExperimentConfig,
    ExperimentReport,
    ExperimentRow,
    GammaTerm,
    LemmaCoefficients,
    bump_function,
    certify_convergence,
    certify_divergence,
    config_hash,
    convergence_study,
    coordinate_weights,
    delta_eval,
    eps_close_check,
    gamma_eval,
    largest_close_mu,
    lemma_coefficients,
    level_polytope,
    load_experiment_config,
    mu_h,
    omega_h_cap,
    run_level,
    upsilon,
    upsilon_polynomial,
    upsilon_subspaces,
    upsilon_tensor,
    write_report_csv,
    write_run_summary,
)
from src.geometry import cube

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def make_config(**overrides) -> ExperimentConfig:
    values = dict(n=3, terms=[GammaTerm(j=2, coefficient=1.0)], h=0.05, eps=0.2, mu=0.019, t_values=[0.02, 0.01])
    values.update(overrides)
    return ExperimentConfig(**values)


def make_report(defects, errors=None, target=None) -> ExperimentReport:
    ts = [0.04 / 2 ** i for i in range(len(defects))]
    rows = [
        ExperimentRow(t=t, w_k=1.0, gamma_e=1.0, gamma_theta_e=1.0 + d, defect=d, quad_err=1e-9,
                      target_error=None if errors is None else errors[i])
        for i, (t, d) in enumerate(zip(ts, defects))
    ]
    return ExperimentReport(name="synthetic", config_hash="0" * 16, lemma=LemmaCoefficients(s0=0, q=1),
                            rows=rows, target=target)


class TestCaps:
    def test_mu_h(self):
        assert mu_h(0.05) == pytest.approx(1.0 - 1.0 / math.sqrt(1.1))
        with pytest.raises(ConfigError):
            mu_h(0.0)

    def test_cap_limit(self):
        assert omega_h_cap(0.05).cap_threshold == pytest.approx(1.0 / math.sqrt(1.1))
        assert omega_h_cap(0.05, mu=0.019).cap_threshold == pytest.approx(0.981)
        with pytest.raises(ConfigError):
            omega_h_cap(0.05, mu=0.1)

    def test_eps_close(self):
        cap = omega_h_cap(0.05, mu=0.019)
        assert eps_close_check(cap, 0.2)
        assert not eps_close_check(cap, 0.1)
        assert eps_close_check(omega_h_cap(1.0, mu=largest_close_mu(0.05)), 0.05)

    def test_bump(self):
        f = bump_function(omega_h_cap(0.05, mu=0.019))
        assert f([0.0, 0.0, -1.0])[0] == pytest.approx(0.019 ** 2)
        assert f([1.0, 0.0, 0.0])[0] == 0.0


class TestConfig:
    def test_shipped_configs_load(self):
        for path in sorted(CONFIG_DIR.glob("*.json")):
            assert load_experiment_config(path).name == path.stem

    @pytest.mark.parametrize("overrides", [
        {"t_values": [0.01, 0.02]},
        {"t_values": [0.02, -0.01]},
        {"k": 2},
        {"terms": [GammaTerm(j=2, coefficient=1.0), GammaTerm(j=1, coefficient=1.0)]},
        {"mu": 0.1},
        {"eps": 0.1},
        {"complex_kind": "triangle"},
        {"average": True},
        {"target": "smooth"},
        {"a": [0.0, 0.0]},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ValueError):
            make_config(**overrides)

    def test_load_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_experiment_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_experiment_config(bad)
        bad.write_text(json.dumps({"n": 5}))
        with pytest.raises(ConfigError):
            load_experiment_config(bad)

    def test_hash(self):
        path = CONFIG_DIR / "j2_n4.json"
        first, second = load_experiment_config(path), load_experiment_config(path)
        assert config_hash(first) == config_hash(second)
        assert len(config_hash(first)) == 16
        assert config_hash(first.model_copy(update={"h": 0.04})) != config_hash(first)

    def test_arguments(self):
        config = load_experiment_config(CONFIG_DIR / "j2_n4.json")
        E, theta_E = config.arguments()
        assert len(E) == 4
        assert np.allclose(E[0], [1.0, 0.0, 0.0, 0.0])
        assert np.allclose(theta_E[0], [math.sqrt(0.5), math.sqrt(0.5), 0.0, 0.0])

    def test_default_angle_follows_d(self):
        config = load_experiment_config(CONFIG_DIR / "j3_n3.json")
        assert np.allclose(config.rotation.apply([1.0, 0.0, 0.0]), [math.cos(math.pi / 6), math.sin(math.pi / 6), 0.0])


class TestLemmaCoefficients:
    def test_mixed_terms(self):
        lemma = lemma_coefficients(load_experiment_config(CONFIG_DIR / "j3_n3.json"))
        assert (lemma.s0, lemma.q, lemma.d) == (0, 3, 3)
        assert lemma.coefficients == pytest.approx({2: 1 / (2 * math.pi), 3: 1 / (2 * math.pi)})

    def test_no_high_terms(self):
        lemma = lemma_coefficients(make_config(terms=[GammaTerm(j=1, s=2, coefficient=1.0)]))
        assert lemma.q == 1 and lemma.s0 == 2
        assert lemma.coefficients == {} and lemma.d is None

    def test_mismatched_power_is_dropped(self):
        terms = [GammaTerm(j=2, s=0, coefficient=1.0), GammaTerm(m=1, j=0, s=2, coefficient=5.0)]
        lemma = lemma_coefficients(make_config(terms=terms))
        assert list(lemma.coefficients) == [2]


class TestGamma:
    @pytest.fixture
    def config(self):
        return make_config()

    def test_cube_bottom_edges(self, config):
        value = gamma_eval(cube(3), config)
        assert value.w_k > 0
        assert value.at_e == pytest.approx(value.delta, rel=1e-12)
        # e_1 edges count fully at E, every bottom edge counts 1/4 at theta E
        assert value.at_theta_e == pytest.approx(value.at_e / 2.0, rel=1e-10)

    def test_delta_agrees(self, config):
        P = cube(3)
        assert delta_eval(P, config).at_e_prime == pytest.approx(gamma_eval(P, config).delta, rel=1e-12)

    def test_dimension_mismatch(self, config):
        with pytest.raises(DimensionMismatchError):
            gamma_eval(cube(4), config)

    @pytest.mark.slow
    def test_j1_level_is_rotation_invariant(self):
        config = load_experiment_config(CONFIG_DIR / "j1_n3.json")
        row = run_level(config, 0.02)
        assert row.defect <= 1e-6 * abs(row.gamma_e)
        assert row.residual_ratio is None

    @pytest.mark.slow
    def test_cube_complex_weights_balance(self):
        config = load_experiment_config(CONFIG_DIR / "j1_n3.json")
        weights = coordinate_weights(level_polytope(config, 0.02), 1, config.bump)
        assert list(weights) == [(0,), (1,)]
        assert weights[(0,)] == pytest.approx(weights[(1,)], rel=1e-9)


class TestCertificates:
    def test_divergence(self):
        assert certify_divergence(make_report([0.5, 0.30, 0.31])).passed
        assert not certify_divergence(make_report([0.5, 0.1, 0.01])).passed
        assert not certify_divergence(make_report([0.5])).passed

    def test_convergence(self):
        report = make_report([1e-3, 1e-5, 1e-7], errors=[0.1, 0.03, 0.005], target=1.0)
        assert certify_convergence(report).passed
        stalled = make_report([1e-3, 1e-5, 1e-7], errors=[0.1, 0.05, 0.05], target=1.0)
        assert not certify_convergence(stalled).passed
        assert not certify_convergence(make_report([1e-3, 1e-5])).passed

    @pytest.mark.slow
    def test_smooth_limit_of_j1_config(self):
        report = convergence_study(load_experiment_config(CONFIG_DIR / "j1_n3.json"), threads=1)
        certificate = certify_convergence(report)
        assert certificate.passed, certificate.detail
        assert report.rows[-1].target_error < report.rows[0].target_error

    @pytest.mark.slow
    def test_persistent_defect_of_j2_config(self):
        report = convergence_study(load_experiment_config(CONFIG_DIR / "j2_n4.json"), threads=1)
        certificate = certify_divergence(report)
        assert certificate.passed, certificate.detail
        assert report.rows[-1].defect > 10.0 * report.rows[-1].quad_err

    def test_rows_must_decrease(self):
        with pytest.raises(ValueError):
            ExperimentReport(name="x", config_hash="0", lemma=LemmaCoefficients(s0=0, q=1),
                             rows=[ExperimentRow(t=0.01, w_k=1, gamma_e=1, gamma_theta_e=1, defect=0),
                                   ExperimentRow(t=0.02, w_k=1, gamma_e=1, gamma_theta_e=1, defect=0)])


class TestReports:
    def test_csv(self, tmp_path):
        path = write_report_csv(make_report([0.5, 0.3]), tmp_path / "out" / "report.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert "lemma51_ratio" in lines[0]
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        assert float(rows[1]["defect"]) == pytest.approx(0.3)
        assert rows[0]["lemma51_ratio"] == ""

    def test_summary(self, tmp_path):
        report = make_report([0.5, 0.3])
        cert = certify_divergence(report)
        path = write_run_summary(report, tmp_path / "summary.json", certificates=[cert])
        data = json.loads(path.read_text())
        assert data["certificates"][0]["name"] == "divergence:synthetic"
        assert len(data["rows"]) == 2


class TestUpsilon:
    def test_subspaces(self):
        assert len(upsilon_subspaces(4, 1)) == 3
        assert len(upsilon_subspaces(4, 1, "coordinate_reduced")) == 2
        assert len(upsilon_subspaces(3, 1, "polygon", d=3)) == 3
        with pytest.raises(SpecError):
            upsilon_subspaces(3, 3)
        with pytest.raises(ConfigError):
            upsilon_subspaces(3, 1, "hexagon")

    def test_tensor(self):
        value = upsilon_tensor({2: 1.0}, 2, 3, 1)
        assert value.polynomial([1.0, 0.0, 0.0])[0] == pytest.approx(1.0)
        assert value.polynomial([math.sqrt(0.5), math.sqrt(0.5), 0.0])[0] == pytest.approx(0.5)
        with pytest.raises(SpecError):
            upsilon_tensor({1: 1.0}, 2, 3, 1)

    def test_family_from_config(self):
        assert upsilon(load_experiment_config(CONFIG_DIR / "j3_n3.json")).family == "polygon"
        assert upsilon(load_experiment_config(CONFIG_DIR / "j2_n4.json")).family == "coordinate"
        triangle = make_config(complex_kind="triangle", d=3)
        with pytest.raises(UnsupportedError):
            upsilon(triangle)

    def test_leading_coefficient(self):
        poly = upsilon_polynomial({2: 1.0}, 2, 3, 1)
        lam = poly.variables[0]
        assert sp.expand(poly.expression - (1 - 2 * lam ** 2 + 2 * lam ** 4)) == 0
        assert poly.leading_coefficient == 2
        assert poly.matches_expected

    def test_cancelling_combination_is_constant(self):
        poly = upsilon_polynomial({2: 3.0, 3: -2.0}, 3, 3, 1)
        assert poly.is_constant
        assert poly.expression == 1

    def test_polygon_family(self):
        poly = upsilon_polynomial({3: 1.0}, 3, 3, 1, "polygon", d=3)
        assert poly.leading_coefficient == 3
        assert poly.matches_expected

    def test_two_parameter_curve(self):
        poly = upsilon_polynomial({3: 1.0}, 3, 4, 1)
        assert len(poly.variables) == 2
        assert poly.matches_expected
