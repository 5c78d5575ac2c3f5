import numpy as np
import pytest

from battwin.errors import LengthMismatch
from battwin.params import nominal_parameters
from battwin.sensitivity import (
    IdentifiableSet,
    perturb_grid,
    run_oat_analysis,
    sensitivity_index,
)


class TestPerturbGrid:
    def test_endpoints_unit_nominal(self):
        g = perturb_grid(1.0, 0.1, 10)
        assert len(g) == 10
        assert g[0] == pytest.approx(0.9)
        assert g[-1] == pytest.approx(1.1)
        assert np.allclose(np.diff(g), g[1] - g[0])

    def test_two_samples(self):
        assert perturb_grid(1.0, 0.1, 2) == pytest.approx([0.9, 1.1])

    def test_nominal_0714(self):
        g = perturb_grid(0.714, 0.1, 10)
        assert g[0] == pytest.approx(0.6426)
        assert g[-1] == pytest.approx(0.7854)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            perturb_grid(1.0, 0.0, 10)
        with pytest.raises(ValueError):
            perturb_grid(1.0, 0.1, 1)


class TestSensitivityIndex:
    def test_identical_trajectories(self):
        r = np.tile(np.linspace(3.0, 4.2, 50), (10, 1))
        # np.std of ten identical rows carries mean-subtraction rounding noise
        assert sensitivity_index(r) == pytest.approx(0.0, abs=1e-14)

    def test_two_constant_trajectories(self):
        r = np.vstack([np.full(20, 3.0), np.full(20, 3.2)])
        assert sensitivity_index(r) == pytest.approx(0.1)

    def test_arithmetic_progression(self):
        delta = 0.01
        base = 3.6
        r = np.array([[base + k * delta] * 7 for k in range(10)])
        assert sensitivity_index(r) == pytest.approx(delta * np.std(np.arange(10)))
        assert sensitivity_index(r) == pytest.approx(delta * 2.8722813, rel=1e-6)

    def test_offset_invariance(self):
        rng = np.random.default_rng(0)
        r = rng.normal(3.7, 0.05, size=(10, 40))
        assert sensitivity_index(r + 0.5) == pytest.approx(sensitivity_index(r))

    def test_linear_scaling(self):
        rng = np.random.default_rng(1)
        r = rng.normal(3.7, 0.05, size=(10, 40))
        assert sensitivity_index(3.0 * r) == pytest.approx(3.0 * sensitivity_index(r))

    def test_shape_guard(self):
        with pytest.raises(LengthMismatch):
            sensitivity_index(np.zeros(10))

    def test_non_negative(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            r = rng.normal(size=(10, 13))
            assert sensitivity_index(r) >= 0.0


class TestOatAnalysis:
    @pytest.fixture(scope="class")
    def report(self):
        return run_oat_analysis(nominal_parameters())

    def test_reference_ranking(self, report):
        assert report.ranking == (
            "eps_plus", "eps_minus", "k_plus", "k_minus", "D_minus", "D_plus")

    def test_si_non_negative(self, report):
        assert np.all(report.si >= 0)

    def test_volume_fractions_rank_first(self, report):
        assert set(report.ranking[:2]) == {"eps_plus", "eps_minus"}

    def test_argmax_stable_under_span(self):
        small = run_oat_analysis(nominal_parameters(), span=0.05, n_samples=4)
        assert small.ranking[0] == "eps_plus"

    def test_csv_export(self, report, tmp_path):
        report.to_csv(tmp_path / "si.csv")
        lines = (tmp_path / "si.csv").read_text().splitlines()
        assert lines[0] == "parameter,si_V,si_trajectory_mean_V,rank"
        assert len(lines) == 7
        report.trajectories_to_csv(tmp_path / "traj.csv")
        data = np.loadtxt(tmp_path / "traj.csv", delimiter=",", skiprows=1)
        assert data.shape[1] == 1 + 6 * 10


class TestIdentifiableSet:
    def test_from_params(self):
        s = IdentifiableSet.from_params(nominal_parameters())
        assert len(s.names) == 6
        assert s.lower[2] == pytest.approx(0.714 * 0.9)

    def test_bounds_must_contain_nominal(self):
        with pytest.raises(ValueError):
            IdentifiableSet(names=("a",) * 6, nominal=(1.0,) * 6,
                            lower=(1.5,) * 6, upper=(2.0,) * 6)
