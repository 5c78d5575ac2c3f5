import numpy as np
import pytest

from battwin.errors import NonFiniteState, StoichiometryOutOfRange
from battwin.params import ParameterSet, nominal_parameters
from battwin.solver import (
    CurrentProfile,
    RadialGrid,
    molar_flux,
    overpotential,
    simulate_capacity,
    solve_spm,
    specific_surface_area,
    terminal_voltage,
    total_lithium,
)

C3_CURRENT = 76.0 / 3.0


@pytest.fixture(scope="module")
def params():
    return nominal_parameters()


class TestGeometry:
    def test_specific_surface_area_nominal(self, params):
        assert specific_surface_area(params, "+") == pytest.approx(714000.0)
        assert specific_surface_area(params, "-") == pytest.approx(432600.0)

    def test_specific_surface_area_unit_case(self, params):
        p = params.replace(eps_plus=1.0, R_plus=3.0)
        assert specific_surface_area(p, "+") == pytest.approx(1.0)

    def test_grid_volumes_sum_to_sphere(self):
        for n in (10, 33, 50):
            g = RadialGrid.uniform(n, 5e-6)
            total = 4.0 / 3.0 * np.pi * 5e-6 ** 3
            assert g.volumes.sum() == pytest.approx(total, rel=1e-12)


class TestMolarFlux:
    def test_magnitude_positive_electrode(self, params):
        # |j+| = I / (a+ L+ F N A) with hand-computed reference
        assert abs(molar_flux(params, "+", 25.333)) == pytest.approx(3.21e-6, rel=1e-2)

    def test_zero_current(self, params):
        assert molar_flux(params, "+", 0.0) == 0.0
        assert molar_flux(params, "-", 0.0) == 0.0

    def test_odd_in_current(self, params):
        for tag in ("+", "-"):
            assert molar_flux(params, tag, -25.333) == -molar_flux(params, tag, 25.333)

    def test_charge_fills_anode(self, params):
        # BC is D dc/dr|_R = -j, so filling requires j < 0
        assert molar_flux(params, "-", 10.0) < 0
        assert molar_flux(params, "+", 10.0) > 0


class TestTerminalVoltage:
    def test_zero_current_is_ocp_difference(self, params):
        # golden value frozen from a 40-digit evaluation of the OCP closed forms
        v = terminal_voltage(params, params.c_init_plus, params.c_init_minus, 0.0)
        assert v == pytest.approx(2.7653473389466348, rel=1e-13)

    def test_overpotential_zero_at_zero_flux(self, params):
        assert overpotential(params, "+", 25000.0, 0.0) == 0.0

    def test_overpotential_antisymmetry(self, params):
        for tag, cs in (("+", 30000.0), ("-", 15000.0)):
            assert overpotential(params, tag, cs, -12.0) == pytest.approx(
                -overpotential(params, tag, cs, 12.0), rel=1e-14)

    def test_charging_raises_voltage_above_ocv(self, params):
        ocv = terminal_voltage(params, 40000.0, 10000.0, 0.0)
        assert terminal_voltage(params, 40000.0, 10000.0, C3_CURRENT) > ocv

    def test_stoichiometry_guard(self, params):
        with pytest.raises(StoichiometryOutOfRange):
            terminal_voltage(params, 10.0, 15000.0, 0.0)
        with pytest.raises(StoichiometryOutOfRange):
            terminal_voltage(params, 40000.0, params.c_max_minus * 0.9999, 0.0)


class TestSolve:
    def test_zero_current_equilibrium_bit_identical(self, params):
        res = solve_spm(params, CurrentProfile.constant(0.0, 600.0), dt=1.0,
                        v_limits=(-np.inf, np.inf))
        assert np.all(res.c_minus == params.c_init_minus)
        assert np.all(res.c_plus == params.c_init_plus)
        assert np.all(res.voltage == res.voltage[0])
        assert res.termination == "completed"

    def test_flux_balance_conservation(self, params):
        dt = 1.0
        res = solve_spm(params, CurrentProfile.constant(C3_CURRENT, 1800.0),
                        dt=dt, v_limits=(-np.inf, np.inf))
        for tag in ("-", "+"):
            n_li = total_lithium(res, tag)
            j = molar_flux(params, tag, C3_CURRENT)
            R = params.R_minus if tag == "-" else params.R_plus
            influx_per_step = 4.0 * np.pi * R ** 2 * (-j) * dt
            steps = np.diff(n_li)
            assert np.max(np.abs(steps - influx_per_step) / abs(influx_per_step)) < 1e-3

    def test_spatial_convergence_second_order(self, params):
        profile = CurrentProfile.constant(C3_CURRENT, 900.0)
        kw = dict(dt=0.125, v_limits=(-np.inf, np.inf))
        ref = solve_spm(params, profile, n_shells=160, **kw)
        errs = []
        for ns in (10, 20, 40):
            r = solve_spm(params, profile, n_shells=ns, **kw)
            errs.append(abs(r.c_surf_minus[-1] - ref.c_surf_minus[-1]))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 1.9)

    def test_voltage_limit_termination(self, params):
        res = solve_spm(params, CurrentProfile.constant(C3_CURRENT, 6 * 3600.0),
                        dt=2.0, v_limits=(-np.inf, 4.2))
        assert res.termination == "voltage-limit"
        assert res.voltage[-1] >= 4.2
        assert np.all(res.voltage[:-1] < 4.2)

    def test_concentrations_stay_physical(self, params):
        res = solve_spm(params, CurrentProfile.constant(C3_CURRENT, 3600.0),
                        dt=2.0, v_limits=(-np.inf, np.inf))
        assert res.c_minus.min() > 0 and res.c_minus.max() < params.c_max_minus
        assert res.c_plus.min() > 0 and res.c_plus.max() < params.c_max_plus

    def test_overdischarge_raises(self, params):
        # discharging an already-empty anode must trip the stoichiometry guard
        with pytest.raises((StoichiometryOutOfRange, NonFiniteState)):
            solve_spm(params, CurrentProfile.constant(-2 * C3_CURRENT, 3600.0),
                      dt=2.0, v_limits=(-np.inf, np.inf))

    def test_multi_step_profile_currents(self, params):
        profile = CurrentProfile(((600.0, C3_CURRENT), (600.0, 0.5 * C3_CURRENT)))
        res = solve_spm(params, profile, dt=1.0, v_limits=(-np.inf, np.inf))
        assert res.current[1] == pytest.approx(C3_CURRENT)
        assert res.current[-1] == pytest.approx(0.5 * C3_CURRENT)

    def test_determinism(self, params):
        a = solve_spm(params, CurrentProfile.constant(C3_CURRENT, 600.0), dt=1.0,
                      v_limits=(-np.inf, np.inf))
        b = solve_spm(params, CurrentProfile.constant(C3_CURRENT, 600.0), dt=1.0,
                      v_limits=(-np.inf, np.inf))
        assert np.array_equal(a.voltage, b.voltage)
        assert np.array_equal(a.c_minus, b.c_minus)


class TestCapacity:
    def test_nominal_capacity_near_nameplate(self, params):
        cap = simulate_capacity(params)
        assert 0.85 * 76.0 <= cap <= 1.15 * 76.0

    def test_active_material_loss_reduces_capacity(self, params):
        assert simulate_capacity(params.with_scales(0.85, 0.85)) < simulate_capacity(params)

    def test_zero_length_voltage_window(self, params):
        # lower limit at (or above) the full-state OCV leaves nothing to discharge
        cap = simulate_capacity(params, v_limits=(4.2, 4.2))
        assert cap == 0.0


class TestSerialization:
    def test_parameter_roundtrip(self, tmp_path, params):
        path = tmp_path / "params.json"
        params.to_json(path)
        assert ParameterSet.from_json(path) == params

    def test_result_csv_columns(self, tmp_path, params):
        res = solve_spm(params, CurrentProfile.constant(C3_CURRENT, 60.0), dt=1.0,
                        v_limits=(-np.inf, np.inf))
        path = tmp_path / "sim.csv"
        res.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "time_s,voltage_V,c_surf_neg,c_surf_pos,eta_neg,eta_pos"
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data.shape == (61, 6)

    def test_invalid_parameters_rejected(self, params):
        with pytest.raises(ValueError):
            params.replace(eps_plus=0.0)
        with pytest.raises(ValueError):
            params.replace(c_init_minus=40000.0)
