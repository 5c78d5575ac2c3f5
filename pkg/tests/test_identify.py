import numpy as np
import pytest

from battwin.autodiff import DenseNet
from battwin.errors import BackendMismatch, NoOverlap
from battwin.identify import (
    SEARCH_BOX,
    TAIL_LENGTHS,
    ChargingSegment,
    FvmBackend,
    PinnBackend,
    append_to_ledger,
    extract_tail,
    fitness,
    identify,
    protocol_profile,
    resample_common_grid,
)
from battwin.optim import DEConfig
from battwin.params import nominal_parameters
from battwin.pinn import PinnModel
from battwin.solver import CurrentProfile, solve_spm


@pytest.fixture(scope="module")
def params():
    return nominal_parameters()


@pytest.fixture(scope="module")
def c3_segment(params):
    profile = protocol_profile("RPT-C/3")
    run = solve_spm(params.with_scales(0.85, 0.90), profile, n_shells=30,
                    dt=4.0, v_limits=(-np.inf, 4.2), store_fields=False)
    return extract_tail("RPT-C/3", run.time, run.voltage, run.current)


class TestProtocolProfiles:
    def test_c3_constant(self):
        p = protocol_profile("RPT-C/3")
        assert p.steps[0][1] == pytest.approx(76.0 / 3.0)

    def test_ladder_currents_decrease(self):
        p = protocol_profile("cyc-1C-multistep")
        currents = [c for _, c in p.steps]
        assert currents == sorted(currents, reverse=True)
        assert currents[0] == pytest.approx(76.0)

    def test_unknown_protocol(self):
        with pytest.raises(ValueError):
            protocol_profile("cv-hold")


class TestChargingSegment:
    def test_tail_span_enforced(self):
        t = np.linspace(0.0, 1000.0, 50)  # far short of the 3600 s tail
        with pytest.raises(ValueError):
            ChargingSegment("RPT-C/3", t, np.full(50, 4.0), np.full(50, 25.0))

    def test_time_must_increase(self):
        t = np.linspace(0.0, 3600.0, 50)
        t[10] = t[9]
        with pytest.raises(ValueError):
            ChargingSegment("RPT-C/3", t, np.full(50, 4.0), np.full(50, 25.0))

    def test_csv_roundtrip(self, c3_segment, tmp_path):
        path = tmp_path / "seg.csv"
        c3_segment.to_csv(path)
        back = ChargingSegment.from_csv(path)
        assert back.protocol == c3_segment.protocol
        assert back.voltage == pytest.approx(c3_segment.voltage, rel=1e-8)


class TestExtractTail:
    def test_window_ends_at_crossing(self, c3_segment):
        assert c3_segment.voltage[-1] >= 4.2
        assert np.all(c3_segment.voltage[:-1] < 4.2)
        span = c3_segment.time[-1] - c3_segment.time[0]
        assert span == pytest.approx(TAIL_LENGTHS["RPT-C/3"], rel=0.01)


class TestResample:
    def test_identical_trajectories(self):
        t = np.linspace(0, 100, 60)
        v = 3.0 + 0.01 * t
        pair = resample_common_grid((t, v), (t, v), n=50)
        assert pair.v_sim == pytest.approx(pair.v_exp)
        assert pair.t_sim == pytest.approx(pair.t_exp)

    def test_linear_ramp_exact(self):
        t = np.linspace(0, 100, 7)
        v = 3.0 + 0.005 * t
        pair = resample_common_grid((t, v), (t, v), n=100)
        assert pair.v_sim == pytest.approx(3.0 + 0.005 * pair.time_grid)

    def test_no_overlap(self):
        a = (np.linspace(0, 10, 5), np.linspace(3.0, 3.1, 5))
        b = (np.linspace(20, 30, 5), np.linspace(3.0, 3.1, 5))
        with pytest.raises(NoOverlap):
            resample_common_grid(a, b)


class TestFitness:
    def test_zero_for_identical(self):
        t = np.linspace(0, 3600, 100)
        v = 3.5 + 1e-4 * t
        assert fitness((t, v), (t, v)) == pytest.approx(0.0, abs=1e-9)

    def test_one_mv_offset_is_unit_fitness(self):
        # 1 mV offset with perfect time alignment -> 1000 * 0.001 = 1.0
        t = np.linspace(0, 3600, 100)
        v = 3.5 + 1e-4 * t
        dt_align = 0.001 / 1e-4  # offset divided by ramp slope
        assert fitness((t, v + 0.001), (t, v),
                       delta_t=dt_align) == pytest.approx(1.0, rel=1e-6)

    def test_time_shift_absorbed_by_delta_t(self):
        # endpoint Delta-t zeroes the time term; the voltage term still sees
        # the shifted ramp (slope 1e-4 V/s x 30 s = 3 mV -> fitness 3.0)
        t = np.linspace(0, 3600, 200)
        v = 3.5 + 1e-4 * t
        shift = 30.0
        f = fitness((t - shift, v), (t, v))
        assert f == pytest.approx(1000.0 * 1e-4 * shift, rel=1e-3)


@pytest.fixture(scope="module")
def fvm_coarse(params):
    return FvmBackend(params, n_shells=30, dt=4.0)


class TestIdentify:
    def test_round_trip_reduced_budget(self, c3_segment, fvm_coarse):
        de = DEConfig(bounds=[list(SEARCH_BOX)] * 2, pop_size=24,
                      iterations=10, seed=7)
        idp = identify(c3_segment, fvm_coarse, de)
        assert idp.backend == "fvm"
        assert idp.n_evals == 240
        # loose tolerances for the reduced budget; the full 100x10 DE budget
        # is exercised in the acceptance suite at 5e-3
        assert idp.eps_plus_scale == pytest.approx(0.85, abs=0.02)
        assert idp.eps_minus_scale == pytest.approx(0.90, abs=0.03)

    def test_polish_refines_de_result(self, c3_segment, fvm_coarse):
        de = DEConfig(bounds=[list(SEARCH_BOX)] * 2, pop_size=24,
                      iterations=10, seed=7)
        rough = identify(c3_segment, fvm_coarse, de)
        fine = identify(c3_segment, fvm_coarse, de, polish=True)
        assert fine.fitness <= rough.fitness
        assert fine.n_evals > rough.n_evals
        assert fine.eps_plus_scale == pytest.approx(0.85, abs=0.01)
        assert fine.eps_minus_scale == pytest.approx(0.90, abs=0.01)

    def test_backend_mismatch(self, c3_segment, params):
        net = DenseNet.init((3, 4, 1), ("tanh", "sigmoid"), seed=0)
        model = PinnModel(net_minus=net, net_plus=net, params=params,
                          profile=protocol_profile("cyc-0.5C"),
                          protocol="cyc-0.5C", sign_i=1, t_final=8400.0)
        with pytest.raises(BackendMismatch):
            identify(c3_segment, PinnBackend(model))

    def test_ledger_append(self, c3_segment, fvm_coarse, tmp_path):
        de = DEConfig(bounds=[list(SEARCH_BOX)] * 2, pop_size=8,
                      iterations=2, seed=0)
        idp = identify(c3_segment, fvm_coarse, de)
        path = tmp_path / "ledger.csv"
        append_to_ledger(path, 70, idp)
        append_to_ledger(path, 140, idp)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("cycle,eps_plus_scale")
        assert len(lines) == 3
