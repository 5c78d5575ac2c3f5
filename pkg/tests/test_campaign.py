import numpy as np
import pytest

from battwin.campaign import (
    SCALE_FLOOR,
    AgingScenario,
    Condition,
    default_scenarios,
    degradation_trajectory,
    generate_segment,
    run_campaign,
    _window_profile,
)
from battwin.identify import TAIL_LENGTHS
from battwin.params import nominal_parameters

COARSE = dict(n_shells=30, dt=4.0, capacity_dt=4.0)


@pytest.fixture(scope="module")
def params():
    return nominal_parameters()


def make_scenario(**kw):
    base = dict(cell_id=1, condition=Condition("0.5C", "1C", 1.0),
                n_cycles=700, capacity_loss=0.2, a_plus=0.2, b_plus=1.0,
                a_minus=0.1, b_minus=1.2, rpt_interval=70, noise_v=0.0, seed=0)
    base.update(kw)
    return AgingScenario(**base)


class TestDegradation:
    def test_zero_amplitude_constant(self):
        traj = degradation_trajectory(make_scenario(a_plus=0.0, a_minus=0.0))
        assert np.all(traj[:, 1] == 1.0)
        assert np.all(traj[:, 2] == 1.0)

    def test_linear_endpoint(self):
        traj = degradation_trajectory(make_scenario(a_plus=0.3, b_plus=1.0))
        assert traj[-1, 1] == pytest.approx(0.70)

    def test_monotone_and_floored(self):
        traj = degradation_trajectory(make_scenario(a_plus=0.5, b_plus=2.0))
        assert np.all(np.diff(traj[:, 1]) <= 0)
        assert np.all(traj[:, 1] >= SCALE_FLOOR)

    def test_checkpoint_count(self):
        traj = degradation_trajectory(make_scenario(n_cycles=700))
        assert len(traj) == 700 // 70 + 1
        assert traj[0, 1] == 1.0 and traj[0, 2] == 1.0


class TestScenarios:
    def test_seven_cells(self):
        scens = default_scenarios(seed=0)
        assert [s.cell_id for s in scens] == list(range(1, 8))
        assert scens[0].condition.tag == "0.5C/80%"
        assert scens[4].condition.protocol == "cyc-1C-multistep"
        assert scens[5].capacity_loss == pytest.approx(0.0969)

    def test_amplitudes_within_floor(self):
        for s in default_scenarios(seed=1):
            assert s.a_plus <= 1.0 - SCALE_FLOOR
            assert s.a_minus <= 1.0 - SCALE_FLOOR


class TestWindowProfile:
    def test_full_window_unchanged_duration(self):
        full = _window_profile("cyc-0.5C", 1.0)
        throughput = sum(d * c for d, c in full.steps)
        assert throughput <= 1.0 * 76.0 * 3600.0 + 1e-6

    def test_eighty_percent_throughput(self):
        p = _window_profile("cyc-0.5C", 0.8)
        throughput = sum(d * c for d, c in p.steps)
        assert throughput == pytest.approx(0.8 * 76.0 * 3600.0)


class TestSegments:
    def test_tail_lengths_per_protocol(self, params):
        for cond in (Condition("0.5C", "1C", 1.0), Condition("1C", "1C", 1.0)):
            seg = generate_segment(params, (0.9, 0.92), cond, noise_v=0.0,
                                   n_shells=30, dt=4.0)
            span = seg.time[-1] - seg.time[0]
            assert span == pytest.approx(TAIL_LENGTHS[cond.protocol], rel=0.02)

    def test_deterministic_with_seeded_noise(self, params):
        cond = Condition("0.5C", "1C", 1.0)
        kw = dict(noise_v=5e-4, n_shells=30, dt=4.0)
        a = generate_segment(params, (0.9, 0.92), cond,
                             rng=np.random.default_rng(3), **kw)
        b = generate_segment(params, (0.9, 0.92), cond,
                             rng=np.random.default_rng(3), **kw)
        assert np.array_equal(a.voltage, b.voltage)

    def test_lower_scales_hit_limit_earlier(self, params):
        cond = Condition("0.5C", "1C", 1.0)
        fresh = generate_segment(params, (1.0, 1.0), cond, noise_v=0.0,
                                 n_shells=30, dt=4.0)
        aged = generate_segment(params, (0.75, 0.8), cond, noise_v=0.0,
                                n_shells=30, dt=4.0)
        assert aged.time[-1] < fresh.time[-1]


class TestCampaign:
    @pytest.fixture(scope="class")
    def ledger(self, params):
        scens = [make_scenario(cell_id=1, n_cycles=280),
                 make_scenario(cell_id=2, n_cycles=210, seed=5,
                               condition=Condition("1C", "1C", 0.8))]
        return run_campaign(scens, params, **COARSE)

    def test_row_counts(self, ledger):
        assert ledger.cells() == [1, 2]
        assert len(ledger.for_cell(1)) == 280 // 70 + 1
        assert len(ledger.for_cell(2)) == 210 // 70 + 1

    def test_fresh_soh_is_one(self, ledger):
        for cid in ledger.cells():
            assert ledger.for_cell(cid)[0].soh == pytest.approx(1.0)

    def test_soh_non_increasing(self, ledger):
        for cid in ledger.cells():
            sohs = [r.soh for r in ledger.for_cell(cid)]
            assert all(b <= a + 1e-9 for a, b in zip(sohs, sohs[1:]))

    def test_save_files(self, ledger, tmp_path):
        out = tmp_path / "campaign"
        ledger.save(out)
        assert (out / "cell_01.csv").exists()
        assert (out / "cell_01_cycle_00000.csv").exists()
        assert (out / "cell_01_cycle_00000.csv.json").exists()
