"""System-model arithmetic: unit conversion, rates, WSR, feasibility."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsma_du.model import (
    BeamformerSet,
    ProblemInstance,
    RateAllocation,
    SystemConfig,
    check_feasibility,
    compute_rates,
    dbm_to_watts,
    make_instance,
    wsr,
)

from conftest import rand_beams, rand_instance


def single_user_instance():
    return make_instance(
        np.array([[1.0 + 0.0j]]), [1.0], [1.0], 0.0, 2.0
    )


def single_user_beams():
    return BeamformerSet(np.array([1.0 + 0.0j]), np.array([[1.0 + 0.0j]]))


class TestDbmToWatts:
    def test_reference_points(self):
        assert dbm_to_watts(30.0) == pytest.approx(1.0, abs=0)
        assert dbm_to_watts(0.0) == pytest.approx(0.001, rel=1e-15)
        # frozen: 10^0.3 to six decimals
        assert dbm_to_watts(33.0) == pytest.approx(1.995262, abs=5e-7)

    @given(st.floats(-50, 50), st.floats(0.1, 10))
    @settings(max_examples=50, deadline=None)
    def test_adding_decibels_multiplies(self, x, delta):
        assert dbm_to_watts(x + delta) == pytest.approx(
            dbm_to_watts(x) * 10 ** (delta / 10), rel=1e-12
        )


class TestSystemConfig:
    def test_default_budget(self):
        # 33 dBm total minus 30 dBm circuit power
        assert SystemConfig().power_budget() == pytest.approx(0.995262, abs=5e-7)

    def test_rejects_negative_budget(self):
        with pytest.raises(ValueError):
            SystemConfig(p_max_dbm=30.0, p_c_dbm=33.0)

    def test_rejects_oversized_p0(self):
        with pytest.raises(ValueError):
            SystemConfig(p0_upper=0.5)

    def test_dict_round_trip(self):
        cfg = SystemConfig(num_users=2, num_antennas=4, seed=9)
        assert SystemConfig.from_dict(cfg.to_dict()) == cfg


class TestComputeRates:
    def test_single_user_hand_values(self):
        # h=v0=v1=[1], sigma^2=1: c = log2(1 + 1/(1+1)), rp = log2(1 + 1/1)
        report = compute_rates(single_user_instance(), single_user_beams())
        assert report.common_rates[0] == pytest.approx(np.log2(1.5), abs=1e-12)
        assert report.common_rates[0] == pytest.approx(0.584963, abs=5e-7)
        assert report.private_rates[0] == pytest.approx(1.0, abs=1e-12)
        assert report.min_common_user == 0

    def test_zero_common_beam(self):
        inst = rand_instance(u=3, m=4, seed=1)
        beams = rand_beams(inst, seed=2)
        beams.v0[:] = 0.0
        report = compute_rates(inst, beams)
        assert np.all(report.common_rates == 0.0)
        assert report.min_common == 0.0

    def test_zero_private_beams(self):
        inst = rand_instance(u=3, m=4, seed=3)
        beams = rand_beams(inst, seed=4)
        beams.v[:] = 0.0
        report = compute_rates(inst, beams)
        assert np.all(report.private_rates == 0.0)

    def test_min_common_is_minimum(self):
        for seed in range(10):
            inst = rand_instance(u=4, m=3, seed=seed)
            report = compute_rates(inst, rand_beams(inst, seed=seed + 100))
            assert report.min_common == report.common_rates.min()
            assert np.all(report.min_common <= report.common_rates)

    def test_phase_invariance(self):
        inst = rand_instance(u=3, m=5, seed=7)
        beams = rand_beams(inst, seed=8)
        base = compute_rates(inst, beams)
        rng = np.random.default_rng(9)
        for _ in range(20):
            theta = rng.uniform(0, 2 * np.pi, inst.num_users + 1)
            rotated = BeamformerSet(
                beams.v0 * np.exp(1j * theta[0]),
                beams.v * np.exp(1j * theta[1:])[:, None],
            )
            rep = compute_rates(inst, rotated)
            np.testing.assert_allclose(
                rep.common_rates, base.common_rates, atol=1e-12
            )
            np.testing.assert_allclose(
                rep.private_rates, base.private_rates, atol=1e-12
            )

    def test_joint_channel_noise_scaling(self):
        inst = rand_instance(u=3, m=4, seed=11)
        beams = rand_beams(inst, seed=12)
        base = compute_rates(inst, beams)
        for gamma in (0.25, 3.0, 17.0):
            scaled = ProblemInstance(
                inst.channels * gamma,
                inst.weights,
                inst.noise_var * gamma**2,
                inst.p0,
                inst.power_budget,
                inst.ref_user,
            )
            rep = compute_rates(scaled, beams)
            np.testing.assert_allclose(
                rep.common_rates, base.common_rates, atol=1e-10
            )
            np.testing.assert_allclose(
                rep.private_rates, base.private_rates, atol=1e-10
            )

    def test_growing_interferer_never_helps(self):
        inst = rand_instance(u=2, m=4, seed=13)
        beams = rand_beams(inst, seed=14)
        prev = compute_rates(inst, beams).private_rates[0]
        for scale in (1.5, 2.5, 4.0):
            louder = BeamformerSet(beams.v0.copy(), beams.v.copy())
            louder.v[1] *= scale
            cur = compute_rates(inst, louder).private_rates[0]
            assert cur <= prev + 1e-12
            prev = cur


class TestWsr:
    def test_single_user_value(self):
        inst = single_user_instance()
        value = wsr(inst, single_user_beams(), RateAllocation(np.zeros(1)))
        assert value == pytest.approx(1.0, abs=1e-12)

    def test_all_zero(self):
        inst = rand_instance(u=2, m=3, seed=15, p0=0.0)
        beams = BeamformerSet(
            np.zeros(3, dtype=complex), np.zeros((2, 3), dtype=complex)
        )
        assert wsr(inst, beams, RateAllocation(np.zeros(2))) == 0.0

    def test_symmetric_users_match_single_rate(self):
        h = np.array([[2.0 + 1.0j, 0.5j], [2.0 + 1.0j, 0.5j]])
        inst = ProblemInstance(
            h, np.array([0.5, 0.5]), np.ones(2), 0.0, 2.0, 0
        )
        beams = BeamformerSet(
            np.zeros(2, dtype=complex),
            np.array([[1.0, 0.3 + 0.1j], [1.0, 0.3 + 0.1j]]),
        )
        report = compute_rates(inst, beams)
        value = wsr(inst, beams, RateAllocation(np.zeros(2)))
        assert value == pytest.approx(report.private_rates[0], abs=1e-12)

    def test_rc_enters_linearly(self):
        inst = rand_instance(u=3, m=4, seed=16)
        beams = rand_beams(inst, seed=17)
        base = wsr(inst, beams, RateAllocation(np.zeros(3)))
        rc = np.array([0.1, 0.2, 0.3])
        value = wsr(inst, beams, RateAllocation(rc))
        assert value == pytest.approx(base + float(inst.weights @ rc), rel=1e-12)


class TestCheckFeasibility:
    def test_projected_point_passes(self):
        from rsma_du.pgd import project_common_rate

        for seed in range(5):
            inst = rand_instance(u=3, m=4, seed=seed)
            beams = rand_beams(inst, seed=seed + 50)  # projected by fixture
            alloc = project_common_rate(None, inst, beams)
            assert check_feasibility(inst, beams, alloc).feasible

    def test_excess_common_rate_flagged(self):
        inst = rand_instance(u=2, m=3, seed=20)
        beams = rand_beams(inst, seed=21)
        m = compute_rates(inst, beams).min_common
        report = check_feasibility(
            inst, beams, RateAllocation(np.array([m + 1.0, 0.0]))
        )
        assert not report.common_ok
        assert report.power_ok and report.rc_nonneg

    def test_power_violation_flagged(self):
        inst = rand_instance(u=2, m=3, seed=22)
        beams = rand_beams(inst, seed=23)
        blown = BeamformerSet(beams.v0 * 10, beams.v * 10)
        report = check_feasibility(inst, blown, RateAllocation(np.zeros(2)))
        assert not report.power_ok

    def test_min_power_violation_flagged(self):
        inst = rand_instance(u=2, m=3, seed=24, p0=0.1)
        beams = rand_beams(inst, seed=25)
        starved = BeamformerSet(beams.v0.copy(), beams.v.copy())
        starved.v[0] *= 1e-3
        report = check_feasibility(inst, starved, RateAllocation(np.zeros(2)))
        assert not report.min_power_ok

    def test_negative_rc_flagged(self):
        inst = rand_instance(u=2, m=3, seed=26)
        beams = rand_beams(inst, seed=27)
        report = check_feasibility(
            inst, beams, RateAllocation(np.array([-0.1, 0.0]))
        )
        assert not report.rc_nonneg


class TestInstanceValidation:
    def test_weight_simplex_enforced(self):
        inst = rand_instance(u=2, m=2, seed=30)
        bad = ProblemInstance(
            inst.channels,
            np.array([0.9, 0.3]),
            inst.noise_var,
            inst.p0,
            inst.power_budget,
            inst.ref_user,
        )
        with pytest.raises(ValueError):
            bad.validate()

    def test_budget_must_cover_min_powers(self):
        inst = rand_instance(u=2, m=2, seed=31)
        bad = ProblemInstance(
            inst.channels,
            inst.weights,
            inst.noise_var,
            0.4,
            1.0,
            inst.ref_user,
        )
        with pytest.raises(ValueError):
            bad.validate()

    def test_make_instance_picks_weakest_user(self):
        h = np.array([[3.0 + 0j, 0j], [0.1 + 0j, 0j], [2.0 + 0j, 0j]])
        inst = make_instance(h, [0.3, 0.3, 0.4], np.ones(3), 0.0, 1.0)
        assert inst.ref_user == 1
