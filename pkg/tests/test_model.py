import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tfqkd import model
from tfqkd.model import (
    DetectorParams,
    LinkBudget,
    PatternError,
    SideParams,
    ProtocolParams,
    fair_sampled_classes,
    largest_remainder_counts,
    synthesize_pattern,
    transmissivities,
    validate_params,
)


def symmetric_params(**overrides):
    side = SideParams(s=0.3, u=0.3, v=0.05, w=0.0002, p_z=0.8,
                      send_prob=0.3, p_u=0.1, p_v=0.7, p_w=0.2)
    kw = dict(alice=side, bob=side, phase_slices_m=16,
              clock_rate_hz=1e9, duty_cycle=0.5)
    kw.update(overrides)
    return ProtocolParams(**kw)


class TestValidateParams:
    def test_symmetric_condition_exact(self):
        report = validate_params(symmetric_params(), tolerance=1e-12)
        assert report.ok

    def test_field_params_pass_at_2_percent(self, params):
        assert validate_params(params, tolerance=0.02).ok

    def test_field_params_fail_at_half_percent(self, params):
        report = validate_params(params, tolerance=0.005)
        assert not report.ok
        failed = [c for c in report.checks if not c.passed]
        assert [c.name for c in failed] == ["asymmetric_security_condition"]
        assert failed[0].kind == "tolerance"

    def test_field_deviation_value(self, params):
        from tfqkd.model import asymmetry_condition_sides

        lhs, rhs = asymmetry_condition_sides(params)
        assert abs(lhs / rhs - 1.0) == pytest.approx(0.007866, abs=2e-4)

    def test_decoy_probability_hard_failure(self, params):
        bad_side = dataclasses.replace(params.alice, p_w=0.05)  # sums to 0.9
        bad = dataclasses.replace(params, alice=bad_side)
        report = validate_params(bad)
        assert not report.ok
        assert any(c.name == "decoy_probabilities_A" and c.kind == "structural"
                   for c in report.hard_failures)

    def test_idempotent_and_pure(self, params):
        r1 = validate_params(params, 0.02)
        r2 = validate_params(params, 0.02)
        assert r1 == r2


class TestPatternSynthesis:
    def test_exact_proportion_small(self):
        side = SideParams(s=0.3, u=0.3, v=0.05, w=0.0, p_z=1.0,
                          send_prob=0.5, p_u=0.0, p_v=0.0, p_w=0.0)
        pattern = synthesize_pattern(side, 10, seed=0)
        counts = pattern.class_counts()
        assert counts[model.Z_SEND] == 5
        assert counts[model.Z_NOSEND] == 5
        assert counts[2:].sum() == 0

    def test_same_seed_identical(self, params):
        p1 = synthesize_pattern(params.alice, 1000, seed=9)
        p2 = synthesize_pattern(params.alice, 1000, seed=9)
        assert np.array_equal(p1.classes, p2.classes)
        assert np.array_equal(p1.phases, p2.phases)

    def test_different_seed_same_counts_different_order(self, params):
        p1 = synthesize_pattern(params.alice, 5000, seed=1)
        p2 = synthesize_pattern(params.alice, 5000, seed=2)
        assert np.array_equal(p1.class_counts(), p2.class_counts())
        assert not np.array_equal(p1.classes, p2.classes)

    def test_histogram_matches_probabilities_at_1e6(self, params):
        n = 1_000_000
        pattern = synthesize_pattern(params.alice, n, seed=3)
        target = params.alice.class_probs() * n
        deviation = np.abs(pattern.class_counts() - target)
        assert deviation.max() < 1.0

    def test_rounding_infeasibility(self, params):
        with pytest.raises(PatternError):
            fair_sampled_classes(params.alice, 10, seed=0)

    def test_duty_cycle_interleave(self, params):
        pattern = synthesize_pattern(params.alice, 1000, seed=0,
                                     duty_cycle=0.5)
        assert pattern.n_total_slots == 2000

    def test_phases_in_range(self, params):
        pattern = synthesize_pattern(params.alice, 1000, seed=0)
        assert np.all(pattern.phases >= 0.0)
        assert np.all(pattern.phases < 2.0 * np.pi)

    @given(st.integers(min_value=0, max_value=2**31),
           st.integers(min_value=0, max_value=2**31))
    def test_counts_permutation_invariant_across_seeds(self, s1, s2):
        side = SideParams(s=0.3, u=0.3, v=0.05, w=0.0002, p_z=0.8,
                          send_prob=0.3, p_u=0.1, p_v=0.7, p_w=0.2)
        c1 = np.bincount(fair_sampled_classes(side, 500, s1), minlength=5)
        c2 = np.bincount(fair_sampled_classes(side, 500, s2), minlength=5)
        assert np.array_equal(c1, c2)

    def test_largest_remainder_sums(self):
        probs = np.array([0.21, 0.33, 0.46])
        counts = largest_remainder_counts(probs, 97)
        assert counts.sum() == 97
        assert np.all(np.abs(counts - probs * 97) < 1.0)


class TestTransmissivities:
    def test_lossless(self):
        link = LinkBudget(0, 0, 0.0, 0.0)
        det = DetectorParams(efficiency=1.0, dark_rate_hz=0.0)
        etas = transmissivities(link, det)
        assert all(v == 1.0 for v in etas.values())

    def test_half_loss_per_arm(self):
        link = LinkBudget(10, 10, 3.0103, 3.0103)
        det = DetectorParams(efficiency=1.0, dark_rate_hz=0.0)
        etas = transmissivities(link, det)
        assert etas["eta_a"] == pytest.approx(0.5, rel=1e-4)
        assert etas["eta_channel"] == pytest.approx(0.25, rel=1e-4)

    def test_field_operating_point(self):
        # total 56.0 dB with 14.5% detectors
        link = LinkBudget(156.7, 97.2, 32.12, 23.88)
        det = DetectorParams(efficiency=0.145, dark_rate_hz=450.0)
        etas = transmissivities(link, det)
        assert etas["eta_channel"] == pytest.approx(2.5119e-6, rel=1e-3)
        assert etas["eta_total"] == pytest.approx(3.642e-7, rel=1e-3)

    @given(st.floats(min_value=0.0, max_value=80.0),
           st.floats(min_value=0.1, max_value=20.0))
    def test_monotone_decreasing_in_loss(self, loss, extra):
        det = DetectorParams(efficiency=0.5, dark_rate_hz=0.0)
        lo = transmissivities(LinkBudget(1, 1, loss, 10.0), det)
        hi = transmissivities(LinkBudget(1, 1, loss + extra, 10.0), det)
        assert hi["eta_channel"] < lo["eta_channel"]


class TestParamsIO:
    def test_fixture_roundtrip(self, bundle, params):
        assert params.phase_slices_m == 16
        assert params.clock_rate_hz == 1e9
        assert params.duty_cycle == 0.5
        assert params.protocol_rate_hz == 5e8
        assert bundle["detector"].efficiency == 0.145
        assert bundle["link"].total_loss_db == pytest.approx(56.0)

    def test_missing_key_raises(self):
        with pytest.raises(KeyError):
            model.params_from_dict({"s_A": 0.5})

    def test_dark_prob_per_gate(self):
        det = DetectorParams(efficiency=0.145, dark_rate_hz=450.0)
        assert det.dark_prob_per_gate(1e9) == pytest.approx(4.5e-7)
        assert det.dark_prob_per_use(5e8) == pytest.approx(9e-7)

    def test_detector_validation(self):
        with pytest.raises(ValueError):
            DetectorParams(efficiency=1.5, dark_rate_hz=0.0)

    def test_matched_fraction(self, params):
        assert params.matched_fraction() == pytest.approx(0.25)
        assert params.phase_window_rad() == pytest.approx(2 * np.pi / 16)
