import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safersim.allocation import AllocationPolicy
from safersim.datagen import (
    CONTROL_MEAN_PFS_DAYS,
    Arm,
    AssociationModel,
    PatientRecord,
    SafetyModel,
    ScenarioSpec,
    draw_variates,
    efficacy_mean,
    extra_cycles,
    generate_patient,
    generate_safety_time,
    observe,
    observe_arrays,
    rate_from_median,
    realize,
)
from safersim.statkernel import RngStream


def record(safety=2.0, pfs=8.0, entry=0.0, dropout=False, underreport=False, arm=Arm.EXPERIMENTAL):
    return PatientRecord(0, entry, arm, safety, pfs, 0.0, dropout, underreport)


class TestRates:
    def test_control_rate(self):
        assert rate_from_median(10) == pytest.approx(0.0693, abs=1e-4)

    def test_unit_rate(self):
        assert rate_from_median(math.log(2)) == pytest.approx(1.0, abs=1e-15)

    def test_short_median(self):
        assert rate_from_median(1.5) == pytest.approx(0.4621, abs=1e-4)

    @pytest.mark.parametrize("m", [0.0, -1.0])
    def test_rejects_non_positive(self, m):
        with pytest.raises(ValueError):
            rate_from_median(m)

    @pytest.mark.parametrize("median_e, target", [(1.5, 0.5), (2.25, 0.6), (3.5, 0.7), (6.0, 0.8)])
    def test_neyman_targets(self, median_e, target):
        assert SafetyModel(1.5, median_e).neyman_target == pytest.approx(target, abs=1e-12)

    def test_safety_model_rejects_bad_median(self):
        with pytest.raises(ValueError):
            SafetyModel(0.0, 1.5)


class TestSafetyTimes:
    def test_arm_medians(self):
        model = SafetyModel(1.5, 6.0)
        e = generate_safety_time(Arm.EXPERIMENTAL, model, RngStream(1), 1_000_000)
        c = generate_safety_time(Arm.CONTROL, model, RngStream(2), 1_000_000)
        assert np.median(e) == pytest.approx(6.0, rel=0.01)
        assert np.median(c) == pytest.approx(1.5, rel=0.01)

    def test_mean_from_median(self):
        model = SafetyModel(1.5, 2.25)
        x = generate_safety_time(Arm.EXPERIMENTAL, model, RngStream(3), 1_000_000)
        assert model.mean(Arm.EXPERIMENTAL) == pytest.approx(3.246, abs=1e-3)
        assert x.mean() == pytest.approx(3.246, abs=3 * 3.246 / 1000)

    def test_equal_medians_same_distribution(self):
        model = SafetyModel(1.5, 1.5)
        a = generate_safety_time(Arm.EXPERIMENTAL, model, RngStream(9), 100)
        b = generate_safety_time(Arm.CONTROL, model, RngStream(9), 100)
        assert np.array_equal(a, b)


class TestAssociation:
    def test_default_calibration(self):
        assoc = AssociationModel()
        assert math.exp(assoc.gamma0) == pytest.approx(CONTROL_MEAN_PFS_DAYS)
        assert assoc.gamma_scale == pytest.approx(0.05 / 50)

    @pytest.mark.parametrize("months, extra", [(1.5, 0), (0.0, 0), (6.0, 5), (2.2, 0), (2.8, 1)])
    def test_extra_cycles(self, months, extra):
        assert extra_cycles(months, AssociationModel()) == extra

    def test_control_mean_gives_three_cycles(self):
        # Mean control safety time is ~2.16 months, i.e. ~65 days, ~3 cycles.
        days = SafetyModel().mean(Arm.CONTROL) * 30
        assert math.floor(days / 21) == 3

    def test_extra_cycles_rejects_negative(self):
        with pytest.raises(ValueError):
            extra_cycles(-1.0, AssociationModel())

    def test_efficacy_mean_examples(self):
        g0 = math.log(CONTROL_MEAN_PFS_DAYS)
        assert efficacy_mean(0, g0, 0.05) == pytest.approx(434.78)
        assert efficacy_mean(7, g0, 0.0) == pytest.approx(434.78)
        assert efficacy_mean(5, g0, 0.05) == pytest.approx(558.3, abs=0.05)

    def test_efficacy_mean_capped(self):
        assert np.isfinite(efficacy_mean(1e6, 6.0, 1.0))
        assert efficacy_mean(1e6, 6.0, 1.0) == pytest.approx(math.exp(16.0))

    @given(st.floats(0, 60), st.floats(0, 60), st.floats(0, 0.2))
    @settings(max_examples=200, deadline=None)
    def test_mean_monotone_in_safety_time(self, t1, t2, g1):
        assoc = AssociationModel()
        lo, hi = sorted((t1, t2))
        m_lo = efficacy_mean(extra_cycles(lo, assoc), assoc.gamma0, g1)
        m_hi = efficacy_mean(extra_cycles(hi, assoc), assoc.gamma0, g1)
        assert m_lo <= m_hi

    def test_for_median_pfs(self):
        assoc = AssociationModel.for_median_pfs(24.0, expected_gamma1=0.005)
        assert math.exp(assoc.gamma0) / 30 * math.log(2) == pytest.approx(24.0)
        assert assoc.expected_gamma1 == 0.005


class TestGeneratePatient:
    def test_independent_control_median(self):
        spec = ScenarioSpec()
        v = draw_variates(1_000_000, spec, 48.0, RngStream(11))
        _, pfs = realize(v.safety_exp, v.pfs_exp, v.gamma1, np.zeros(len(v), dtype=int), spec)
        assert np.median(pfs) == pytest.approx(10.0, rel=0.01)

    def test_null_hazard_ratio(self):
        spec = ScenarioSpec(efficacy_null=True, association=AssociationModel())
        assert not spec.uses_association
        v = draw_variates(400_000, spec, 48.0, RngStream(12))
        _, pe = realize(v.safety_exp, v.pfs_exp, v.gamma1, np.ones(len(v), dtype=int), spec)
        _, pc = realize(v.safety_exp, v.pfs_exp, v.gamma1, np.zeros(len(v), dtype=int), spec)
        assert pc.mean() / pe.mean() == pytest.approx(1.25, rel=0.01)

    def test_very_strong_association_ratio(self):
        spec = ScenarioSpec(safety=SafetyModel(1.5, 6.0), association=AssociationModel(0.05))
        v = draw_variates(200_000, spec, 48.0, RngStream(13))
        _, pe = realize(v.safety_exp, v.pfs_exp, v.gamma1, np.ones(len(v), dtype=int), spec)
        _, pc = realize(v.safety_exp, v.pfs_exp, v.gamma1, np.zeros(len(v), dtype=int), spec)
        assert pe.mean() / pc.mean() > 1.15

    def test_independence_correlation(self):
        spec = ScenarioSpec(safety=SafetyModel(1.5, 6.0))
        v = draw_variates(100_000, spec, 48.0, RngStream(14))
        s, p = realize(v.safety_exp, v.pfs_exp, v.gamma1, np.ones(len(v), dtype=int), spec)
        assert abs(np.corrcoef(s, p)[0, 1]) < 3 / math.sqrt(len(v))

    def test_no_flags_at_zero_rates(self):
        v = draw_variates(10_000, ScenarioSpec(), 48.0, RngStream(15))
        assert not v.dropout.any() and not v.underreport.any()

    def test_flag_rates(self):
        spec = ScenarioSpec(dropout_rate=0.2, underreport_rate=0.1)
        v = draw_variates(100_000, spec, 48.0, RngStream(16))
        assert v.dropout.mean() == pytest.approx(0.2, abs=0.005)
        assert v.underreport.mean() == pytest.approx(0.1, abs=0.005)

    def test_entries_sorted_in_window(self):
        v = draw_variates(1000, ScenarioSpec(), 48.0, RngStream(17))
        assert np.all(np.diff(v.entry) >= 0) and v.entry.min() >= 0 and v.entry.max() < 48

    def test_generate_patient_record(self):
        spec = ScenarioSpec(association=AssociationModel(), dropout_rate=1.0)
        rec = generate_patient(3.0, Arm.EXPERIMENTAL, spec, RngStream(18), id=4)
        assert rec.id == 4 and rec.entry_time == 3.0 and rec.arm == Arm.EXPERIMENTAL
        assert rec.latent_safety_time > 0 and rec.latent_pfs_time > 0 and rec.gamma1_draw > 0
        assert rec.dropout_flag and not rec.underreport_flag

    def test_generate_patient_deterministic(self):
        spec = ScenarioSpec(association=AssociationModel())
        assert generate_patient(1.0, 1, spec, RngStream(19)) == generate_patient(1.0, 1, spec, RngStream(19))

    @pytest.mark.parametrize("kw", [{"dropout_rate": 1.5}, {"underreport_rate": -0.1}, {"intercurrent": "x"},
                                    {"null_hr": 0.0}])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            ScenarioSpec(**kw)

    def test_default_policy(self):
        assert ScenarioSpec().allocation == AllocationPolicy.complete()


class TestObserve:
    def test_both_observed(self):
        o = observe(record(), 12.0, max_followup=None)
        assert (o.safety_time, o.safety_event, o.efficacy_time, o.efficacy_event) == (2.0, True, 8.0, True)

    def test_dropout_composite(self):
        o = observe(record(dropout=True), 12.0, strategy="composite")
        assert (o.efficacy_time, o.efficacy_event) == (2.0, True)
        assert (o.safety_time, o.safety_event) == (2.0, True)

    def test_dropout_without_composite_censors(self):
        o = observe(record(dropout=True), 12.0)
        assert (o.efficacy_time, o.efficacy_event) == (2.0, False)

    def test_underreport(self):
        o = observe(record(underreport=True), 12.0)
        assert (o.safety_time, o.safety_event) == (8.0, False)
        assert (o.efficacy_time, o.efficacy_event) == (8.0, True)

    def test_safety_truncated_by_progression(self):
        o = observe(record(safety=9.0, pfs=4.0), 12.0)
        assert (o.safety_time, o.safety_event) == (4.0, False)

    def test_administrative_censoring(self):
        o = observe(record(safety=5.0, pfs=9.0, entry=10.0), 14.0)
        assert (o.efficacy_time, o.efficacy_event) == (4.0, False)
        assert (o.safety_time, o.safety_event) == (4.0, False)

    def test_trial_end_caps_analysis(self):
        o = observe(record(safety=50.0, pfs=50.0, entry=0.0), 100.0, trial_end=60.0, max_followup=None)
        assert o.efficacy_time == 50.0
        o = observe(record(safety=70.0, pfs=70.0, entry=0.0), 100.0, trial_end=60.0, max_followup=None)
        assert (o.efficacy_time, o.efficacy_event) == (60.0, False)

    def test_followup_cap(self):
        o = observe(record(safety=13.0, pfs=14.0), 60.0)
        assert (o.efficacy_time, o.efficacy_event) == (12.0, False)

    def test_rejects_analysis_before_entry(self):
        with pytest.raises(ValueError):
            observe(record(entry=5.0), 4.0)

    def test_rejects_unknown_strategy(self):
        with pytest.raises(ValueError):
            observe(record(), 12.0, strategy="hypothetical")

    @given(
        st.floats(0.01, 80), st.floats(0.01, 80), st.floats(0, 47.9), st.floats(0, 60),
        st.booleans(), st.booleans(), st.sampled_from(["none", "composite"]),
    )
    @settings(max_examples=300, deadline=None)
    def test_invariants(self, safety, pfs, entry, delta, dropout, underreport, strategy):
        t = entry + delta
        rec = record(safety, pfs, entry, dropout, underreport)
        o = observe(rec, t, strategy=strategy)
        base = observe(record(safety, pfs, entry, dropout, False), t, strategy=strategy)
        assert o == observe(rec, t, strategy=strategy)
        assert o.safety_time >= 0 and o.efficacy_time >= 0
        assert o.safety_time <= max(o.efficacy_time, min(pfs, t - entry, 12.0)) + 1e-12
        assert (o.efficacy_time, o.efficacy_event) == (base.efficacy_time, base.efficacy_event)
        if dropout and strategy == "composite":
            assert o.efficacy_time <= safety + 1e-12 or not base.safety_event

    def test_vectorised_matches_scalar(self):
        rng = np.random.default_rng(0)
        n = 500
        entry = rng.uniform(0, 48, n)
        s = rng.exponential(3, n)
        p = rng.exponential(12, n)
        d = rng.random(n) < 0.3
        u = rng.random(n) < 0.3
        st_, se, et, ee = observe_arrays(entry, s, p, d, u, 50.0, strategy="composite")
        for i in range(n):
            o = observe(PatientRecord(i, entry[i], 1, s[i], p[i], 0.0, bool(d[i]), bool(u[i])), 50.0,
                        strategy="composite")
            assert (o.safety_time, o.safety_event, o.efficacy_time, o.efficacy_event) == (
                st_[i], se[i], et[i], ee[i])
