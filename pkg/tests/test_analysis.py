import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from dpsim.analysis import (
    NO_ONSET,
    AnalysisInputError,
    angstrom_threshold,
    benchmark_csv,
    benchmark_table,
    control_onset,
    estimate_gamma,
    estimate_onset_delay,
    format_benchmark_table,
    ks_two_sample,
    mean_first_event_time,
    predicted_excess_delay,
    predicted_mean_delay,
    summarize_campaign,
)
from dpsim.apparatus import ApparatusConfig, angstrom_crossing_time, run_campaign
from dpsim.selfenergy import PENROSE_GAMMA

CFG = ApparatusConfig()


class TestOnset:
    def test_flat(self):
        t = np.arange(200) * 1e-8
        assert estimate_onset_delay(np.full(200, 0.5), 1e-3, 0.5, t) == NO_ONSET

    def test_step(self):
        t = np.arange(1000) * 1e-8
        trace = np.where(t >= 5e-6, 0.49, 0.5)
        assert estimate_onset_delay(trace, 1e-3, 0.5, t) == pytest.approx(5e-6, abs=1e-8)

    def test_either_sign(self):
        t = np.arange(10) * 1.0
        assert estimate_onset_delay([0.5, 0.5, 0.6, 0.5], 0.05, 0.5, t[:4]) == 2.0
        assert estimate_onset_delay([0.5, 0.4, 0.5, 0.5], 0.05, 0.5, t[:4]) == 1.0

    def test_bad_inputs(self):
        with pytest.raises(AnalysisInputError):
            estimate_onset_delay([], 1e-3, 0.5, [])
        with pytest.raises(AnalysisInputError):
            estimate_onset_delay([0.5], 0.0, 0.5, [0.0])
        with pytest.raises(AnalysisInputError):
            estimate_onset_delay([0.5], 1e-3)

    def test_threshold_is_one_angstrom(self):
        assert angstrom_threshold(CFG) == pytest.approx(9.929e-4, rel=1e-3)

    def test_control_onset_matches_piezo_inversion(self):
        analytic = CFG.piezo_tau * math.log(1 / (1 - 1e-10 / CFG.piezo_full_scale))
        assert analytic == pytest.approx(angstrom_crossing_time(CFG), rel=1e-12)
        assert abs(control_onset(CFG) - analytic) <= CFG.sample_interval


class TestKS:
    def test_identical(self):
        x = np.linspace(0, 1, 100)
        D, p = ks_two_sample(x, x)
        assert D == 0.0 and p == pytest.approx(1.0)

    def test_disjoint(self):
        D, p = ks_two_sample(np.arange(50), np.arange(100, 150))
        assert D == 1.0 and p < 1e-10

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=300), rng.normal(0.2, size=400)
        D, p = ks_two_sample(a, b)
        ref = stats.ks_2samp(a, b, method="asymp")
        assert D == pytest.approx(ref.statistic, abs=1e-15)
        assert p == pytest.approx(ref.pvalue, rel=1e-3)

    def test_empty(self):
        with pytest.raises(AnalysisInputError):
            ks_two_sample([], [1.0])

    @pytest.mark.slow
    def test_calibrated(self):
        rng = np.random.default_rng(12345)
        rejections = sum(ks_two_sample(rng.random(10_000), rng.random(10_000))[1] < 0.05
                         for _ in range(1000))
        assert 0.04 <= rejections / 1000 <= 0.06


class TestPrediction:
    def test_constant_rate(self):
        assert mean_first_event_time(lambda t: 2.5e6) == pytest.approx(1 / 2.5e6, rel=1e-6)

    def test_quadratic_rate(self):
        c = 3e21
        expected = (3 / c) ** (1 / 3) * math.gamma(4 / 3)
        assert mean_first_event_time(lambda t: c * t * t) == pytest.approx(expected, rel=1e-4)

    def test_zero_rate(self):
        assert mean_first_event_time(lambda t: 0.0) == math.inf

    def test_doubling_gamma_doubles_delay_in_plateau(self):
        cfg = replace(CFG, piezo_tau=1e-16, extra_component_times=())
        a, b = predicted_mean_delay(cfg, 100.0), predicted_mean_delay(cfg, 200.0)
        assert b / a == pytest.approx(2.0, rel=1e-4)

    def test_increasing_in_gamma(self):
        d = [predicted_mean_delay(CFG, g) for g in (0.01, 0.04, 0.2, 1.0, 5.0)]
        assert all(x < y for x, y in zip(d, d[1:]))

    def test_default_scale(self):
        assert 5e-8 < predicted_mean_delay(CFG, PENROSE_GAMMA) < 2e-7

    def test_components_cap_delay(self):
        # with only the piezo left, a tiny rate falls back to the component times
        cfg = replace(CFG, extra_component_times=(("piezo", 1e-6),), gamma=1e30)
        assert predicted_mean_delay(cfg, 1e30) == pytest.approx(1e-6, rel=1e-4)

    def test_excess_delay_shifts_with_onset(self):
        d = predicted_excess_delay(CFG, PENROSE_GAMMA)
        assert 0.7 * predicted_mean_delay(CFG, PENROSE_GAMMA) < d < predicted_mean_delay(CFG, PENROSE_GAMMA)


def _campaign(cfg, n, seed):
    """Superposed and control groups, split by trigger source like the pipeline."""
    recs = run_campaign(cfg, n, seed, parallelism=4)
    recs += run_campaign(replace(cfg, photon_rate=0.0), n, seed + 1, parallelism=4, first_trial_id=n)
    sup = [r for r in recs if r.trigger_source.value == "Photon"]
    return sup, [r for r in recs if r.trigger_source.value != "Photon"]


def _delays(recs, cfg):
    thr = angstrom_threshold(cfg)
    return np.array([estimate_onset_delay(r, thr, 0.5) for r in recs])


class TestEstimateGamma:
    def test_needs_thirty(self):
        with pytest.raises(AnalysisInputError):
            estimate_gamma([1e-7] * 29, CFG)

    def test_no_excess_is_degenerate(self):
        g = estimate_gamma([1e-8] * 40, CFG, [2e-8] * 40, n_boot=10)
        assert g.degenerate and g.gamma == 1e-6

    def test_huge_excess_is_degenerate(self):
        g = estimate_gamma([1.0] * 40, CFG, [0.0] * 40, n_boot=10)
        assert g.degenerate and g.gamma == 1e3

    def test_exact_mean_inverts(self):
        target = predicted_mean_delay(CFG, 0.3)
        g = estimate_gamma([target] * 50, CFG, n_boot=20)
        assert g.gamma == pytest.approx(0.3, rel=2e-3)
        assert g.ci_low == pytest.approx(g.ci_high, rel=1e-3)

    @pytest.mark.slow
    @pytest.mark.parametrize("tau", [3e-5, 1e-4, 5e-4])
    def test_detection_model_closed_loop(self, tau):
        cfg = replace(CFG, piezo_tau=tau)
        sup, ctrl = _campaign(cfg, 3000, 11)
        g = estimate_gamma(_delays(sup, cfg), cfg, _delays(ctrl, cfg), n_boot=200, model="detection")
        assert g.gamma == pytest.approx(cfg.gamma, rel=0.05)
        assert g.ci_low < g.gamma < g.ci_high

    def test_bootstrap_seeded(self):
        rng = np.random.default_rng(3)
        d = rng.exponential(8e-8, 200) + 1e-8
        a = estimate_gamma(d, CFG, n_boot=100, seed=5)
        b = estimate_gamma(d, CFG, n_boot=100, seed=5)
        assert a == b


class TestSummary:
    def test_invariants(self):
        sup, ctrl = _campaign(CFG, 200, 21)
        s = summarize_campaign(sup + ctrl, CFG, n_boot=50)
        assert s.n_superposed + s.n_control == 400
        assert s.n_superposed == len(sup)
        assert len(s.onset_delays_superposed) + s.n_no_onset_superposed == s.n_superposed
        assert len(s.mean_trace_control) == CFG.n_samples
        assert s.gamma_ci_low <= s.gamma_estimate <= s.gamma_ci_high
        assert s.ks_p_value < 0.01
        assert s.mean_excess_delay > 0

    def test_no_estimate(self):
        sup, ctrl = _campaign(CFG, 20, 22)
        s = summarize_campaign(sup + ctrl, CFG, estimate=False)
        assert math.isnan(s.gamma_estimate)


class TestBenchmarks:
    @pytest.fixture
    def rows(self):
        return {r.label: r for r in benchmark_table()}

    def test_proton_years(self, rows):
        for t in (rows["proton"].t_gamma1, rows["proton"].t_gamma_8pi):
            assert 1e6 <= t / (365.25 * 86400) <= 1e8

    def test_dust(self, rows):
        assert 1e-9 <= rows["dust"].t_gamma_8pi <= 1e-7
        assert 1e-9 <= rows["dust"].t_gamma1 <= 1e-7
        assert rows["dust"].lam == pytest.approx(1.0)

    def test_mirror_microseconds(self, rows):
        r = rows["mirror"]
        assert any(abs(math.log10(t / 1.4e-6)) <= 1 for t in (r.t_gamma1, r.t_gamma_8pi))

    def test_cat_smallest(self, rows):
        others = [r.t_gamma1 for k, r in rows.items() if k != "cat"]
        assert rows["cat"].t_gamma1 < min(others)

    def test_gamma_ratio(self, rows):
        for r in rows.values():
            assert r.t_gamma1 / r.t_gamma_8pi == pytest.approx(8 * math.pi, rel=1e-12)

    def test_csv_and_text(self, rows):
        text = benchmark_csv(list(rows.values()))
        assert text.splitlines()[0].startswith("label,mass_kg")
        assert len(text.splitlines()) == 5
        out = format_benchmark_table(list(rows.values()), (("spad", 1000.0),))
        assert "cat" in out and "spad" in out
