import math
from dataclasses import replace

import numpy as np
import pytest

from dpsim.apparatus import (
    ApparatusConfig,
    ConfigError,
    TriggerError,
    TriggerSource,
    angstrom_crossing_time,
    baseline_intensity,
    collapse_rate_fn,
    dark_rate,
    interference_intensity,
    piezo_displacement,
    run_campaign,
    run_trial,
    sample_trigger,
)
from dpsim.dynamics import Branch
from dpsim.rng import derive_seed, generator
from dpsim.selfenergy import MassBody, SuperpositionGeometry, collapse_rate, self_energy

CFG = ApparatusConfig()


class TestDarkRate:
    def test_cooled(self):
        assert dark_rate(1e7, 30) == pytest.approx(1e4, rel=1e-12)

    def test_ambient(self):
        assert dark_rate(1e7, 0) == 1e7

    def test_one_decade(self):
        assert dark_rate(1e7, 10) == pytest.approx(1e6, rel=1e-12)


class TestTrigger:
    def test_laser_off_is_control(self):
        cfg = replace(CFG, photon_rate=0.0)
        rng = generator(1)
        assert all(sample_trigger(cfg, rng)[1].is_control for _ in range(1000))

    def test_bright_laser(self):
        cfg = replace(CFG, photon_rate=1e12)
        rng = generator(2)
        n = sum(sample_trigger(cfg, rng)[1] is TriggerSource.Photon for _ in range(10000))
        assert n / 10000 > 0.999

    def test_equal_rates_one_third(self):
        cfg = replace(CFG, photon_rate=2e4, spad_efficiency=0.5)
        rng = generator(3)
        n = 100_000
        k = sum(sample_trigger(cfg, rng)[1] is TriggerSource.Photon for _ in range(n))
        assert abs(k / n - 1 / 3) <= 3 * math.sqrt(2 / 9 / n)

    def test_spad_symmetry(self):
        cfg = replace(CFG, photon_rate=0.0)
        rng = generator(4)
        n = 100_000
        k = sum(sample_trigger(cfg, rng)[1] is TriggerSource.DarkCountSpad1 for _ in range(n))
        assert abs(k / n - 0.5) <= 0.005

    def test_trigger_time_mean(self):
        cfg = replace(CFG, photon_rate=0.0)
        rng = generator(5)
        t = np.array([sample_trigger(cfg, rng)[0] for _ in range(20000)])
        assert t.mean() == pytest.approx(1 / 2e4, rel=0.03)

    def test_nothing_can_fire(self):
        cfg = replace(CFG, photon_rate=0.0, ambient_dark_rate=0.0)
        with pytest.raises(TriggerError):
            sample_trigger(cfg, generator(0))


class TestPiezo:
    def test_start(self):
        assert piezo_displacement(0.0, CFG) == 0.0

    def test_saturation(self):
        assert piezo_displacement(1.0, CFG) == pytest.approx(CFG.piezo_full_scale, rel=1e-12)

    def test_one_tau(self):
        assert piezo_displacement(CFG.piezo_tau, CFG) == pytest.approx(6.3212e-7, rel=1e-4)

    def test_monotone(self):
        t = np.linspace(0, 1e-3, 1001)
        assert np.all(np.diff(piezo_displacement(t, CFG)) > 0)

    def test_angstrom_crossing(self):
        t = angstrom_crossing_time(CFG)
        assert piezo_displacement(t, CFG) == pytest.approx(1e-10, rel=1e-12)


class TestIntensity:
    def test_baseline(self):
        assert interference_intensity(0.0, 0.0, CFG) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("d", [1e-10, 3.3e-8, 1e-6])
    def test_both_move_eraser_off(self, d):
        cfg = replace(CFG, eraser_enabled=False)
        assert interference_intensity(d, d, cfg) == pytest.approx(0.5, abs=1e-15)

    def test_one_angstrom(self):
        dphi = 2 * math.pi * 2 * 1e-10 / 632.8e-9
        assert dphi == pytest.approx(1.986e-3, rel=1e-3)
        i = interference_intensity(1e-10, 0.0, CFG)
        assert i == pytest.approx(0.5 - 0.5 * math.sin(dphi), abs=1e-15)
        assert i == pytest.approx(0.49901, abs=1e-5)

    def test_eraser_same_shift(self):
        assert interference_intensity(1e-9, 0, CFG) == pytest.approx(interference_intensity(0, 1e-9, CFG), abs=1e-15)

    def test_which_way_opposite(self):
        cfg = replace(CFG, eraser_enabled=False)
        a, b = interference_intensity(1e-9, 0, cfg), interference_intensity(0, 1e-9, cfg)
        assert (a - 0.5) * (b - 0.5) < 0


class TestHazard:
    def test_rate_is_two_mirrors_and_mounts(self):
        d = piezo_displacement(3e-7, CFG)
        E = 2 * (self_energy(SuperpositionGeometry(CFG.mirror, d))
                 + self_energy(SuperpositionGeometry(CFG.mount, d * CFG.mirror.mass / CFG.mount.mass)))
        extra = sum(1 / t for _, t in CFG.extra_component_times)
        assert collapse_rate_fn(CFG)(3e-7) == pytest.approx(collapse_rate(E, CFG.gamma) + extra, rel=1e-12)

    def test_mount_is_about_one_percent(self):
        d = 1e-7
        mirror = self_energy(SuperpositionGeometry(CFG.mirror, d))
        mount = self_energy(SuperpositionGeometry(CFG.mount, d / 100))
        assert 0.002 < mount / mirror < 0.05

    def test_entrainment_only_without_eraser(self):
        on = collapse_rate_fn(replace(CFG, entrainment_rate=5.0))(0.0)
        off = collapse_rate_fn(replace(CFG, entrainment_rate=5.0, eraser_enabled=False))(0.0)
        assert off - on == pytest.approx(5.0, rel=1e-12)

    def test_spread_factor(self):
        cfg = replace(CFG, rate_spread_factor=1.1, extra_component_times=())
        base = replace(CFG, extra_component_times=())
        assert collapse_rate_fn(cfg)(1e-7) == pytest.approx(1.1 * collapse_rate_fn(base)(1e-7), rel=1e-14)


class TestConfigValidation:
    def test_efficiency_bound(self):
        with pytest.raises(ConfigError, match=r"spad_efficiency.*\[0, 1\]"):
            ApparatusConfig(spad_efficiency=1.5)

    def test_resolution_bound(self):
        with pytest.raises(ConfigError, match="sample_interval"):
            ApparatusConfig(sample_interval=2e-7)

    def test_negative_rate(self):
        with pytest.raises(ConfigError, match="photon_rate"):
            ApparatusConfig(photon_rate=-1)

    def test_hashable(self):
        assert hash(ApparatusConfig()) == hash(ApparatusConfig())


def _find_trial(cfg, want, start=0):
    for i in range(start, start + 5000):
        rec = run_trial(cfg, i, derive_seed(123, i))
        if want(rec):
            return rec
    raise AssertionError("no matching trial")


class TestRunTrial:
    def test_uniform_samples_in_range(self):
        rec = run_trial(CFG, 0, 77)
        assert len(rec.times) == CFG.n_samples
        assert np.allclose(np.diff(rec.times), CFG.sample_interval)
        assert np.all((rec.intensity >= 0) & (rec.intensity <= 1))
        assert rec.samples[0].t == 0.0

    def test_precollapse_flat(self):
        rec = _find_trial(CFG, lambda r: r.trigger_source is TriggerSource.Photon and r.collapse_time > 5e-8)
        pre = rec.times < rec.collapse_time
        flat = np.round(baseline_intensity(CFG) / CFG.detector_quantization) * CFG.detector_quantization
        assert np.all(rec.intensity[pre] == flat)
        assert np.any(rec.intensity[~pre] != flat)

    def test_mixture_readout_moves_early(self):
        cfg = replace(CFG, precollapse_readout="mixture")
        rec = _find_trial(cfg, lambda r: r.trigger_source is TriggerSource.Photon and r.collapse_time > 5e-8)
        pre = rec.times < rec.collapse_time
        assert np.any(rec.intensity[pre] != 0.5)

    def test_control_departs_immediately(self):
        cfg = replace(CFG, photon_rate=0.0)
        rec = run_trial(cfg, 0, 8)
        assert rec.collapse_time == 0.0
        assert rec.surviving_branch is (Branch.BRANCH1 if rec.trigger_source is TriggerSource.DarkCountSpad1
                                        else Branch.BRANCH2)
        first = rec.times[np.nonzero(rec.intensity != 0.5)[0][0]]
        assert first <= angstrom_crossing_time(cfg) + cfg.sample_interval

    def test_huge_gamma_stays_flat(self):
        cfg = replace(CFG, photon_rate=1e12, gamma=1e30, extra_component_times=())
        rec = run_trial(cfg, 0, 9)
        assert rec.trigger_source is TriggerSource.Photon
        assert rec.collapse_time == math.inf
        assert np.all(rec.intensity == 0.5)

    def test_instant_collapse_matches_control(self):
        # deterministic collapse with an enormous rate: trace equals the classical ramp
        fast = replace(CFG, photon_rate=1e12, collapse_model="deterministic", gamma=1e-30)
        rec = run_trial(fast, 0, 10)
        assert rec.collapse_time < 1e-12
        ctrl = replace(fast, photon_rate=0.0)
        src = TriggerSource.DarkCountSpad1 if rec.surviving_branch is Branch.BRANCH1 else TriggerSource.DarkCountSpad2
        other = _find_trial(ctrl, lambda r: r.trigger_source is src)
        assert np.array_equal(rec.intensity, other.intensity)

    def test_noise_is_seeded(self):
        cfg = replace(CFG, detector_noise=1e-3)
        a, b = run_trial(cfg, 3, 42), run_trial(cfg, 3, 42)
        assert np.array_equal(a.intensity, b.intensity)
        assert np.any(a.intensity != run_trial(cfg, 3, 43).intensity)


class TestCampaign:
    def test_single_trial(self):
        [rec] = run_campaign(CFG, 1, 5)
        ref = run_trial(CFG, 0, derive_seed(5, 0))
        assert rec.trigger_time == ref.trigger_time and np.array_equal(rec.intensity, ref.intensity)

    def test_parallel_identical(self):
        a = run_campaign(CFG, 40, 6, parallelism=1)
        b = run_campaign(CFG, 40, 6, parallelism=4)
        assert [r.trial_id for r in b] == list(range(40))
        for x, y in zip(a, b):
            assert x.trigger_time == y.trigger_time and x.collapse_time == y.collapse_time
            assert np.array_equal(x.intensity, y.intensity)

    def test_seeds_differ(self):
        a = [r.trigger_time for r in run_campaign(CFG, 20, 1)]
        b = [r.trigger_time for r in run_campaign(CFG, 20, 2)]
        assert a != b

    def test_needs_a_trial(self):
        with pytest.raises(ValueError):
            run_campaign(CFG, 0, 1)


def test_mirror_default_radius():
    assert CFG.mirror.radius == pytest.approx(2.673e-3, rel=1e-3)
    assert isinstance(CFG.mount, MassBody) and CFG.mount.mass == 2e-2
