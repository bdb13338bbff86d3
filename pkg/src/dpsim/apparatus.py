"""Event-level Monte Carlo of the SPAD-driven Mach-Zehnder experiment.

One trial: the first of three competing clocks fires (a detected photon or a
dark count in either SPAD). A photon leaves both piezo mirrors ramping in
superposition until the collapse hazard fires; a dark count drives one mirror
classically and serves as the control. The detector trace is sampled on a
uniform grid starting at the trigger.
"""
from __future__ import annotations

import enum
import functools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .dynamics import NO_COLLAPSE, Branch, HazardTrajectory
from .rng import derive_seed, generator
from .selfenergy import (
    DEFAULT_CONSTANTS,
    PENROSE_GAMMA,
    MassBody,
    OverlapCoefficientVariant,
    PhysicalConstants,
    collapse_rate,
    self_energy_profile,
)

__all__ = [
    "NO_COLLAPSE",
    "ApparatusConfig",
    "COMPONENT_COLLAPSE_TIMES",
    "ConfigError",
    "TraceSample",
    "TrialRecord",
    "TriggerError",
    "TriggerSource",
    "angstrom_crossing_time",
    "baseline_intensity",
    "collapse_hazard",
    "collapse_rate_fn",
    "dark_rate",
    "interference_intensity",
    "piezo_displacement",
    "run_campaign",
    "run_trial",
    "sample_trigger",
]

GLASS_DENSITY = 2500.0
ALUMINIUM_DENSITY = 2700.0

# collapse times of the readout electronics, taken as given (seconds)
COMPONENT_COLLAPSE_TIMES = (
    ("spad", 1000.0),
    ("copper_wiring", 1e10),
    ("resistor", 50.0),
    ("piezo", 0.1),
)

MAX_SAMPLE_INTERVAL = 1e-7


class ConfigError(ValueError):
    pass


class TriggerError(RuntimeError):
    pass


class TriggerSource(enum.Enum):
    Photon = "Photon"
    DarkCountSpad1 = "DarkCountSpad1"
    DarkCountSpad2 = "DarkCountSpad2"

    @property
    def is_control(self) -> bool:
        return self is not TriggerSource.Photon


def default_mirror() -> MassBody:
    return MassBody.from_density(2e-4, GLASS_DENSITY, "mirror")


def default_mount() -> MassBody:
    return MassBody.from_density(2e-2, ALUMINIUM_DENSITY, "mount")


@dataclass(frozen=True)
class ApparatusConfig:
    photon_rate: float = 1e6
    spad_efficiency: float = 0.5
    spad_dead_time: float = 5e-8
    ambient_dark_rate: float = 1e7
    cooling_delta: float = 30.0
    laser_wavelength: float = 632.8e-9
    geometry_factor: float = 2.0
    bias_phase: float = math.pi / 2
    piezo_tau: float = 1e-4
    piezo_full_scale: float = 1e-6
    mirror: MassBody = field(default_factory=default_mirror)
    mount: MassBody = field(default_factory=default_mount)
    eraser_enabled: bool = True
    entrainment_rate: float = 0.0
    sample_interval: float = 1e-8
    trace_duration: float = 2e-6
    gamma: float = PENROSE_GAMMA
    gamma_dec: float = 1e38
    collapse_model: str = "poisson"
    extra_component_times: tuple[tuple[str, float], ...] = COMPONENT_COLLAPSE_TIMES
    variant: OverlapCoefficientVariant = OverlapCoefficientVariant.ContinuityCorrected
    precollapse_readout: str = "baseline"
    rate_spread_factor: float = 1.0
    detector_noise: float = 0.0
    detector_quantization: float = 1e-4
    constants: PhysicalConstants = DEFAULT_CONSTANTS

    def __post_init__(self):
        nonneg = ("photon_rate", "spad_dead_time", "ambient_dark_rate", "cooling_delta",
                  "entrainment_rate", "gamma_dec", "detector_noise", "detector_quantization")
        for name in nonneg:
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        positive = ("laser_wavelength", "geometry_factor", "piezo_tau", "piezo_full_scale",
                    "sample_interval", "trace_duration", "gamma", "rate_spread_factor")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not 0.0 <= self.spad_efficiency <= 1.0:
            raise ConfigError(f"spad_efficiency must lie in [0, 1], got {self.spad_efficiency!r}")
        if self.sample_interval > MAX_SAMPLE_INTERVAL:
            raise ConfigError(f"sample_interval must be <= {MAX_SAMPLE_INTERVAL:g} s, "
                              f"got {self.sample_interval!r}")
        if self.sample_interval < 1e-9:
            raise ConfigError("sample_interval must be >= 1e-9 s (traces are stored in integer ns)")
        if self.trace_duration < self.sample_interval:
            raise ConfigError("trace_duration must be at least one sample_interval")
        if self.collapse_model not in ("poisson", "deterministic"):
            raise ConfigError(f"collapse_model must be poisson or deterministic, "
                              f"got {self.collapse_model!r}")
        if self.precollapse_readout not in ("baseline", "mixture"):
            raise ConfigError(f"precollapse_readout must be baseline or mixture, "
                              f"got {self.precollapse_readout!r}")
        for label, t in self.extra_component_times:
            if not t > 0:
                raise ConfigError(f"component {label!r} collapse time must be > 0")
        if not isinstance(self.variant, OverlapCoefficientVariant):
            object.__setattr__(self, "variant", OverlapCoefficientVariant.parse(self.variant))

    @property
    def n_samples(self) -> int:
        return int(round(self.trace_duration / self.sample_interval))

    @property
    def dark_rate(self) -> float:
        return dark_rate(self.ambient_dark_rate, self.cooling_delta)


@dataclass(frozen=True)
class TraceSample:
    t: float
    intensity: float


@dataclass
class TrialRecord:
    trial_id: int
    seed: int
    trigger_time: float
    trigger_source: TriggerSource
    collapse_time: float
    surviving_branch: Branch
    times: np.ndarray
    intensity: np.ndarray

    @property
    def samples(self) -> list[TraceSample]:
        return [TraceSample(float(t), float(i)) for t, i in zip(self.times, self.intensity)]


def dark_rate(ambient_dark_rate: float, cooling_delta: float) -> float:
    """Dark count rate after cooling; one decade per 10 K."""
    if cooling_delta < 0:
        raise ValueError("cooling_delta must be >= 0")
    return ambient_dark_rate * 10.0 ** (-cooling_delta / 10.0)


def sample_trigger(config: ApparatusConfig, rng: np.random.Generator) -> tuple[float, TriggerSource]:
    """First of three competing exponential clocks."""
    rates = np.array([config.photon_rate * config.spad_efficiency, config.dark_rate, config.dark_rate])
    total = rates.sum()
    if not total > 0:
        raise TriggerError("photon and dark count rates are all zero; nothing can trigger")
    t = rng.exponential(1.0 / total)
    k = int(np.searchsorted(np.cumsum(rates) / total, rng.random(), side="right"))
    return float(t), list(TriggerSource)[min(k, 2)]


def piezo_displacement(t, config: ApparatusConfig):
    """First-order lag response of a piezo stepped to full scale at t=0."""
    t = np.asarray(t, dtype=np.float64)
    return config.piezo_full_scale * -np.expm1(-np.maximum(t, 0.0) / config.piezo_tau)


def interference_intensity(mirror_a_disp, mirror_b_disp, config: ApparatusConfig):
    """Normalised Mach-Zehnder output for the given mirror displacements.

    With the eraser on, mirror B is driven in reverse so either branch shifts
    the phase the same way.
    """
    sign_b = -1.0 if config.eraser_enabled else 1.0
    path = np.asarray(mirror_a_disp, dtype=np.float64) - sign_b * np.asarray(mirror_b_disp, dtype=np.float64)
    return np.cos(0.5 * config.bias_phase + math.pi * config.geometry_factor * path / config.laser_wavelength) ** 2


def branch_intensity(branch: Branch, t, config: ApparatusConfig):
    d = piezo_displacement(t, config)
    if branch is Branch.BRANCH1:
        return interference_intensity(d, 0.0, config)
    if branch is Branch.BRANCH2:
        return interference_intensity(0.0, d, config)
    raise ValueError("branch must be BRANCH1 or BRANCH2")


def baseline_intensity(config: ApparatusConfig) -> float:
    return float(interference_intensity(0.0, 0.0, config))


def collapse_rate_fn(config: ApparatusConfig, gamma: float | None = None):
    """Collapse hazard (1/s) versus time since a photon trigger.

    Each branch displaces one mirror and its mount recoils; the energy of
    the branch difference is the sum over both mirrors and both mounts.
    """
    gamma = config.gamma if gamma is None else gamma
    c = config.constants
    extra = math.fsum(1.0 / t for _, t in config.extra_component_times)
    if not config.eraser_enabled:
        extra += config.entrainment_rate
    ratio = config.mirror.mass / config.mount.mass
    spread = config.rate_spread_factor
    per_joule = collapse_rate(1.0, gamma, c)

    def rate(t):
        d = piezo_displacement(t, config)
        E = self_energy_profile(config.mirror, d, config.variant, c)
        E = E + self_energy_profile(config.mount, ratio * d, config.variant, c)
        return spread * 2.0 * E * per_joule + extra

    return rate


@functools.lru_cache(maxsize=32)
def collapse_hazard(config: ApparatusConfig) -> HazardTrajectory:
    return HazardTrajectory(collapse_rate_fn(config), config.trace_duration)


def _trace(config: ApparatusConfig, times, source, collapse_time, branch, rng):
    if source.is_control:
        intensity = branch_intensity(branch, times, config)
    else:
        if config.precollapse_readout == "baseline":
            pre = np.full(times.shape, baseline_intensity(config))
        else:
            pre = 0.5 * (branch_intensity(Branch.BRANCH1, times, config)
                         + branch_intensity(Branch.BRANCH2, times, config))
        if branch is Branch.NONE:
            intensity = pre
        else:
            intensity = np.where(times >= collapse_time, branch_intensity(branch, times, config), pre)
    if config.detector_noise > 0:
        intensity = intensity + rng.normal(0.0, config.detector_noise, intensity.shape)
    intensity = np.clip(intensity, 0.0, 1.0)
    q = config.detector_quantization
    if q > 0:
        intensity = np.clip(np.round(intensity / q) * q, 0.0, 1.0)
    return intensity


def run_trial(config: ApparatusConfig, trial_id: int, seed: int) -> TrialRecord:
    rng = generator(seed)
    trigger_time, source = sample_trigger(config, rng)
    times = config.sample_interval * np.arange(config.n_samples)
    if source is TriggerSource.Photon:
        result = dynamics.evolve(collapse_hazard(config), config.gamma_dec, config.sample_interval,
                                 derive_seed(seed, 1), config.collapse_model)
        collapse_time, branch = result.collapse_time, result.branch
    else:
        collapse_time = 0.0
        branch = Branch.BRANCH1 if source is TriggerSource.DarkCountSpad1 else Branch.BRANCH2
    intensity = _trace(config, times, source, collapse_time, branch, rng)
    return TrialRecord(trial_id, seed, trigger_time, source, collapse_time, branch, times, intensity)


def _run_chunk(args):
    config, ids, seeds = args
    return [run_trial(config, i, s) for i, s in zip(ids, seeds)]


def run_campaign(config: ApparatusConfig, n_trials: int, master_seed: int,
                 parallelism: int = 1, first_trial_id: int = 0) -> list[TrialRecord]:
    """Independent trials with seeds derived from ``(master_seed, trial_id)``.

    Output is ordered by trial id and does not depend on ``parallelism``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    ids = list(range(first_trial_id, first_trial_id + n_trials))
    seeds = [derive_seed(master_seed, i) for i in ids]
    workers = max(1, min(parallelism or os.cpu_count() or 1, n_trials))
    if workers == 1:
        return _run_chunk((config, ids, seeds))
    n_chunks = min(n_trials, workers * 4)
    bounds = np.linspace(0, n_trials, n_chunks + 1).astype(int)
    chunks = [(config, ids[a:b], seeds[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, chunks))
    return [rec for part in parts for rec in part]


def angstrom_crossing_time(config: ApparatusConfig) -> float:
    """Time for a control mirror to move one angstrom (analytic lag inversion)."""
    return config.piezo_tau * math.log(1.0 / (1.0 - 1e-10 / config.piezo_full_scale))

