"""Two-branch density-matrix surrogate: decoherence and stochastic collapse.

Decoherence only shrinks the off-diagonal magnitude. Collapse is the first
event of an inhomogeneous Poisson process with hazard ``E_g(t) / (gamma hbar)``
and picks a branch with Born weights. The two processes never talk to each
other, which is the whole point of the model.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

NO_COLLAPSE = math.inf

_TRACE_TOL = 1e-12


class StateError(RuntimeError):
    """Operation is not allowed on a state in its current collapse status."""


class Branch(enum.Enum):
    NONE = "None"
    BRANCH1 = "Branch1"
    BRANCH2 = "Branch2"


@dataclass(frozen=True)
class TwoBranchState:
    p1: float = 0.5
    p2: float = 0.5
    coherence_mag: float = 0.5
    coherence_phase: float = 0.0
    collapsed: Branch = Branch.NONE

    def __post_init__(self):
        check_invariants(self)

    def density_matrix(self) -> np.ndarray:
        off = self.coherence_mag * np.exp(-1j * self.coherence_phase)
        return np.array([[self.p1, off], [np.conj(off), self.p2]])

    @property
    def purity(self) -> float:
        return self.p1**2 + self.p2**2 + 2.0 * self.coherence_mag**2


def check_invariants(state: TwoBranchState) -> None:
    if state.p1 < 0 or state.p2 < 0:
        raise StateError(f"negative population in {state}")
    if abs(state.p1 + state.p2 - 1.0) > _TRACE_TOL:
        raise StateError(f"trace {state.p1 + state.p2!r} != 1")
    if state.coherence_mag < 0 or state.coherence_mag > math.sqrt(state.p1 * state.p2) + _TRACE_TOL:
        raise StateError(f"coherence {state.coherence_mag!r} violates positivity")
    if state.collapsed is not Branch.NONE:
        if (state.p1, state.p2) not in ((1.0, 0.0), (0.0, 1.0)) or state.coherence_mag != 0.0:
            raise StateError("collapsed state must be a pure diagonal projector")


def initial_state(theta: float = 0.0) -> TwoBranchState:
    """Equal superposition produced by a single photon at the beam splitter."""
    return TwoBranchState(0.5, 0.5, 0.5, theta, Branch.NONE)


def decohere_step(state: TwoBranchState, dt: float, gamma_dec: float) -> TwoBranchState:
    if state.collapsed is not Branch.NONE:
        raise StateError("cannot decohere a collapsed state")
    if dt < 0 or gamma_dec < 0:
        raise ValueError("dt and gamma_dec must be >= 0")
    return replace(state, coherence_mag=state.coherence_mag * math.exp(-gamma_dec * dt))


def apply_collapse(state: TwoBranchState, u: float) -> TwoBranchState:
    """Break the symmetry: Branch1 when ``u < p1``, else Branch2."""
    if state.collapsed is not Branch.NONE:
        raise StateError("state has already collapsed")
    if u < state.p1:
        return TwoBranchState(1.0, 0.0, 0.0, state.coherence_phase, Branch.BRANCH1)
    return TwoBranchState(0.0, 1.0, 0.0, state.coherence_phase, Branch.BRANCH2)


def _tabulate(rate_fn, horizon, rtol, n0=256, max_points=4_000_000):
    """Adaptive trapezoid grid for the cumulative hazard on [0, horizon].

    A segment is converged once its trapezoid and Simpson estimates differ
    by less than ``rtol * total * h / horizon``; converged segments are
    split once more (the midpoint is already paid for) and then frozen.
    """
    t = np.linspace(0.0, horizon, n0 + 1)
    f = _rate_values(rate_fn, t)
    done = np.zeros(n0, dtype=bool)
    while not done.all() and len(t) < max_points:
        idx = np.nonzero(~done)[0]
        tm = 0.5 * (t[idx] + t[idx + 1])
        fm = _rate_values(rate_fn, tm)
        h = t[idx + 1] - t[idx]
        coarse = 0.5 * h * (f[idx] + f[idx + 1])
        fine = 0.25 * h * (f[idx] + 2.0 * fm + f[idx + 1])
        seg = 0.5 * np.diff(t) * (f[:-1] + f[1:])
        total = seg[done].sum() + fine.sum()
        ok = np.abs(fine - coarse) / 3.0 <= rtol * total * h / horizon
        t = np.insert(t, idx + 1, tm)
        f = np.insert(f, idx + 1, fm)
        # each split segment becomes two halves with the same status
        status = done.astype(np.int8)
        status[idx] = np.where(ok, 1, 0)
        reps = np.ones(len(done), dtype=int)
        reps[idx] = 2
        done = np.repeat(status, reps).astype(bool)
    H = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (f[:-1] + f[1:]))])
    return t, f, H


def _rate_values(rate_fn, t):
    r = np.asarray(rate_fn(t), dtype=np.float64)
    if r.shape != np.shape(t):
        r = np.broadcast_to(r, np.shape(t)).astype(np.float64)
    if np.any(r < 0) or np.any(~np.isfinite(r)):
        raise ValueError("collapse rate must be finite and non-negative")
    return r


@dataclass
class HazardTrajectory:
    """Collapse rate as a function of time since the superposition formed.

    ``rate_fn`` must accept numpy arrays. The cumulative hazard is tabulated
    once, lazily, and shared by every sample drawn from the trajectory.
    """

    rate_fn: Callable[[np.ndarray], np.ndarray]
    horizon: float
    rtol: float = 1e-9
    _table: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")

    @classmethod
    def constant(cls, rate: float, horizon: float) -> "HazardTrajectory":
        return cls(lambda t: np.full(np.shape(t), float(rate)), horizon)

    @property
    def table(self):
        if self._table is None:
            self._table = _tabulate(self.rate_fn, self.horizon, self.rtol)
        return self._table

    def cumulative(self, t):
        """Integrated hazard from 0 to ``t`` (piecewise-quadratic interpolant)."""
        grid, f, H = self.table
        t = np.clip(np.asarray(t, dtype=np.float64), 0.0, self.horizon)
        i = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, len(grid) - 2)
        s = t - grid[i]
        k = (f[i + 1] - f[i]) / (grid[i + 1] - grid[i])
        return H[i] + f[i] * s + 0.5 * k * s * s

    def invert(self, target):
        """Earliest time at which the integrated hazard reaches ``target``.

        Returns ``NO_COLLAPSE`` where the horizon is reached first. Within a
        grid segment the rate is linear, so the crossing is the root of a
        quadratic and is solved in closed form.
        """
        grid, f, H = self.table
        y = np.asarray(target, dtype=np.float64)
        out = np.full(y.shape, NO_COLLAPSE)
        ok = y <= H[-1]
        yy = y[ok]
        i = np.clip(np.searchsorted(H, yy, side="left") - 1, 0, len(grid) - 2)
        delta = yy - H[i]
        h = grid[i + 1] - grid[i]
        k = (f[i + 1] - f[i]) / h
        disc = np.sqrt(np.maximum(f[i] ** 2 + 2.0 * k * delta, 0.0))
        denom = f[i] + disc
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(denom > 0, 2.0 * delta / denom, 0.0)
        out[ok] = grid[i] + np.clip(s, 0.0, h)
        return out if out.ndim else float(out)


def sample_collapse_time(hazard: HazardTrajectory, u, deterministic: bool = False):
    """First-event time for uniform draw(s) ``u`` in (0, 1).

    The event happens when the integrated hazard reaches ``-ln u``. With
    ``deterministic=True`` the threshold is exactly 1 and ``u`` is ignored.
    """
    u = np.asarray(u, dtype=np.float64)
    if deterministic:
        target = np.ones_like(u)
    else:
        if np.any((u <= 0) | (u > 1)):
            raise ValueError("u must lie in (0, 1]")
        target = -np.log(u)
    return hazard.invert(target)


@dataclass(frozen=True)
class Timeline:
    t: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    coherence: np.ndarray


@dataclass(frozen=True)
class EvolveResult:
    collapse_time: float
    branch: Branch
    final_state: TwoBranchState
    timeline: Timeline


def evolve(hazard: HazardTrajectory, gamma_dec: float, dt: float, seed: int,
           collapse_model: str = "poisson", state: TwoBranchState | None = None) -> EvolveResult:
    """Run one superposition until collapse or the hazard horizon.

    The timeline holds the state at every multiple of ``dt`` before collapse
    plus the post-collapse state at the collapse instant.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if collapse_model not in ("poisson", "deterministic"):
        raise ValueError(f"unknown collapse_model {collapse_model!r}")
    state = initial_state() if state is None else state
    rng = np.random.Generator(np.random.Philox(seed))
    u_time = 1.0 - rng.random()
    u_branch = rng.random()

    T = float(sample_collapse_time(hazard, u_time, collapse_model == "deterministic"))
    end = min(T, hazard.horizon)
    n = int(math.floor(end / dt)) + 1
    if T < NO_COLLAPSE and n > 1 and (n - 1) * dt >= T:
        n -= 1
    t = dt * np.arange(n)
    # repeated decohere_step at fixed dt is a geometric sequence
    coh = state.coherence_mag * np.exp(-gamma_dec * dt) ** np.arange(n)
    p1 = np.full(n, state.p1)
    p2 = np.full(n, state.p2)
    final = replace(state, coherence_mag=float(coh[-1]))
    branch = Branch.NONE
    if T < NO_COLLAPSE:
        final = apply_collapse(final, u_branch)
        branch = final.collapsed
        t = np.append(t, T)
        p1 = np.append(p1, final.p1)
        p2 = np.append(p2, final.p2)
        coh = np.append(coh, 0.0)
    return EvolveResult(T, branch, final, Timeline(t, p1, p2, coh))
