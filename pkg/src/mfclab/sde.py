"""Particle simulation of controlled mean-field jump diffusions.

Simulates N i.i.d. copies of

    dX = b(t, X, mu, u) dt + sigma(t, X, mu, u) dB
         + integral gamma(t, X, mu, u, zeta) Ntilde(dt, dzeta)

by an explicit Euler scheme with left-endpoint coefficients and compensated
finite-activity jumps.  The measure argument fed to the coefficients is
either a measure-valued control (``mu_mode="exogenous"``) or the previous
step's cross-sectional empirical law (``mu_mode="empirical"``, the mean-field
coupling) -- the explicit coupling avoids a fixed-point solve per step.

Coefficients are numpy-vectorized over particles:

    b(t, x, mu, u, scen) -> array
    sigma(t, x, mu, u, scen) -> array
    gamma(t, x, mu, u, zeta, scen) -> array

with ``x`` the particle-state vector, ``mu`` a DiscreteMeasure, ``u`` a
scalar or per-particle array and ``scen`` the particle indices.  Noise is
drawn once per bundle, before stepping, from a counter-based Philox stream
keyed by the seed, with row i of each draw forming particle i's block:
bundles are reproducible bit for bit from (model, controls, N, M, seed) and
independent of any parallel schedule, and reusing a bundle's noise across
control variants gives common random numbers.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lawproc import LevyMeasure, MeasurePath, empirical_law
from .measures import DiscreteMeasure

FD_STATE_STEP = 1e-5
FD_DIRECTION_STEP = 1e-5


class SimulationError(RuntimeError):
    """Non-finite state or coefficient during particle integration."""


class InadmissiblePerturbation(ValueError):
    """A perturbed control leaves the admissible set."""


@dataclass(frozen=True)
class InfoPattern:
    """Information available to a control: full or fixed-delay observation.

    Under ``delay``, the control sees state and law from time (t - delay)+,
    rounded to the simulation grid.
    """

    kind: str = "full"
    delay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("full", "delay"):
            raise ValueError(f"unknown info pattern {self.kind!r}")
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")
        if self.kind == "full" and self.delay != 0.0:
            raise ValueError("full information cannot carry a delay")

    def lag_steps(self, dt: float) -> int:
        return 0 if self.kind == "full" else int(round(self.delay / dt))


class SimInfo:
    """What a control is allowed to see at evaluation time.

    Exposes the (possibly delayed) observation time, per-particle states and
    the cross-sectional empirical law at that time; the law is built lazily.
    """

    __slots__ = ("t", "step", "x", "scenario", "_law")

    def __init__(self, t: float, step: int, x: np.ndarray, scenario: np.ndarray):
        self.t = t
        self.step = step
        self.x = x
        self.scenario = scenario
        self._law: DiscreteMeasure | None = None

    @property
    def law(self) -> DiscreteMeasure:
        if self._law is None:
            self._law = empirical_law(self.x)
        return self._law

    def law_mass(self, lo: float, hi: float) -> float:
        """Empirical mass on (lo, hi] without building the atom list."""
        return float(np.mean((self.x > lo) & (self.x <= hi)))


@dataclass
class ControlPair:
    """A measure-valued control and a real-valued control with info patterns.

    ``measure_ctrl(t, info) -> DiscreteMeasure`` is the first player's
    control, ``scalar_ctrl(t, info) -> float | array`` the second player's;
    each sees a SimInfo restricted by its own pattern.  ``u_bounds`` declares
    the convex admissible set of the scalar control.
    """

    measure_ctrl: Callable[[float, SimInfo], DiscreteMeasure]
    scalar_ctrl: Callable[[float, SimInfo], float | np.ndarray]
    mu_info: InfoPattern = field(default_factory=InfoPattern)
    u_info: InfoPattern = field(default_factory=InfoPattern)
    u_bounds: tuple[float, float] | None = None


@dataclass
class CoefficientPartials:
    """Optional analytic partial derivatives of the model coefficients.

    Any entry left as None falls back to a central finite difference
    (step 1e-5): in x for the ``*_dx`` slots, in the control for ``*_du``,
    and along a measure direction eta for ``*_dmu`` (directional).
    """

    drift_dx: Callable | None = None
    vol_dx: Callable | None = None
    jump_dx: Callable | None = None
    drift_du: Callable | None = None
    vol_du: Callable | None = None
    jump_du: Callable | None = None
    drift_dmu: Callable | None = None
    vol_dmu: Callable | None = None
    jump_dmu: Callable | None = None


@dataclass
class ControlledModel:
    """Coefficients, Levy measure, initial state and horizon of the state SDE."""

    drift: Callable
    vol: Callable
    x0: float
    horizon: float
    jump: Callable | None = None
    levy: LevyMeasure | None = None
    lipschitz_const: float | None = None
    partials: CoefficientPartials | None = None

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if (self.levy is None) != (self.jump is None):
            raise ValueError("jump coefficient and Levy measure must come together")


@dataclass
class PerformanceSpec:
    """Running and terminal cost of a performance functional.

    ``running(t, x, m, mu, u, scen)`` sees the current law ``m`` and the
    measure control ``mu``; ``terminal(x, m, scen)`` the terminal pair.
    Partials default to central finite differences.
    """

    running: Callable
    terminal: Callable
    running_dx: Callable | None = None
    running_du: Callable | None = None
    terminal_dx: Callable | None = None


def negate_performance(perf: PerformanceSpec) -> PerformanceSpec:
    """The performance of the opposing player in a zero-sum game."""
    return PerformanceSpec(
        running=lambda *a: -perf.running(*a),
        terminal=lambda *a: -perf.terminal(*a),
        running_dx=None if perf.running_dx is None else (lambda *a: -perf.running_dx(*a)),
        running_du=None if perf.running_du is None else (lambda *a: -perf.running_du(*a)),
        terminal_dx=None if perf.terminal_dx is None else (lambda *a: -perf.terminal_dx(*a)),
    )


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

class NoiseBank:
    """Brownian increments and jump events for one particle system.

    Jump events are stored flat as (particle, step, zeta-index) triples sorted
    by step; ``events_at(k)`` returns the slice for one interval.
    """

    __slots__ = (
        "n_particles", "n_steps", "dt", "dB",
        "ev_particle", "ev_step", "ev_zeta", "_step_offsets", "seed",
    )

    def __init__(self, n_particles, n_steps, dt, dB, ev_particle, ev_step, ev_zeta, seed):
        self.n_particles = n_particles
        self.n_steps = n_steps
        self.dt = dt
        self.dB = dB
        self.ev_particle = ev_particle
        self.ev_step = ev_step
        self.ev_zeta = ev_zeta
        self.seed = seed
        self._step_offsets = np.searchsorted(ev_step, np.arange(n_steps + 1))

    @property
    def n_events(self) -> int:
        return self.ev_step.size

    def events_at(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self._step_offsets[k], self._step_offsets[k + 1]
        return self.ev_particle[lo:hi], self.ev_zeta[lo:hi]


def draw_noise(
    seed: int,
    n_particles: int,
    n_steps: int,
    horizon: float,
    levy: LevyMeasure | None = None,
) -> NoiseBank:
    """Draw all randomness up front from one counter-based Philox stream.

    Row i of every draw is particle i's noise block, so the layout is a pure
    function of (seed, N, M) and never depends on how the integration is
    scheduled; the Euler sweep itself consumes no randomness.
    """
    if n_particles < 1 or n_steps < 1:
        raise ValueError("need at least one particle and one step")
    dt = horizon / n_steps
    gen = np.random.Generator(np.random.Philox(key=seed))
    dB = gen.standard_normal((n_particles, n_steps)) * math.sqrt(dt)
    particle = np.empty(0, dtype=np.int64)
    step = np.empty(0, dtype=np.int64)
    zeta = np.empty(0, dtype=np.int64)
    if levy is not None:
        counts = gen.poisson(levy.total_rate * dt, (n_particles, n_steps))
        idx_p, idx_s = np.nonzero(counts)
        if idx_p.size:
            reps = counts[idx_p, idx_s]
            particle = np.repeat(idx_p, reps)
            step = np.repeat(idx_s, reps)
            if levy.n_atoms == 1:
                zeta = np.zeros(particle.size, dtype=np.int64)
            else:
                zeta = gen.choice(
                    levy.n_atoms, size=particle.size, p=levy.rates / levy.total_rate
                )
            order = np.lexsort((particle, step))
            particle, step, zeta = particle[order], step[order], zeta[order]
    return NoiseBank(n_particles, n_steps, dt, dB, particle, step, zeta, seed)


# ---------------------------------------------------------------------------
# particle bundle
# ---------------------------------------------------------------------------

class ParticleBundle:
    """Simulated paths plus the noise that produced them (for CRN reuse)."""

    __slots__ = ("times", "states", "noise", "seed", "_laws", "_brownian")

    def __init__(self, times: np.ndarray, states: np.ndarray, noise: NoiseBank, seed: int):
        self.times = times
        self.states = states
        self.noise = noise
        self.seed = seed
        self._laws: dict[int, DiscreteMeasure] = {}
        self._brownian: np.ndarray | None = None

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def dB(self) -> np.ndarray:
        return self.noise.dB

    def law_at(self, k: int) -> DiscreteMeasure:
        """Cross-sectional empirical law at grid index k (cached)."""
        law = self._laws.get(k)
        if law is None:
            law = empirical_law(self.states[:, k])
            self._laws[k] = law
        return law

    @property
    def law_path(self) -> MeasurePath:
        return MeasurePath(self.times, [self.law_at(k) for k in range(len(self.times))])

    def brownian_levels(self) -> np.ndarray:
        """B(t) per particle on the grid (zero at t=0)."""
        if self._brownian is None:
            levels = np.zeros_like(self.states)
            np.cumsum(self.noise.dB, axis=1, out=levels[:, 1:])
            self._brownian = levels
        return self._brownian

    def to_csv(self, states_path: str, events_path: str) -> None:
        """Binary-free serialization: a states file and a jump-events file."""
        with open(states_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["particle", "time", "state"])
            for i in range(self.n_particles):
                for k, t in enumerate(self.times):
                    writer.writerow([i, f"{t:.17g}", f"{self.states[i, k]:.17g}"])
        with open(events_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["particle", "step_index", "zeta_index"])
            for p, s, z in zip(self.noise.ev_particle, self.noise.ev_step, self.noise.ev_zeta):
                writer.writerow([int(p), int(s), int(z)])


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def _info_for(pattern: InfoPattern, k: int, times, states, scenario) -> SimInfo:
    k_info = max(0, k - pattern.lag_steps(float(times[1] - times[0])))
    return SimInfo(float(times[k_info]), k_info, states[:, k_info], scenario)


def _as_particle_values(u, idx: np.ndarray):
    return u[idx] if isinstance(u, np.ndarray) and u.ndim else u


def _step_controls(k, times, states, controls, mu_mode, law_cache, scenario):
    """Evaluate both controls at step k and pick the coefficients' measure."""
    t = float(times[k])
    info_mu = _info_for(controls.mu_info, k, times, states, scenario)
    info_u = _info_for(controls.u_info, k, times, states, scenario)
    mu_ctrl = controls.measure_ctrl(t, info_mu)
    u = controls.scalar_ctrl(t, info_u)
    if controls.u_bounds is not None:
        lo, hi = controls.u_bounds
        u_min = float(np.min(u))
        u_max = float(np.max(u))
        if u_min < lo - 1e-12 or u_max > hi + 1e-12:
            raise InadmissiblePerturbation(
                f"scalar control leaves U=[{lo}, {hi}] at t={t:.6g}: "
                f"range [{u_min:.6g}, {u_max:.6g}]"
            )
    if mu_mode == "empirical":
        law = law_cache.get(k)
        if law is None:
            law = empirical_law(states[:, k])
            law_cache[k] = law
        mu_coeff = law
    else:
        mu_coeff = mu_ctrl
    return mu_ctrl, u, mu_coeff


def _euler_sweep(model, controls, noise, times, x_init, mu_mode):
    n = noise.n_particles
    m = len(times) - 1
    dt = float(times[1] - times[0])
    scenario = np.arange(n)
    states = np.empty((n, m + 1))
    states[:, 0] = x_init
    law_cache: dict[int, DiscreteMeasure] = {}
    levy = model.levy
    for k in range(m):
        t = float(times[k])
        x = states[:, k]
        _, u, mu_coeff = _step_controls(k, times, states, controls, mu_mode, law_cache, scenario)
        b = model.drift(t, x, mu_coeff, u, scenario)
        s = model.vol(t, x, mu_coeff, u, scenario)
        x_next = x + b * dt + s * noise.dB[:, k]
        if levy is not None:
            comp = np.zeros(n)
            for j in range(levy.n_atoms):
                comp += levy.rates[j] * model.jump(
                    t, x, mu_coeff, u, levy.jump_sizes[j], scenario
                )
            x_next = x_next - dt * comp
            idx, zeta_idx = noise.events_at(k)
            if idx.size:
                u_p = _as_particle_values(u, idx)
                g = model.jump(
                    t, x[idx], mu_coeff, u_p, levy.jump_sizes[zeta_idx], scenario[idx]
                )
                np.add.at(x_next, idx, g)
        if not np.isfinite(x_next).all():
            bad = int(np.flatnonzero(~np.isfinite(x_next))[0])
            raise SimulationError(
                f"non-finite state at step {k} (t={t:.6g}), particle {bad}"
            )
        states[:, k + 1] = x_next
    return states


def simulate(
    model: ControlledModel,
    controls: ControlPair,
    n_particles: int,
    n_steps: int,
    seed: int,
    mu_mode: str = "exogenous",
    noise: NoiseBank | None = None,
) -> ParticleBundle:
    """Euler-Maruyama particle simulation of the controlled SDE.

    Passing a previously drawn ``noise`` bank re-uses that realization
    (common random numbers); otherwise noise is drawn from ``seed``.  The
    result is reproducible bit for bit from (model, controls, n_particles,
    n_steps, seed, mu_mode).
    """
    if mu_mode not in ("exogenous", "empirical"):
        raise ValueError(f"unknown mu_mode {mu_mode!r}")
    if noise is None:
        noise = draw_noise(seed, n_particles, n_steps, model.horizon, model.levy)
    else:
        if noise.n_particles != n_particles or noise.n_steps != n_steps:
            raise ValueError("supplied noise bank does not match (N, M)")
    times = np.linspace(0.0, model.horizon, n_steps + 1)
    states = _euler_sweep(model, controls, noise, times, model.x0, mu_mode)
    return ParticleBundle(times, states, noise, seed)


def simulate_segment(
    model: ControlledModel,
    controls: ControlPair,
    x_init: np.ndarray,
    times: np.ndarray,
    noise: NoiseBank,
    mu_mode: str = "exogenous",
) -> np.ndarray:
    """Integrate forward from given initial states on a sub-grid (inner MC)."""
    return _euler_sweep(model, controls, noise, times, x_init, mu_mode)


@dataclass(frozen=True)
class StepView:
    """Everything observable at one grid step of a finished bundle."""

    k: int
    t: float
    x: np.ndarray
    law: DiscreteMeasure
    mu_ctrl: DiscreteMeasure
    mu_coeff: DiscreteMeasure
    u: float | np.ndarray


def iter_steps(bundle: ParticleBundle, controls: ControlPair, mu_mode: str = "exogenous"):
    """Replay the per-step control and measure arguments of a simulation."""
    times, states = bundle.times, bundle.states
    scenario = np.arange(bundle.n_particles)
    law_cache: dict[int, DiscreteMeasure] = {}
    for k in range(bundle.n_steps):
        mu_ctrl, u, mu_coeff = _step_controls(
            k, times, states, controls, mu_mode, law_cache, scenario
        )
        yield StepView(
            k=k, t=float(times[k]), x=states[:, k], law=bundle.law_at(k),
            mu_ctrl=mu_ctrl, mu_coeff=mu_coeff, u=u,
        )


# ---------------------------------------------------------------------------
# performance functionals
# ---------------------------------------------------------------------------

def performance_samples(
    bundle: ParticleBundle,
    controls: ControlPair,
    perf: PerformanceSpec,
    mu_mode: str = "exogenous",
) -> np.ndarray:
    """Per-particle performance: left-endpoint time integral plus terminal cost."""
    n = bundle.n_particles
    dt = bundle.dt
    scenario = np.arange(n)
    total = np.zeros(n)
    for sv in iter_steps(bundle, controls, mu_mode):
        total += np.broadcast_to(
            perf.running(sv.t, sv.x, sv.law, sv.mu_ctrl, sv.u, scenario), (n,)
        ) * dt
    m_terminal = bundle.law_at(bundle.n_steps)
    total = total + np.broadcast_to(
        perf.terminal(bundle.states[:, -1], m_terminal, scenario), (n,)
    )
    if not np.isfinite(total).all():
        bad = int(np.flatnonzero(~np.isfinite(total))[0])
        raise SimulationError(f"performance evaluation is non-finite for particle {bad}")
    return total


def evaluate_performance(
    bundle: ParticleBundle,
    controls: ControlPair,
    perf: PerformanceSpec,
    mu_mode: str = "exogenous",
) -> tuple[float, float]:
    """Monte Carlo estimate of J and its standard error."""
    samples = performance_samples(bundle, controls, perf, mu_mode)
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(samples.mean()), se


# ---------------------------------------------------------------------------
# perturbation directions and the derivative process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Direction:
    """Step perturbation switched on at t0: a measure alpha_1 or a scalar alpha_2."""

    kind: str
    t0: float = 0.0
    measure: DiscreteMeasure | None = None
    scalar: float = 1.0
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("measure", "control"):
            raise ValueError(f"unknown direction kind {self.kind!r}")
        if self.kind == "measure" and self.measure is None:
            raise ValueError("measure direction needs its measure alpha_1")

    def eta_at(self, t: float) -> DiscreteMeasure | None:
        if self.kind != "measure" or t < self.t0:
            return None
        return self.measure

    def pi_at(self, t: float) -> float:
        if self.kind != "control" or t < self.t0:
            return 0.0
        return self.scalar


def perturbed_controls(controls: ControlPair, direction: Direction, lam: float) -> ControlPair:
    """Candidate controls shifted by lam along a step direction."""
    if direction.kind == "measure":

        def measure_ctrl(t, info, _base=controls.measure_ctrl):
            base = _base(t, info)
            eta = direction.eta_at(t)
            if eta is None or lam == 0.0:
                return base
            return base + eta.scaled(lam)

        return ControlPair(
            measure_ctrl=measure_ctrl,
            scalar_ctrl=controls.scalar_ctrl,
            mu_info=controls.mu_info,
            u_info=controls.u_info,
            u_bounds=controls.u_bounds,
        )

    def scalar_ctrl(t, info, _base=controls.scalar_ctrl):
        return _base(t, info) + lam * direction.pi_at(t)

    return ControlPair(
        measure_ctrl=controls.measure_ctrl,
        scalar_ctrl=scalar_ctrl,
        mu_info=controls.mu_info,
        u_info=controls.u_info,
        u_bounds=controls.u_bounds,
    )


# Analytic partials, when supplied, use the same argument order as the
# coefficient they differentiate; directional measure partials insert the
# direction eta right after mu.

def _partial_x(fn, analytic, step=FD_STATE_STEP):
    if analytic is not None:
        return analytic
    return lambda t, x, mu, u, scen: (
        fn(t, x + step, mu, u, scen) - fn(t, x - step, mu, u, scen)
    ) / (2 * step)


def _jump_partial_x(fn, analytic, step=FD_STATE_STEP):
    if analytic is not None:
        return analytic
    return lambda t, x, mu, u, zeta, scen: (
        fn(t, x + step, mu, u, zeta, scen) - fn(t, x - step, mu, u, zeta, scen)
    ) / (2 * step)


def _directional_mu(fn, analytic, step=FD_DIRECTION_STEP):
    if analytic is not None:
        return analytic
    return lambda t, x, mu, eta, u, scen: (
        fn(t, x, mu + eta.scaled(step), u, scen)
        - fn(t, x, mu + eta.scaled(-step), u, scen)
    ) / (2 * step)


def _jump_directional_mu(fn, analytic, step=FD_DIRECTION_STEP):
    if analytic is not None:
        return analytic
    return lambda t, x, mu, eta, u, zeta, scen: (
        fn(t, x, mu + eta.scaled(step), u, zeta, scen)
        - fn(t, x, mu + eta.scaled(-step), u, zeta, scen)
    ) / (2 * step)


def _partial_u(fn, analytic, step=FD_DIRECTION_STEP):
    if analytic is not None:
        return analytic
    return lambda t, x, mu, u, scen: (
        fn(t, x, mu, u + step, scen) - fn(t, x, mu, u - step, scen)
    ) / (2 * step)


def _jump_partial_u(fn, analytic, step=FD_DIRECTION_STEP):
    if analytic is not None:
        return analytic
    return lambda t, x, mu, u, zeta, scen: (
        fn(t, x, mu, u + step, zeta, scen) - fn(t, x, mu, u - step, zeta, scen)
    ) / (2 * step)


def simulate_derivative_process(
    bundle: ParticleBundle,
    model: ControlledModel,
    controls: ControlPair,
    direction: Direction,
    mu_mode: str = "exogenous",
) -> np.ndarray:
    """Euler integration of the linear derivative SDE along the baseline paths.

    Reuses the bundle's Brownian increments and jump events; Z(0) = 0.  The
    coefficient partials come from the model's declared partials or central
    finite differences.
    """
    p = model.partials or CoefficientPartials()
    bx = _partial_x(model.drift, p.drift_dx)
    sx = _partial_x(model.vol, p.vol_dx)
    bmu = _directional_mu(model.drift, p.drift_dmu)
    smu = _directional_mu(model.vol, p.vol_dmu)
    bu = _partial_u(model.drift, p.drift_du)
    su = _partial_u(model.vol, p.vol_du)
    if model.levy is not None:
        gx = _jump_partial_x(model.jump, p.jump_dx)
        gmu = _jump_directional_mu(model.jump, p.jump_dmu)
        gu = _jump_partial_u(model.jump, p.jump_du)

    n, m = bundle.n_particles, bundle.n_steps
    dt = bundle.dt
    scenario = np.arange(n)
    z = np.zeros((n, m + 1))
    noise = bundle.noise
    levy = model.levy
    for sv in iter_steps(bundle, controls, mu_mode):
        k, t, x, mu, u = sv.k, sv.t, sv.x, sv.mu_coeff, sv.u
        zk = z[:, k]
        eta = direction.eta_at(t)
        pi = direction.pi_at(t)
        if eta is not None:
            b_dir = bmu(t, x, mu, eta, u, scenario)
            s_dir = smu(t, x, mu, eta, u, scenario)
        elif pi != 0.0:
            b_dir = bu(t, x, mu, u, scenario) * pi
            s_dir = su(t, x, mu, u, scenario) * pi
        else:
            b_dir = s_dir = 0.0
        z_next = zk + (bx(t, x, mu, u, scenario) * zk + b_dir) * dt
        z_next = z_next + (sx(t, x, mu, u, scenario) * zk + s_dir) * noise.dB[:, k]
        if levy is not None:
            comp = np.zeros(n)
            for j in range(levy.n_atoms):
                zeta = levy.jump_sizes[j]
                term = gx(t, x, mu, u, zeta, scenario) * zk
                if eta is not None:
                    term = term + gmu(t, x, mu, eta, u, zeta, scenario)
                elif pi != 0.0:
                    term = term + gu(t, x, mu, u, zeta, scenario) * pi
                comp += levy.rates[j] * term
            z_next = z_next - dt * comp
            idx, zeta_idx = noise.events_at(k)
            if idx.size:
                u_p = _as_particle_values(u, idx)
                zeta = levy.jump_sizes[zeta_idx]
                term = gx(t, x[idx], mu, u_p, zeta, scenario[idx]) * zk[idx]
                if eta is not None:
                    term = term + gmu(t, x[idx], mu, eta, u_p, zeta, scenario[idx])
                elif pi != 0.0:
                    term = term + gu(t, x[idx], mu, u_p, zeta, scenario[idx]) * pi
                np.add.at(z_next, idx, term)
        if not np.isfinite(z_next).all():
            bad = int(np.flatnonzero(~np.isfinite(z_next))[0])
            raise SimulationError(
                f"non-finite derivative state at step {k} (t={t:.6g}), particle {bad}"
            )
        z[:, k + 1] = z_next
    return z
