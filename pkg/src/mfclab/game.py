"""Two-player verification machinery: Hamiltonians, residuals, sweeps.

Player 1 steers the measure-valued control mu(.), player 2 the real-valued
control u(.); each maximizes its own criterion J_i.  A zero-sum game stores
the single functional J once: player 2 maximizes J and player 1's criterion
is its exact negation (so mu minimizes J -- the saddle orientation).

The Hamiltonian of player i is

    H_i = l_i(t, x, m, mu, u) + p0_i b + q0_i sigma
          + integral r0_i(zeta) gamma(., zeta) nu(dzeta) + <p1_i, beta(m)>,

with beta(m) = m'.  q0 and r0 contributions enter only when the linear
reduction exposes them (they are absent for every model in scope whose sigma
and gamma do not depend on the controls); the <p1, m'> pairing is linear in
the Fourier table of m' and is represented through a supplied functional
(zero by default -- it cancels from every candidate-comparison delta).

Frechet derivatives in the measure argument are realized as directional
derivatives along declared measure functionals (e.g. the mass on a fixed
interval), which is how every coefficient in scope reads its measures.
Optimality certificates are grid searches over step perturbations with
common random numbers: they certify at the tested resolution, not globally.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bsde import BsdeSolution, adjoint_p0_solve
from .lawproc import FourierTable
from .measures import DiscreteMeasure, QuadratureRule
from .sde import (
    ControlPair,
    ControlledModel,
    Direction,
    ParticleBundle,
    PerformanceSpec,
    iter_steps,
    negate_performance,
    performance_samples,
    perturbed_controls,
    simulate,
)

_FD_STEP = 1e-5


class UnsupportedModelError(RuntimeError):
    """The Hamiltonian derivative needs q0/r0 terms that are not available."""


@dataclass(frozen=True)
class IntervalMass:
    """The linear functional m -> m((lo, hi]), with a probe atom inside it.

    ``unit_direction`` returns a unit point mass inside the interval, i.e. a
    measure direction that moves this functional by exactly one.
    """

    lo: float
    hi: float
    probe: float
    name: str = "mass"

    def __post_init__(self):
        if not (self.lo < self.probe <= self.hi):
            raise ValueError("probe atom must lie inside the interval")

    def value(self, measure: DiscreteMeasure) -> float:
        return measure.mass_on(self.lo, self.hi)

    def unit_direction(self) -> DiscreteMeasure:
        return DiscreteMeasure.dirac(self.probe)


class ZeroPairing:
    """The trivial <p1, beta(m)> functional (p1 = 0)."""

    def __call__(self, t: float, table: FourierTable | None) -> float:
        return 0.0


@dataclass(frozen=True)
class MeasurePairing:
    """<p1, .> represented by an M0 element: pairing through the rule's nodes."""

    representer: DiscreteMeasure
    rule: QuadratureRule

    def __call__(self, t: float, table: FourierTable | None) -> float:
        if table is None:
            return 0.0
        if not np.array_equal(table.nodes, self.rule.nodes):
            raise ValueError("fourier table nodes do not match the pairing rule")
        rep = self.representer.fourier(self.rule.nodes)
        return float(self.rule.integrate(np.real(np.conj(rep) * table.values)))


@dataclass
class GameSpec:
    """Model, per-player criteria and the measure functionals they read."""

    model: ControlledModel
    perf2: PerformanceSpec
    perf1: PerformanceSpec | None = None
    functionals: tuple = ()
    zero_sum: bool = False

    def __post_init__(self):
        if self.zero_sum:
            if self.perf1 is not None:
                raise ValueError("zero-sum games store a single performance spec")
            self._perf1 = negate_performance(self.perf2)
        else:
            if self.perf1 is None:
                raise ValueError("nonzero-sum games need both performance specs")
            self._perf1 = self.perf1

    @classmethod
    def zero_sum_game(cls, model, perf, functionals=()) -> "GameSpec":
        return cls(model=model, perf2=perf, functionals=tuple(functionals), zero_sum=True)

    @classmethod
    def nonzero_sum_game(cls, model, perf1, perf2, functionals=()) -> "GameSpec":
        return cls(model=model, perf2=perf2, perf1=perf1, functionals=tuple(functionals))

    def performance_for(self, player: int) -> PerformanceSpec:
        if player == 1:
            return self._perf1
        if player == 2:
            return self.perf2
        raise ValueError(f"player must be 1 or 2, got {player}")


@dataclass
class AdjointState:
    """Adjoint data needed to evaluate Hamiltonians along a bundle.

    ``p0`` maps player -> BsdeSolution; ``q0``/``r0`` stay None unless the
    linear reduction exposes them, in which case they map player -> arrays of
    shape (N, M) and (n_atoms, N, M).  ``includes_qr`` records the
    restriction for run reports.
    """

    p0: dict[int, BsdeSolution]
    p1_pairing: Callable = field(default_factory=ZeroPairing)
    q0: dict[int, np.ndarray] | None = None
    r0: dict[int, np.ndarray] | None = None

    @property
    def includes_qr(self) -> bool:
        return self.q0 is not None or self.r0 is not None

    def step_of(self, player: int, t: float) -> int:
        times = self.p0[player].times
        k = int(round((t - times[0]) / (times[1] - times[0])))
        if not (0 <= k < len(times)) or abs(times[k] - t) > 1e-9:
            raise ValueError(f"no adjoint value at t={t}")
        return k


def solve_adjoints(
    spec: GameSpec,
    bundle: ParticleBundle,
    candidate: ControlPair,
    estimator: str = "pathwise",
    basis=None,
    p1_pairing: Callable | None = None,
    mu_mode: str = "exogenous",
) -> AdjointState:
    """Solve both players' real-valued adjoint BSDEs along the bundle."""
    p0 = {
        player: adjoint_p0_solve(
            spec.model,
            spec.performance_for(player),
            bundle,
            candidate,
            estimator=estimator,
            basis=basis,
            mu_mode=mu_mode,
        )
        for player in (1, 2)
    }
    return AdjointState(p0=p0, p1_pairing=p1_pairing or ZeroPairing())


def hamiltonian(
    spec: GameSpec,
    player: int,
    t: float,
    x,
    m: DiscreteMeasure,
    mu: DiscreteMeasure,
    u,
    adjoint: AdjointState,
    m_prime: FourierTable | None = None,
):
    """Evaluate H_player at one grid time along the adjoint's scenarios.

    ``x`` (and ``u``) may be scalars or per-scenario arrays; the result
    broadcasts against the stored p0 scenarios.  Raises if ``t`` is not a
    grid point of the adjoint solution.
    """
    k = adjoint.step_of(player, t)
    p0 = adjoint.p0[player].p_at(k)
    perf = spec.performance_for(player)
    x_arr = np.asarray(x, dtype=float)
    scen = np.arange(x_arr.size) if x_arr.ndim else None
    model = spec.model
    value = perf.running(t, x, m, mu, u, scen) + p0 * model.drift(t, x, mu, u, scen)
    if adjoint.q0 is not None:
        value = value + adjoint.q0[player][:, k] * model.vol(t, x, mu, u, scen)
    if model.levy is not None and adjoint.r0 is not None:
        for j in range(model.levy.n_atoms):
            value = value + model.levy.rates[j] * adjoint.r0[player][j, :, k] * model.jump(
                t, x, mu, u, model.levy.jump_sizes[j], scen
            )
    value = value + adjoint.p1_pairing(t, m_prime)
    if np.ndim(value) == 0:
        return float(value)
    return value


def _check_coefficient_independence(spec: GameSpec, sv, player: int, scen) -> None:
    """sigma and gamma must not see the perturbed argument unless q0/r0 exist."""
    model = spec.model
    if player == 2:
        du = (
            model.vol(sv.t, sv.x, sv.mu_ctrl, sv.u + _FD_STEP, scen)
            - model.vol(sv.t, sv.x, sv.mu_ctrl, sv.u - _FD_STEP, scen)
        ) / (2 * _FD_STEP)
        if np.max(np.abs(du)) > 1e-10:
            raise UnsupportedModelError(
                "sigma depends on u but no q0 estimate is available"
            )
        if model.levy is not None:
            for zeta in model.levy.jump_sizes:
                du = (
                    model.jump(sv.t, sv.x, sv.mu_ctrl, sv.u + _FD_STEP, zeta, scen)
                    - model.jump(sv.t, sv.x, sv.mu_ctrl, sv.u - _FD_STEP, zeta, scen)
                ) / (2 * _FD_STEP)
                if np.max(np.abs(du)) > 1e-10:
                    raise UnsupportedModelError(
                        "gamma depends on u but no r0 estimate is available"
                    )
    else:
        for fn in spec.functionals:
            eta = fn.unit_direction()
            dmu = (
                model.vol(sv.t, sv.x, sv.mu_ctrl + eta.scaled(_FD_STEP), sv.u, scen)
                - model.vol(sv.t, sv.x, sv.mu_ctrl + eta.scaled(-_FD_STEP), sv.u, scen)
            ) / (2 * _FD_STEP)
            if np.max(np.abs(dmu)) > 1e-10:
                raise UnsupportedModelError(
                    "sigma depends on mu but no q0 estimate is available"
                )
            if model.levy is not None:
                for zeta in model.levy.jump_sizes:
                    dmu = (
                        model.jump(sv.t, sv.x, sv.mu_ctrl + eta.scaled(_FD_STEP), sv.u, zeta, scen)
                        - model.jump(sv.t, sv.x, sv.mu_ctrl + eta.scaled(-_FD_STEP), sv.u, zeta, scen)
                    ) / (2 * _FD_STEP)
                    if np.max(np.abs(dmu)) > 1e-10:
                        raise UnsupportedModelError(
                            "gamma depends on mu but no r0 estimate is available"
                        )


def _dh_du_samples(spec: GameSpec, sv, p0_vals, scen) -> np.ndarray:
    """Per-scenario dH_2/du at one step (q0/r0 terms checked absent)."""
    perf = spec.performance_for(2)
    model = spec.model
    if perf.running_du is not None:
        dl = perf.running_du(sv.t, sv.x, sv.law, sv.mu_ctrl, sv.u, scen)
    else:
        dl = (
            perf.running(sv.t, sv.x, sv.law, sv.mu_ctrl, sv.u + _FD_STEP, scen)
            - perf.running(sv.t, sv.x, sv.law, sv.mu_ctrl, sv.u - _FD_STEP, scen)
        ) / (2 * _FD_STEP)
    db = (
        model.drift(sv.t, sv.x, sv.mu_ctrl, sv.u + _FD_STEP, scen)
        - model.drift(sv.t, sv.x, sv.mu_ctrl, sv.u - _FD_STEP, scen)
    ) / (2 * _FD_STEP)
    return np.broadcast_to(dl + p0_vals * db, (sv.x.size,))


def _dh_dmu_samples(spec: GameSpec, sv, p0_vals, eta: DiscreteMeasure, player: int, scen) -> np.ndarray:
    """Per-scenario directional dH_player/dmu along eta at one step."""
    perf = spec.performance_for(player)
    model = spec.model
    mu_p = sv.mu_ctrl + eta.scaled(_FD_STEP)
    mu_m = sv.mu_ctrl + eta.scaled(-_FD_STEP)
    dl = (
        perf.running(sv.t, sv.x, sv.law, mu_p, sv.u, scen)
        - perf.running(sv.t, sv.x, sv.law, mu_m, sv.u, scen)
    ) / (2 * _FD_STEP)
    db = (
        model.drift(sv.t, sv.x, mu_p, sv.u, scen)
        - model.drift(sv.t, sv.x, mu_m, sv.u, scen)
    ) / (2 * _FD_STEP)
    return np.broadcast_to(dl + p0_vals * db, (sv.x.size,))


@dataclass
class ResidualCurves:
    """First-order residual estimates E[dH/d(control) | info] per grid time.

    Reported as cross-scenario means with standard errors (the projection on
    any information pattern preserves the mean, which is what the 3-sigma
    tests consume).  ``u_at_boundary`` flags times where the candidate sits
    on the boundary of U and the residual need not vanish.
    """

    times: np.ndarray
    res_u: np.ndarray
    se_u: np.ndarray
    res_mu: dict[str, np.ndarray]
    se_mu: dict[str, np.ndarray]
    u_at_boundary: np.ndarray

    def u_within(self, n_se: float = 3.0, floor: float = 1e-8) -> bool:
        ok = np.abs(self.res_u) <= n_se * self.se_u + floor
        return bool(np.all(ok | self.u_at_boundary))

    def mu_within(self, n_se: float = 3.0, floor: float = 1e-8) -> bool:
        return all(
            bool(np.all(np.abs(r) <= n_se * self.se_mu[name] + floor))
            for name, r in self.res_mu.items()
        )

    def to_csv(self, path: str, seed=None, version: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "direction", "residual", "std_err"])
            for k, t in enumerate(self.times):
                writer.writerow([f"{t:.17g}", "u", f"{self.res_u[k]:.17g}", f"{self.se_u[k]:.17g}"])
                for name in self.res_mu:
                    writer.writerow(
                        [f"{t:.17g}", f"mu:{name}", f"{self.res_mu[name][k]:.17g}",
                         f"{self.se_mu[name][k]:.17g}"]
                    )
            if seed is not None:
                fh.write(f"# seed={seed}, version={version or '1'}\n")


def first_order_residuals(
    spec: GameSpec,
    candidate: ControlPair,
    bundle: ParticleBundle,
    adjoint: AdjointState,
    mu_mode: str = "exogenous",
) -> ResidualCurves:
    """Residuals of the necessary maximum principle along the candidate.

    res_u(t) estimates E[dH_2/du(t)] and res_mu(t) the directional
    E[dH_1/dmu(t)] per declared measure functional; at an interior optimum
    both curves are statistically zero.
    """
    n, m = bundle.n_particles, bundle.n_steps
    scen = np.arange(n)
    res_u = np.empty(m)
    se_u = np.empty(m)
    boundary = np.zeros(m, dtype=bool)
    res_mu = {f.name: np.empty(m) for f in spec.functionals}
    se_mu = {f.name: np.empty(m) for f in spec.functionals}
    sqrt_n = math.sqrt(n)
    checked = False
    for sv in iter_steps(bundle, candidate, mu_mode):
        if not checked:
            _check_coefficient_independence(spec, sv, 2, scen)
            _check_coefficient_independence(spec, sv, 1, scen)
            checked = True
        p2 = adjoint.p0[2].p_at(sv.k)
        du = _dh_du_samples(spec, sv, p2, scen)
        res_u[sv.k] = du.mean()
        se_u[sv.k] = du.std(ddof=1) / sqrt_n if n > 1 else 0.0
        if candidate.u_bounds is not None:
            lo, hi = candidate.u_bounds
            u_min, u_max = float(np.min(sv.u)), float(np.max(sv.u))
            boundary[sv.k] = u_min <= lo + 1e-12 or u_max >= hi - 1e-12
        p1 = adjoint.p0[1].p_at(sv.k)
        for f in spec.functionals:
            dmu = _dh_dmu_samples(spec, sv, p1, f.unit_direction(), 1, scen)
            res_mu[f.name][sv.k] = dmu.mean()
            se_mu[f.name][sv.k] = dmu.std(ddof=1) / sqrt_n if n > 1 else 0.0
    return ResidualCurves(
        times=bundle.times[:-1],
        res_u=res_u,
        se_u=se_u,
        res_mu=res_mu,
        se_mu=se_mu,
        u_at_boundary=boundary,
    )


# ---------------------------------------------------------------------------
# perturbation sweeps
# ---------------------------------------------------------------------------

@dataclass
class PerturbationPlan:
    """Directions and magnitudes for a Nash/saddle grid search."""

    directions: Sequence[Direction]
    lambdas: Sequence[float] = (0.2, 0.1, 0.05, -0.05, -0.1, -0.2)


@dataclass(frozen=True)
class SweepRow:
    direction_id: int
    label: str
    player: int
    lam: float
    delta: float
    std_err: float

    @property
    def improves(self) -> bool:
        """Did the deviating player gain beyond noise?"""
        return self.delta > 2.0 * self.std_err


@dataclass
class SweepTable:
    """Per-direction performance deltas of unilateral deviations (CRN)."""

    rows: list[SweepRow]
    n_particles: int
    seed: int

    @property
    def certified(self) -> bool:
        """Nash verdict at the tested resolution: no deviation improves."""
        return not any(r.improves for r in self.rows)

    def rows_for(self, direction_id: int) -> list[SweepRow]:
        return [r for r in self.rows if r.direction_id == direction_id]

    def to_csv(self, path: str, seed=None, version: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["direction_id", "lambda", "delta_J", "std_err"])
            for r in self.rows:
                writer.writerow(
                    [r.direction_id, f"{r.lam:.17g}", f"{r.delta:.17g}", f"{r.std_err:.17g}"]
                )
            if seed is not None:
                fh.write(f"# seed={seed}, version={version or '1'}\n")


def nash_perturbation_sweep(
    spec: GameSpec,
    candidate: ControlPair,
    plan: PerturbationPlan,
    n_particles: int,
    n_steps: int,
    seed: int,
    bundle: ParticleBundle | None = None,
    mu_mode: str = "exogenous",
) -> SweepTable:
    """Grid search over unilateral deviations with common random numbers.

    Every J evaluation reuses one noise bundle, so the lambda = 0 row is
    exactly zero and the per-row standard error reflects only the control
    difference.  The deltas are in the deviating player's own criterion; a
    positive delta beyond 2 standard errors refutes the candidate.
    """
    if bundle is None:
        bundle = simulate(spec.model, candidate, n_particles, n_steps, seed, mu_mode)
    base: dict[int, np.ndarray] = {}
    rows: list[SweepRow] = []
    sqrt_n = math.sqrt(bundle.n_particles)
    for d_id, direction in enumerate(plan.directions):
        player = 1 if direction.kind == "measure" else 2
        perf = spec.performance_for(player)
        if player not in base:
            base[player] = performance_samples(bundle, candidate, perf, mu_mode)
        for lam in plan.lambdas:
            pert = perturbed_controls(candidate, direction, lam)
            pert_bundle = simulate(
                spec.model, pert, n_particles, n_steps, seed, mu_mode, noise=bundle.noise
            )
            samples = performance_samples(pert_bundle, pert, perf, mu_mode)
            diff = samples - base[player]
            se = float(diff.std(ddof=1) / sqrt_n) if diff.size > 1 else 0.0
            rows.append(
                SweepRow(
                    direction_id=d_id,
                    label=direction.label or direction.kind,
                    player=player,
                    lam=float(lam),
                    delta=float(diff.mean()),
                    std_err=se,
                )
            )
    return SweepTable(rows=rows, n_particles=n_particles, seed=seed)


# ---------------------------------------------------------------------------
# Gateaux check
# ---------------------------------------------------------------------------

@dataclass
class GateauxResult:
    lambdas: np.ndarray
    fd_slopes: np.ndarray
    fd_se: np.ndarray
    adjoint_slope: float
    adjoint_se: float
    agree: bool


def gateaux_check(
    spec: GameSpec,
    candidate: ControlPair,
    direction: Direction,
    lambdas: Sequence[float],
    bundle: ParticleBundle,
    adjoint: AdjointState | None = None,
    mu_mode: str = "exogenous",
) -> GateauxResult:
    """Compare finite-difference dJ/dlambda against the adjoint expression.

    The finite-difference slopes are central differences under common random
    numbers; the adjoint slope is E[integral dH/dmu . eta dt] (or
    dH/du . pi).  Agreement at the smallest lambda within
    max(3 SE, 5% of the slope) is the verdict.
    """
    player = 1 if direction.kind == "measure" else 2
    perf = spec.performance_for(player)
    n, m = bundle.n_particles, bundle.n_steps
    sqrt_n = math.sqrt(n)
    lambdas = np.asarray(sorted(lambdas, key=abs, reverse=True), dtype=float)
    if np.any(lambdas == 0.0):
        raise ValueError("finite-difference magnitudes must be nonzero")

    fd_slopes = np.empty(lambdas.size)
    fd_se = np.empty(lambdas.size)
    for i, lam in enumerate(lambdas):
        plus = perturbed_controls(candidate, direction, float(lam))
        minus = perturbed_controls(candidate, direction, -float(lam))
        s_plus = performance_samples(
            simulate(spec.model, plus, n, m, bundle.seed, mu_mode, noise=bundle.noise),
            plus, perf, mu_mode,
        )
        s_minus = performance_samples(
            simulate(spec.model, minus, n, m, bundle.seed, mu_mode, noise=bundle.noise),
            minus, perf, mu_mode,
        )
        slope_samples = (s_plus - s_minus) / (2.0 * lam)
        fd_slopes[i] = slope_samples.mean()
        fd_se[i] = slope_samples.std(ddof=1) / sqrt_n if n > 1 else 0.0

    if adjoint is None:
        adjoint = solve_adjoints(spec, bundle, candidate, mu_mode=mu_mode)
    scen = np.arange(n)
    dt = bundle.dt
    slope_acc = np.zeros(n)
    checked = False
    for sv in iter_steps(bundle, candidate, mu_mode):
        if not checked:
            _check_coefficient_independence(spec, sv, player, scen)
            checked = True
        p0 = adjoint.p0[player].p_at(sv.k)
        if direction.kind == "measure":
            eta = direction.eta_at(sv.t)
            if eta is None:
                continue
            slope_acc += _dh_dmu_samples(spec, sv, p0, eta, player, scen) * dt
        else:
            pi = direction.pi_at(sv.t)
            if pi == 0.0:
                continue
            slope_acc += _dh_du_samples(spec, sv, p0, scen) * pi * dt
    adjoint_slope = float(slope_acc.mean())
    adjoint_se = float(slope_acc.std(ddof=1) / sqrt_n) if n > 1 else 0.0

    smallest = int(np.argmin(np.abs(lambdas)))
    diff = abs(fd_slopes[smallest] - adjoint_slope)
    combined_se = math.hypot(fd_se[smallest], adjoint_se)
    tol = max(3.0 * combined_se, 0.05 * abs(adjoint_slope), 1e-12)
    return GateauxResult(
        lambdas=lambdas,
        fd_slopes=fd_slopes,
        fd_se=fd_se,
        adjoint_slope=adjoint_slope,
        adjoint_se=adjoint_se,
        agree=bool(diff <= tol),
    )
