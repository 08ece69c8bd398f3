"""Linear BSDEs with jumps, solved through the Gamma-process representation.

The backward equation

    dP = -[phi(t) + alpha(t) P + beta(t) Q + integral jump_phi(t, zeta) R nu(dzeta)] dt
         + Q dB + integral R Ntilde,          P(T) = theta,

has the closed-form first component

    P(t) = E[ theta Gamma(T)/Gamma(t)
              + integral_t^T Gamma(s)/Gamma(t) phi(s) ds | F_t ],

where dGamma = Gamma^- [alpha dt + beta dB + integral jump_phi dNtilde],
Gamma(0) = 1.  Q and R are never estimated on their own: every driver in
scope is absorbed by this linear reduction, and only P enters downstream
identities.

Estimators for the conditional expectation:

* ``closed-form``  -- deterministic coefficients and terminal value; the
  expectation collapses to products of (1 + alpha dt).
* ``pathwise``     -- the integrand evaluated path by path with no
  conditioning; exact whenever the integrand is measurable at time t (true
  for the consumption adjoint, where the Gamma ratio cancels the state).
* ``regression``   -- least-squares projection of the pathwise integrand on
  basis functions of the time-t state (ridge 1e-10).
* ``nested-mc``    -- branch n_inner fresh continuations from each scenario's
  time-t state; needs a re-simulatable Markov model.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lawproc import LevyMeasure
from .sde import (
    ControlPair,
    ControlledModel,
    ParticleBundle,
    PerformanceSpec,
    draw_noise,
    simulate_segment,
)

REGRESSION_RIDGE = 1e-10
_COND_LIMIT = 1e12
_FD_STEP = 1e-5


class GammaPositivityError(RuntimeError):
    """Euler step drove Gamma nonpositive; shrink the step size."""


class EstimationError(RuntimeError):
    """Conditional-expectation estimator failed (e.g. rank-deficient basis)."""


@dataclass(frozen=True)
class StepContext:
    """Per-step scenario data the BSDE coefficients may read."""

    step: int
    t: float
    x: np.ndarray | None = None
    brownian: np.ndarray | None = None
    scenario: np.ndarray | None = None


@dataclass
class LinearBsdeSpec:
    """Coefficients of the linear BSDE.

    ``phi(t, ctx)``, ``alpha(t, ctx)``, ``beta(t, ctx)`` return scalars or
    per-scenario arrays; ``jump_phi(t, zeta, ctx)`` must stay above -1 so the
    Gamma process remains positive; ``terminal(ctx)`` is theta.
    """

    phi: Callable
    alpha: Callable
    beta: Callable
    jump_phi: Callable
    terminal: Callable
    levy: LevyMeasure | None = None


@dataclass
class BsdeSolution:
    """P-component estimates on the grid.

    ``P`` has shape (M+1,) for the closed-form estimator and (N, M+1)
    otherwise.  ``diagnostics`` carries a per-time standard error where the
    estimator has one.
    """

    times: np.ndarray
    P: np.ndarray
    estimator: str
    diagnostics: np.ndarray | None = None

    def p_at(self, k: int) -> np.ndarray:
        return np.atleast_1d(self.P[..., k])

    def mean_profile(self) -> np.ndarray:
        return self.P if self.P.ndim == 1 else self.P.mean(axis=0)

    def to_csv(self, path: str, seed=None, version: str | None = None) -> None:
        """Rows (time, scenario, P, std_error); scenario is 0 when deterministic."""
        paths = self.P[None, :] if self.P.ndim == 1 else self.P
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "scenario", "P", "std_error"])
            for k, t in enumerate(self.times):
                se = 0.0 if self.diagnostics is None else float(self.diagnostics[k])
                for i in range(paths.shape[0]):
                    writer.writerow([f"{t:.17g}", i, f"{paths[i, k]:.17g}", f"{se:.17g}"])
            if seed is not None:
                fh.write(f"# seed={seed}, version={version or '1'}\n")


def _grid_times(source) -> np.ndarray:
    if isinstance(source, ParticleBundle):
        return source.times
    dt = source.dt
    return np.linspace(0.0, source.n_steps * dt, source.n_steps + 1)


def _context(source, k: int, times) -> StepContext:
    if isinstance(source, ParticleBundle):
        n = source.n_particles
        return StepContext(
            step=k,
            t=float(times[k]),
            x=source.states[:, k],
            brownian=source.brownian_levels()[:, k],
            scenario=np.arange(n),
        )
    return StepContext(step=k, t=float(times[k]))


def simulate_gamma(spec: LinearBsdeSpec, source) -> np.ndarray:
    """Euler paths of the Gamma process on a bundle's (or bank's) noise.

    Gamma(0) = 1 and dGamma = Gamma^-[alpha dt + beta dB + jump_phi dNtilde];
    the compensated-jump Euler factor is
    1 + alpha dt + beta dB + sum_{events} jump_phi - dt sum_j rate_j jump_phi.
    """
    noise = source.noise if isinstance(source, ParticleBundle) else source
    times = _grid_times(source)
    n, m = noise.n_particles, noise.n_steps
    dt = noise.dt
    levy = spec.levy
    gam = np.empty((n, m + 1))
    gam[:, 0] = 1.0
    for k in range(m):
        ctx = _context(source, k, times)
        t = float(times[k])
        factor = 1.0 + np.broadcast_to(
            np.asarray(spec.alpha(t, ctx), dtype=float), (n,)
        ) * dt + np.broadcast_to(np.asarray(spec.beta(t, ctx), dtype=float), (n,)) * noise.dB[:, k]
        if levy is not None and levy.n_atoms:
            jp = np.stack(
                [
                    np.broadcast_to(
                        np.asarray(spec.jump_phi(t, levy.jump_sizes[j], ctx), dtype=float),
                        (n,),
                    )
                    for j in range(levy.n_atoms)
                ]
            )
            if np.any(jp <= -1.0):
                raise GammaPositivityError(
                    f"jump_phi <= -1 at step {k}; Gamma cannot stay positive"
                )
            factor -= dt * (levy.rates[:, None] * jp).sum(axis=0)
            idx, zeta_idx = noise.events_at(k)
            if idx.size:
                np.add.at(factor, idx, jp[zeta_idx, idx])
        gam[:, k + 1] = gam[:, k] * factor
        if np.any(gam[:, k + 1] <= 0.0):
            bad = int(np.flatnonzero(gam[:, k + 1] <= 0.0)[0])
            raise GammaPositivityError(
                f"Gamma nonpositive at step {k + 1}, scenario {bad}; "
                "decrease the step size"
            )
    return gam


def _coefficient_tables(spec: LinearBsdeSpec, source, times) -> tuple[np.ndarray, np.ndarray]:
    """phi values per (scenario, step) and terminal theta per scenario."""
    noise = source.noise if isinstance(source, ParticleBundle) else source
    n, m = noise.n_particles, noise.n_steps
    phi = np.empty((n, m))
    for k in range(m):
        ctx = _context(source, k, times)
        phi[:, k] = np.broadcast_to(
            np.asarray(spec.phi(float(times[k]), ctx), dtype=float), (n,)
        )
    theta = np.broadcast_to(
        np.asarray(spec.terminal(_context(source, m, times)), dtype=float), (n,)
    ).astype(float)
    return phi, theta


def _pathwise_values(spec: LinearBsdeSpec, source) -> tuple[np.ndarray, np.ndarray]:
    """Y(t) = theta Gamma(T)/Gamma(t) + sum_{s>=t} Gamma(s)/Gamma(t) phi(s) dt."""
    times = _grid_times(source)
    noise = source.noise if isinstance(source, ParticleBundle) else source
    n, m = noise.n_particles, noise.n_steps
    dt = noise.dt
    gam = simulate_gamma(spec, source)
    phi, theta = _coefficient_tables(spec, source, times)
    values = np.empty((n, m + 1))
    values[:, m] = theta
    acc = theta * gam[:, m]
    for k in range(m - 1, -1, -1):
        acc = acc + gam[:, k] * phi[:, k] * dt
        values[:, k] = acc / gam[:, k]
    return values, theta


def _poly_basis(degree: int, include_inverse: bool = False):
    # polynomials in the standardized state span the same space as in the
    # raw state but keep the normal equations well conditioned
    def build(ctx: StepContext) -> np.ndarray:
        x = ctx.x
        spread = x.std()
        z = (x - x.mean()) / spread if spread > 0 else np.zeros_like(x)
        cols = [np.ones_like(x)] + [z**d for d in range(1, degree + 1)]
        if include_inverse:
            cols.append(1.0 / x)
        return np.column_stack(cols)

    return build


def resolve_basis(basis) -> Callable[[StepContext], np.ndarray]:
    """Accept "poly<k>", "poly<k>+inv", a callable, or a list of callables."""
    if basis is None:
        return _poly_basis(3)
    if callable(basis):
        return basis
    if isinstance(basis, str):
        inv = basis.endswith("+inv")
        name = basis[:-4] if inv else basis
        if not name.startswith("poly"):
            raise ValueError(f"unknown basis spec {basis!r}")
        return _poly_basis(int(name[4:]), include_inverse=inv)
    fns = list(basis)

    def build(ctx: StepContext) -> np.ndarray:
        return np.column_stack([np.broadcast_to(f(ctx), ctx.x.shape) for f in fns])

    return build


def solve(
    spec: LinearBsdeSpec,
    *,
    times: np.ndarray | None = None,
    bundle: ParticleBundle | None = None,
    estimator: str = "closed-form",
    basis=None,
    n_inner: int | None = None,
    model: ControlledModel | None = None,
    controls: ControlPair | None = None,
    seed: int | None = None,
    mu_mode: str = "exogenous",
) -> BsdeSolution:
    """Estimate the P-component of the linear BSDE on the grid.

    ``closed-form`` needs only ``times`` and deterministic data (coefficients
    are called with ctx=None and must return scalars).  The other estimators
    need a ``bundle``; ``nested-mc`` additionally needs ``n_inner``, the
    generating ``model``/``controls`` and a ``seed`` for inner noise.
    P(T) equals theta exactly for every estimator (no smoothing at T).
    """
    if estimator == "closed-form":
        if times is None:
            if bundle is None:
                raise ValueError("closed-form estimator needs a time grid")
            times = bundle.times
        m = len(times) - 1
        dt = float(times[1] - times[0])
        p = np.empty(m + 1)
        theta = spec.terminal(None)
        if np.ndim(theta) != 0:
            raise ValueError("closed-form estimator requires a deterministic terminal value")
        p[m] = float(theta)
        for k in range(m - 1, -1, -1):
            t = float(times[k])
            a = float(spec.alpha(t, None))
            p[k] = (1.0 + a * dt) * p[k + 1] + float(spec.phi(t, None)) * dt
        return BsdeSolution(times=np.asarray(times, dtype=float), P=p, estimator=estimator)

    if bundle is None:
        raise ValueError(f"estimator {estimator!r} needs a particle bundle")
    times = bundle.times
    n, m = bundle.n_particles, bundle.n_steps
    dt = bundle.dt

    if estimator == "pathwise":
        values, _ = _pathwise_values(spec, bundle)
        diags = values.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(m + 1)
        return BsdeSolution(times=times, P=values, estimator=estimator, diagnostics=diags)

    if estimator == "regression":
        raw, theta = _pathwise_values(spec, bundle)
        build = resolve_basis(basis)
        fitted = np.empty_like(raw)
        fitted[:, m] = theta
        diags = np.zeros(m + 1)
        for k in range(m):
            ctx = _context(bundle, k, times)
            if np.ptp(ctx.x) < 1e-14:
                # constant cross-section (e.g. t = 0): conditioning is trivial
                fitted[:, k] = raw[:, k].mean()
            else:
                design = build(ctx)
                gram = design.T @ design + REGRESSION_RIDGE * np.eye(design.shape[1])
                cond = np.linalg.cond(gram)
                if not np.isfinite(cond) or cond > _COND_LIMIT:
                    raise EstimationError(
                        f"regression basis is rank-deficient at step {k}: "
                        f"condition number {cond:.3e}"
                    )
                coef = np.linalg.solve(gram, design.T @ raw[:, k])
                fitted[:, k] = design @ coef
            resid = raw[:, k] - fitted[:, k]
            diags[k] = resid.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
        return BsdeSolution(times=times, P=fitted, estimator=estimator, diagnostics=diags)

    if estimator == "nested-mc":
        if n_inner is None or model is None or controls is None or seed is None:
            raise ValueError("nested-mc needs n_inner, model, controls and seed")
        _, theta_outer = _coefficient_tables(spec, bundle, times)
        p = np.empty((n, m + 1))
        p[:, m] = theta_outer
        diags = np.zeros(m + 1)
        outer_b = bundle.brownian_levels()
        scen_rep = np.repeat(np.arange(n), n_inner)
        for k in range(m):
            sub_times = times[k:]
            msub = m - k
            child = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
            inner_noise = draw_noise(child, n * n_inner, msub, msub * dt, model.levy)
            x_init = np.repeat(bundle.states[:, k], n_inner)
            inner_states = simulate_segment(
                model, controls, x_init, sub_times, inner_noise, mu_mode
            )
            inner = ParticleBundle(sub_times, inner_states, inner_noise, child)
            # shift inner Brownian levels so ctx.brownian is the absolute B(t)
            inner._brownian = inner.brownian_levels() + np.repeat(outer_b[:, k], n_inner)[:, None]
            y_inner, _ = _pathwise_inner(spec, inner, scen_rep)
            y0 = y_inner.reshape(n, n_inner)
            p[:, k] = y0.mean(axis=1)
            if n_inner > 1:
                diags[k] = float(np.mean(y0.std(axis=1, ddof=1) / math.sqrt(n_inner)))
        return BsdeSolution(times=times, P=p, estimator=estimator, diagnostics=diags)

    raise ValueError(f"unknown estimator {estimator!r}")


def _pathwise_inner(spec, inner_bundle, scenario_map):
    """Pathwise value at the segment start, with outer scenario labels."""
    times = inner_bundle.times
    noise = inner_bundle.noise
    n, m = noise.n_particles, noise.n_steps
    dt = noise.dt
    gam = simulate_gamma(spec, inner_bundle)

    def ctx_at(k):
        return StepContext(
            step=k,
            t=float(times[k]),
            x=inner_bundle.states[:, k],
            brownian=inner_bundle.brownian_levels()[:, k],
            scenario=scenario_map,
        )

    theta = np.broadcast_to(np.asarray(spec.terminal(ctx_at(m)), dtype=float), (n,))
    acc = theta * gam[:, m]
    for k in range(m - 1, -1, -1):
        phi = np.broadcast_to(np.asarray(spec.phi(float(times[k]), ctx_at(k)), dtype=float), (n,))
        acc = acc + gam[:, k] * phi * dt
    return acc / gam[:, 0], theta


def backward_euler_reference(spec: LinearBsdeSpec, times: np.ndarray) -> np.ndarray:
    """Implicit backward-Euler sweep for deterministic data.

    A genuinely different O(dt) scheme from the Gamma representation, used as
    a cross-check: P_k = (P_{k+1} + phi_k dt) / (1 - alpha_k dt).
    """
    m = len(times) - 1
    dt = float(times[1] - times[0])
    p = np.empty(m + 1)
    p[m] = float(spec.terminal(None))
    for k in range(m - 1, -1, -1):
        t = float(times[k])
        a = float(spec.alpha(t, None))
        if abs(a * dt) >= 1.0:
            raise ValueError("implicit step requires |alpha| dt < 1")
        p[k] = (p[k + 1] + float(spec.phi(t, None)) * dt) / (1.0 - a * dt)
    return p


# ---------------------------------------------------------------------------
# adjoint reduction
# ---------------------------------------------------------------------------

def adjoint_p0_solve(
    model: ControlledModel,
    perf: PerformanceSpec,
    bundle: ParticleBundle,
    controls: ControlPair,
    estimator: str = "pathwise",
    basis=None,
    mu_mode: str = "exogenous",
    n_inner: int | None = None,
    seed: int | None = None,
) -> BsdeSolution:
    """Solve the real-valued adjoint BSDE for one player's performance.

    The driver dH/dx = dl/dx + p0 db/dx + q0 dsigma/dx + integral r0 dgamma/dx
    maps exactly onto the linear BSDE with

        phi      = dl/dx            alpha    = db/dx
        beta     = dsigma/dx        jump_phi = dgamma/dx
        terminal = dg/dx(X(T), M(T)),

    all evaluated along the bundle's baseline paths; the solution then comes
    from `solve` with the requested estimator.
    """
    from .sde import iter_steps  # local import to keep module load order simple

    n, m = bundle.n_particles, bundle.n_steps
    scen = np.arange(n)
    levy = model.levy
    n_atoms = levy.n_atoms if levy is not None else 0

    phi_tab = np.empty((n, m))
    a_tab = np.empty((n, m))
    b_tab = np.empty((n, m))
    jp_tab = np.empty((n_atoms, n, m))

    def d_dx(fn, t, x, *rest):
        return (fn(t, x + _FD_STEP, *rest) - fn(t, x - _FD_STEP, *rest)) / (2 * _FD_STEP)

    for sv in iter_steps(bundle, controls, mu_mode):
        k, t, x = sv.k, sv.t, sv.x
        if perf.running_dx is not None:
            lx = perf.running_dx(t, x, sv.law, sv.mu_ctrl, sv.u, scen)
        else:
            lx = d_dx(perf.running, t, x, sv.law, sv.mu_ctrl, sv.u, scen)
        phi_tab[:, k] = np.broadcast_to(lx, (n,))
        partials = model.partials
        bx = partials.drift_dx if partials and partials.drift_dx else None
        a_tab[:, k] = np.broadcast_to(
            bx(t, x, sv.mu_coeff, sv.u, scen) if bx
            else d_dx(model.drift, t, x, sv.mu_coeff, sv.u, scen),
            (n,),
        )
        vx = partials.vol_dx if partials and partials.vol_dx else None
        b_tab[:, k] = np.broadcast_to(
            vx(t, x, sv.mu_coeff, sv.u, scen) if vx
            else d_dx(model.vol, t, x, sv.mu_coeff, sv.u, scen),
            (n,),
        )
        for j in range(n_atoms):
            zeta = levy.jump_sizes[j]
            gx = partials.jump_dx if partials and partials.jump_dx else None
            if gx:
                val = gx(t, x, sv.mu_coeff, sv.u, zeta, scen)
            else:
                val = (
                    model.jump(t, x + _FD_STEP, sv.mu_coeff, sv.u, zeta, scen)
                    - model.jump(t, x - _FD_STEP, sv.mu_coeff, sv.u, zeta, scen)
                ) / (2 * _FD_STEP)
            jp_tab[j, :, k] = np.broadcast_to(val, (n,))

    x_T = bundle.states[:, -1]
    m_T = bundle.law_at(m)
    if perf.terminal_dx is not None:
        theta = perf.terminal_dx(x_T, m_T, scen)
    else:
        theta = (
            perf.terminal(x_T + _FD_STEP, m_T, scen)
            - perf.terminal(x_T - _FD_STEP, m_T, scen)
        ) / (2 * _FD_STEP)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (n,)).astype(float)

    def zeta_index(zeta: float) -> int:
        hits = np.flatnonzero(levy.jump_sizes == zeta)
        if hits.size != 1:
            raise ValueError(f"jump size {zeta} is not a Levy atom of the model")
        return int(hits[0])

    spec = LinearBsdeSpec(
        phi=lambda t, ctx: phi_tab[:, ctx.step],
        alpha=lambda t, ctx: a_tab[:, ctx.step],
        beta=lambda t, ctx: b_tab[:, ctx.step],
        jump_phi=lambda t, zeta, ctx: jp_tab[zeta_index(zeta), :, ctx.step],
        terminal=lambda ctx: theta,
        levy=levy,
    )
    return solve(spec, bundle=bundle, estimator=estimator, basis=basis, n_inner=n_inner, seed=seed)
