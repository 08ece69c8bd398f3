"""Law process of an Ito-Levy state: empirical laws, generator, t-derivative.

The marginal law M(t) = L(X(t)) of a jump diffusion, viewed as a path in
measure space, is absolutely continuous in t with squared increments of order
h^2; its derivative M'(t) is represented here purely through the Fourier
table on quadrature nodes

    M'_hat(y) ~= (M_hat(t+h)(y) - M_hat(t-h)(y)) / (2h),

never as a recovered signed density (inversion is ill-posed and no downstream
use needs it).  On the test functions phi_y(x) = exp(ixy) the generator of

    dX = alpha dt + beta dB + integral gamma(t, zeta) Ntilde(dt, dzeta)

has the closed form

    A phi_y(x) = (i y alpha - 0.5 beta^2 y^2
                  + sum_j rate_j {exp(i gamma(t, zeta_j) y) - 1 - i y gamma(t, zeta_j)})
                 * exp(ixy)

for a finite-activity Levy measure nu = sum_j rate_j delta_{zeta_j}.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .measures import DiscreteMeasure, QuadratureRule, norm_sq


@dataclass(frozen=True)
class LevyMeasure:
    """Finite-activity Levy measure nu = sum_j rates[j] * delta_{jump_sizes[j]}."""

    jump_sizes: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.jump_sizes, dtype=float).reshape(-1)
        rates = np.asarray(self.rates, dtype=float).reshape(-1)
        if sizes.shape != rates.shape:
            raise ValueError("jump_sizes and rates must have equal length")
        if np.any(sizes == 0.0):
            raise ValueError("jump sizes must be nonzero (support in R \\ {0})")
        if np.any(rates <= 0.0):
            raise ValueError("jump rates must be positive")
        object.__setattr__(self, "jump_sizes", sizes)
        object.__setattr__(self, "rates", rates)

    @property
    def n_atoms(self) -> int:
        return self.jump_sizes.size

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())

    def compensator_sum(self, f: Callable[[float], float]) -> float:
        """sum_j rates[j] * f(zeta_j) -- the integral of f against nu."""
        return float(sum(r * f(z) for z, r in zip(self.jump_sizes, self.rates)))


@dataclass
class ItoLevyCoeffs:
    """Bounded predictable coefficients of an uncontrolled Ito-Levy process.

    ``alpha(t, scenario)`` and ``beta(t, scenario)`` return drift/volatility,
    ``gamma(t, zeta, scenario)`` the jump amplitude; ``bound`` declares the
    common bound the model assumes.
    """

    alpha: Callable
    beta: Callable
    gamma: Callable
    levy: LevyMeasure | None = None
    bound: float | None = None


class MeasurePath:
    """A measure-valued path: one DiscreteMeasure per grid time."""

    __slots__ = ("times", "values")

    def __init__(self, times, values: Sequence[DiscreteMeasure]):
        times = np.asarray(times, dtype=float).reshape(-1)
        values = list(values)
        if times.size != len(values):
            raise ValueError("times and values must have equal length")
        if times.size and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        self.times = times
        self.values = values

    def __len__(self) -> int:
        return self.times.size

    def step(self) -> float:
        """Grid spacing; requires a uniform grid."""
        dts = np.diff(self.times)
        if dts.size == 0:
            raise ValueError("path has a single time point")
        h = float(dts[0])
        if not np.allclose(dts, h, rtol=1e-9, atol=1e-12):
            raise ValueError("path grid is not uniform")
        return h

    def to_csv(self, path: str) -> None:
        """Serialize as rows (time, atom_location, atom_weight)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "atom_location", "atom_weight"])
            for t, m in zip(self.times, self.values):
                for x, w in zip(m.locations, m.weights):
                    writer.writerow([f"{t:.17g}", f"{x:.17g}", f"{w:.17g}"])

    @classmethod
    def from_csv(cls, path: str) -> "MeasurePath":
        times: list[float] = []
        atoms: list[tuple[list[float], list[float]]] = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["time", "atom_location", "atom_weight"]:
                raise ValueError(f"unexpected MeasurePath header: {header}")
            for row in reader:
                if not row or row[0].startswith("#"):
                    continue
                t, x, w = float(row[0]), float(row[1]), float(row[2])
                if not times or t != times[-1]:
                    times.append(t)
                    atoms.append(([], []))
                atoms[-1][0].append(x)
                atoms[-1][1].append(w)
        values = [DiscreteMeasure(xs, ws) for xs, ws in atoms]
        return cls(times, values)


@dataclass(frozen=True)
class FourierTable:
    """Fourier data of a (derivative of a) measure on quadrature nodes."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=complex)
        if nodes.shape != values.shape:
            raise ValueError("nodes and values must have matching shapes")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    def scaled(self, a: float) -> "FourierTable":
        return FourierTable(self.nodes, a * self.values)

    def __add__(self, other: "FourierTable") -> "FourierTable":
        if not np.array_equal(self.nodes, other.nodes):
            raise ValueError("tables live on different node sets")
        return FourierTable(self.nodes, self.values + other.values)

    def __sub__(self, other: "FourierTable") -> "FourierTable":
        if not np.array_equal(self.nodes, other.nodes):
            raise ValueError("tables live on different node sets")
        return FourierTable(self.nodes, self.values - other.values)


def table_norm_sq(table: FourierTable, rule: QuadratureRule, k: int = 0) -> float:
    """Squared order-k norm of Fourier data sampled on the rule's nodes."""
    if not np.array_equal(table.nodes, rule.nodes):
        raise ValueError("table nodes do not match the quadrature rule")
    yk = np.abs(rule.nodes) ** k if k else 1.0
    return float(rule.integrate(np.abs(table.values) ** 2 * yk))


def fourier_table(mu: DiscreteMeasure, rule: QuadratureRule) -> FourierTable:
    return FourierTable(rule.nodes, mu.fourier(rule.nodes))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def empirical_law(particles) -> DiscreteMeasure:
    """Empirical law of a sample vector: uniform-weight atoms, mass 1.

    Duplicate sample values are coalesced by exact equality, which never
    changes the Fourier transform.
    """
    x = np.asarray(particles, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("empirical law of an empty sample")
    loc, counts = np.unique(x, return_counts=True)
    return DiscreteMeasure(loc, counts / x.size)


def generator_on_test_fn(
    coeffs: ItoLevyCoeffs, t: float, x, y: float, scenario=None
) -> complex | np.ndarray:
    """Generator applied to phi_y(x) = exp(ixy) for finite-activity dynamics.

    Returns ``(iy a - b^2 y^2 / 2 + sum_j rate_j {e^{i g_j y} - 1 - i y g_j})
    * exp(ixy)`` where ``a = alpha(t)``, ``b = beta(t)`` and
    ``g_j = gamma(t, zeta_j)``.  Vectorized over ``x``.
    """
    a = coeffs.alpha(t, scenario)
    b = coeffs.beta(t, scenario)
    symbol = 1j * y * a - 0.5 * b * b * y * y
    if coeffs.levy is not None and coeffs.levy.n_atoms:
        for zeta, rate in zip(coeffs.levy.jump_sizes, coeffs.levy.rates):
            g = coeffs.gamma(t, zeta, scenario)
            symbol = symbol + rate * (np.exp(1j * g * y) - 1.0 - 1j * y * g)
    phi = np.exp(1j * np.asarray(x, dtype=float) * y)
    out = symbol * phi
    return out if np.ndim(x) else complex(out)


def law_derivative_fd(
    path: MeasurePath, index: int, rule: QuadratureRule, richardson: bool = False
) -> FourierTable:
    """Central-difference t-derivative of a law path, as a Fourier table.

    Returns y |-> (M_hat(t+h)(y) - M_hat(t-h)(y)) / (2h) on the rule's nodes;
    O(h^2)-consistent on smooth law paths.  With ``richardson=True``, combines
    the h and 2h stencils to cancel the h^2 term (needs two interior
    neighbours on each side).
    """
    m = len(path) - 1
    if not 1 <= index <= m - 1:
        raise ValueError(f"central difference needs an interior index, got {index}")
    h_left = path.times[index] - path.times[index - 1]
    h_right = path.times[index + 1] - path.times[index]
    if abs(h_left - h_right) > 1e-9 * max(h_left, h_right):
        raise ValueError("grid is not locally uniform around the index")
    h = 0.5 * (h_left + h_right)
    y = rule.nodes

    def central(step: int) -> np.ndarray:
        plus = path.values[index + step].fourier(y)
        minus = path.values[index - step].fourier(y)
        return (plus - minus) / (2.0 * step * h)

    d1 = central(1)
    if not richardson:
        return FourierTable(y, d1)
    if not 2 <= index <= m - 2:
        raise ValueError("Richardson extrapolation needs two interior neighbours")
    d2 = central(2)
    return FourierTable(y, (4.0 * d1 - d2) / 3.0)


def abs_continuity_scan(
    path: MeasurePath, rule: QuadratureRule, multiples: Sequence[int] = (1, 2, 4, 8, 16)
) -> list[tuple[float, float]]:
    """Worst-case squared law increment per lag: (h, max_t ||M_{t+h} - M_t||^2).

    Scans dyadic multiples of the grid step; downstream tests fit the log-log
    slope, which the h^2 bound puts at 2 for smooth paths.
    """
    if len(path) < 3:
        raise ValueError("scan needs a path with at least 3 grid points")
    dt = path.step()
    # Fourier tables per grid time, computed once; increments are table
    # differences under the rule.
    tables = np.stack([m.fourier(rule.nodes) for m in path.values])
    out: list[tuple[float, float]] = []
    for mult in multiples:
        if mult < 1 or mult >= len(path):
            continue
        diffs = tables[mult:] - tables[:-mult]
        sq = (np.abs(diffs) ** 2) @ rule.weights
        out.append((mult * dt, float(sq.max())))
    return out


def loglog_slope(scan: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of log(value) vs log(h); zero values are skipped."""
    pts = [(h, v) for h, v in scan if v > 0.0]
    if len(pts) < 2:
        raise ValueError("need at least two positive scan points for a slope")
    logh = np.log([p[0] for p in pts])
    logv = np.log([p[1] for p in pts])
    slope, _ = np.polyfit(logh, logv, 1)
    return float(slope)


def m4_norm_bound_check(path: MeasurePath, rule: QuadratureRule) -> np.ndarray:
    """Ratios ||M'(t)|| / ||M(t)||_{k=4} over interior grid points.

    The bound's constant is not quantified, so callers assert boundedness and
    stability under refinement rather than a specific value.
    """
    if len(path) < 3:
        raise ValueError("need at least 3 grid points")
    ratios = np.empty(len(path) - 2)
    for i in range(1, len(path) - 1):
        deriv = law_derivative_fd(path, i, rule)
        num = math.sqrt(table_norm_sq(deriv, rule, k=0))
        den = math.sqrt(norm_sq(path.values[i], 4, rule))
        if num == 0.0:
            ratios[i - 1] = 0.0
        elif den == 0.0:
            ratios[i - 1] = math.inf
        else:
            ratios[i - 1] = num / den
    return ratios
