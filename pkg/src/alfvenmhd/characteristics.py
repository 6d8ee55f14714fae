"""Characteristic geometry: optical labels, wrapped labels, weights, flow maps.

The labels x_i^(+/-) are carried by L_(+/-) = d_t + Z_(+/-) . grad with
x_i^(+/-)(0, x) = x_i.  They are stored as periodic residuals ``phi``:

    x_i^(+/-)(t, x) = x_i -/+ delta_i3 * t + phi_i^(+/-)(t, x),

and the residuals obey d_t phi_i + Z . grad phi_i = -z^i.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import spectral as sp
from ._kernels import tricubic_periodic
from .errors import NotMonotone, RegionEmpty
from .solver import B0_SIGN, SPECIES, ElsasserState
from .spectral import Grid

DEFAULT_R = 100.0


def other_species(species: str) -> str:
    return "minus" if species == "plus" else "plus"


class PeriodicInterpolator:
    """Periodic tricubic (4-point Lagrange per axis) interpolation."""

    def __init__(self, grid: Grid, values: np.ndarray):
        self.grid = grid
        values = np.ascontiguousarray(values, dtype=float)
        self.vector = values.ndim == 4
        self._values = values if self.vector else values[None]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at ``points`` of shape (3, ...)."""
        points = np.asarray(points)
        idx = (points.reshape(3, -1) + self.grid.L) / self.grid.dx
        out = tricubic_periodic(self._values, np.ascontiguousarray(idx))
        out = out.reshape((self._values.shape[0],) + points.shape[1:])
        return out if self.vector else out[0]


def drift(species: str, t: float) -> float:
    """Closed-form secular part of x_3^(+/-): -t for plus, +t for minus."""
    return -B0_SIGN[species] * t


def wrap_into_box(x3: np.ndarray, L: float) -> np.ndarray:
    """Reduce modulo 2L into (-L, L]."""
    return L - np.mod(L - x3, 2.0 * L)


@dataclass(frozen=True)
class LabelFields:
    grid: Grid
    t: float
    phi_plus: np.ndarray
    phi_minus: np.ndarray
    R: float = DEFAULT_R
    u_plus: np.ndarray | None = None
    u_minus: np.ndarray | None = None
    w_plus: np.ndarray | None = None
    w_minus: np.ndarray | None = None
    wbar_plus: np.ndarray | None = None
    wbar_minus: np.ndarray | None = None

    @classmethod
    def initial(cls, grid: Grid, R: float = DEFAULT_R, t: float = 0.0) -> "LabelFields":
        return compute_weights(cls(grid, t, grid.zeros(3), grid.zeros(3), R), R)

    def phi(self, species: str) -> np.ndarray:
        return self.phi_plus if species == "plus" else self.phi_minus

    def optical(self, species: str) -> np.ndarray:
        """x^(+/-) as an array (3, n, n, n)."""
        x = self.grid.coords + self.phi(species)
        x[2] += drift(species, self.t)
        return x

    def u(self, species: str) -> np.ndarray:
        return self.u_plus if species == "plus" else self.u_minus

    def w(self, species: str) -> np.ndarray:
        return self.w_plus if species == "plus" else self.w_minus

    def wbar(self, species: str) -> np.ndarray:
        return self.wbar_plus if species == "plus" else self.wbar_minus


def wrap_u(labels: LabelFields) -> tuple[np.ndarray, np.ndarray]:
    """Wrapped labels u_(+/-) in (-L, L].

    Uses x_3(t, x + 2L e3) = x_3(t, x) + 2L, so shifting the argument by one
    period is the same as shifting the value.
    """
    L = labels.grid.L
    return tuple(wrap_into_box(labels.optical(s)[2], L) for s in SPECIES)


def compute_weights(labels: LabelFields, R: float | None = None) -> LabelFields:
    """Fill in u, <w> and <wbar> for both species."""
    R = labels.R if R is None else R
    u_p, u_m = wrap_u(labels)
    out = {}
    for s, u in zip(SPECIES, (u_p, u_m)):
        x = labels.optical(s)
        transverse = R * R + x[0] ** 2 + x[1] ** 2
        out[f"u_{s}"] = u
        out[f"w_{s}"] = np.sqrt(transverse + u * u)
        out[f"wbar_{s}"] = np.sqrt(transverse + x[2] ** 2)
    return replace(labels, R=R, **out)


def _advect_one(grid: Grid, phi: np.ndarray, z_mid: PeriodicInterpolator,
                sign_b: float, dt: float, iterations: int = 2) -> np.ndarray:
    x = grid.coords
    e3 = np.array([0.0, 0.0, sign_b])[:, None, None, None]
    disp = dt * e3 * np.ones_like(x)
    for _ in range(iterations):
        z_here = z_mid(x - 0.5 * disp)
        disp = dt * (z_here + e3)
    z_here = z_mid(x - 0.5 * disp)
    departure = x - disp
    phi_dep = PeriodicInterpolator(grid, phi)(departure)
    return phi_dep - dt * z_here


def advect_labels(labels: LabelFields, state: ElsasserState, dt: float,
                  state_next: ElsasserState | None = None) -> LabelFields:
    """Semi-Lagrangian update of the label residuals over one step.

    The backward characteristic uses the midpoint rule with the velocity at
    t + dt/2, taken as the average of ``state`` and ``state_next`` when the
    latter is given (second order in time), else frozen at ``state``.
    """
    grid = labels.grid
    new = {}
    for s in SPECIES:
        z = state.field(s)
        if state_next is not None:
            z = 0.5 * (z + state_next.field(s))
        if not np.any(z):
            new[s] = labels.phi(s).copy()
            continue
        interp = PeriodicInterpolator(grid, z)
        new[s] = _advect_one(grid, labels.phi(s), interp, B0_SIGN[s], dt)
    out = LabelFields(grid, labels.t + dt, new["plus"], new["minus"], labels.R)
    return compute_weights(out)


def label_sandwich_violations(labels: LabelFields) -> int:
    """Grid points where x3 + t/4 <= x_3^- <= x3 + 7t/4 fails."""
    t = labels.t
    x3 = labels.grid.coords[2]
    xm = labels.optical("minus")[2]
    tol = 1e-12 * max(1.0, labels.grid.L)
    bad = (xm < x3 + 0.25 * t - tol) | (xm > x3 + 1.75 * t + tol)
    return int(np.count_nonzero(bad))


def label_region_report(labels: LabelFields) -> dict:
    """Counts of points that break the wrapped-label region facts.

    ``outer``: points with |x3| >= L/3 but |u| <= L/4.
    ``inner``: points with |x3| <= 5L/6 where u differs from x_3 (a
    wrap branch was taken).
    """
    grid = labels.grid
    L = grid.L
    x3 = grid.coords[2]
    report = {}
    for s in SPECIES:
        u = labels.u(s)
        xs = labels.optical(s)[2]
        outer = (np.abs(x3) >= L / 3) & (np.abs(u) <= L / 4)
        inner = (np.abs(x3) <= 5 * L / 6) & (np.abs(u - xs) > 1e-9 * L)
        report[s] = {"outer": int(np.count_nonzero(outer)), "inner": int(np.count_nonzero(inner))}
    return report


@dataclass(frozen=True)
class SeparationMetrics:
    min_abs_diff: float
    max_abs_diff: float
    min_weight_product: float


def separation_metrics(labels: LabelFields, region_fraction: float = 1.0 / 3.0) -> SeparationMetrics:
    """Extremes of |u- - u+| and <w+><w-> over the slab |x3| <= L/3."""
    grid = labels.grid
    region = np.abs(grid.coords[2]) <= region_fraction * grid.L * (1 + 1e-12)
    if not np.any(region):
        raise RegionEmpty(f"no grid points with |x3| <= {region_fraction:g} L")
    diff = np.abs(labels.u_minus - labels.u_plus)[region]
    prod = (labels.w_plus * labels.w_minus)[region]
    return SeparationMetrics(float(diff.min()), float(diff.max()), float(prod.min()))


def separation_lower_bound(R: float, t: float) -> float:
    return 0.5 * R * np.sqrt(R * R + t * t)


@dataclass(frozen=True)
class FlowMapState:
    grid: Grid
    t: float
    y: np.ndarray
    psi_plus: np.ndarray
    psi_minus: np.ndarray
    jacobian_deviation: float = 0.0
    det_min: float = 1.0
    det_max: float = 1.0

    @classmethod
    def initial(cls, grid: Grid, m: int | None = None) -> "FlowMapState":
        m = grid.n // 2 if m is None else m
        h = 2.0 * grid.L / m
        y1 = -grid.L + h * np.arange(m)
        y = np.array(np.meshgrid(y1, y1, y1, indexing="ij"))
        return cls(grid, 0.0, y, y.copy(), y.copy())

    @property
    def spacing(self) -> float:
        return 2.0 * self.grid.L / self.y.shape[1]

    def psi(self, species: str) -> np.ndarray:
        return self.psi_plus if species == "plus" else self.psi_minus


def flowmap_jacobian(fm: FlowMapState, species: str) -> np.ndarray:
    """d psi / d y on the seed lattice, shape (3, 3, m, m, m), by fourth-order
    centered differences of the periodic displacement psi - y."""
    d = fm.psi(species) - fm.y
    h = fm.spacing
    jac = np.empty((3, 3) + d.shape[1:])
    for b in range(3):
        ax = b + 1
        deriv = (8.0 * (np.roll(d, -1, axis=ax) - np.roll(d, 1, axis=ax))
                 - (np.roll(d, -2, axis=ax) - np.roll(d, 2, axis=ax))) / (12.0 * h)
        jac[:, b] = deriv
    jac[0, 0] += 1.0
    jac[1, 1] += 1.0
    jac[2, 2] += 1.0
    return jac


def _jacobian_stats(fm: FlowMapState) -> tuple[float, float, float]:
    dev, dmin, dmax = 0.0, np.inf, -np.inf
    for s in SPECIES:
        jac = flowmap_jacobian(fm, s)
        eye = np.eye(3)[:, :, None, None, None]
        dev = max(dev, float(np.max(np.sqrt(np.sum((jac - eye) ** 2, axis=(0, 1))))))
        det = np.linalg.det(np.moveaxis(jac, (0, 1), (-2, -1)))
        dmin = min(dmin, float(det.min()))
        dmax = max(dmax, float(det.max()))
    return dev, dmin, dmax


def advance_flowmap(fm: FlowMapState, state: ElsasserState, dt: float,
                    state_next: ElsasserState | None = None) -> FlowMapState:
    """RK4 update of the markers d psi/dt = Z(t, psi).

    The velocity at intermediate times is interpolated linearly between
    ``state`` and ``state_next`` (frozen at ``state`` if absent).
    """
    grid = fm.grid
    new = {}
    for s in SPECIES:
        e3 = np.array([0.0, 0.0, B0_SIGN[s]])[:, None, None, None]
        z0 = state.field(s)
        z1 = z0 if state_next is None else state_next.field(s)
        if not np.any(z0) and not np.any(z1):
            new[s] = fm.psi(s) + dt * e3
            continue
        f0 = PeriodicInterpolator(grid, z0)
        fh = PeriodicInterpolator(grid, 0.5 * (z0 + z1))
        f1 = PeriodicInterpolator(grid, z1)
        p = fm.psi(s)
        k1 = f0(p) + e3
        k2 = fh(p + 0.5 * dt * k1) + e3
        k3 = fh(p + 0.5 * dt * k2) + e3
        k4 = f1(p + dt * k3) + e3
        new[s] = p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out = FlowMapState(grid, fm.t + dt, fm.y, new["plus"], new["minus"])
    dev, dmin, dmax = _jacobian_stats(out)
    return replace(out, jacobian_deviation=dev, det_min=dmin, det_max=dmax)


def labels_at_markers(labels: LabelFields, fm: FlowMapState, species: str) -> np.ndarray:
    """x^(+/-)(t, psi(t, y)) evaluated by interpolating the periodic residuals."""
    p = fm.psi(species)
    phi = PeriodicInterpolator(labels.grid, labels.phi(species))(p)
    out = p + phi
    out[2] += drift(species, labels.t)
    return out


# -- level sets of the optical function x_3 along x3-columns --------------

def _column_values(labels: LabelFields, species: str) -> np.ndarray:
    """x_3^(+/-) sampled on the grid, shape (n, n, n)."""
    return labels.optical(species)[2]


def _lagrange4(s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cubic through v[..., 0..3] at nodes -1, 0, 1, 2, evaluated at s."""
    return (-s * (s - 1) * (s - 2) / 6.0 * v[..., 0]
            + (s + 1) * (s - 1) * (s - 2) / 2.0 * v[..., 1]
            - (s + 1) * s * (s - 2) / 2.0 * v[..., 2]
            + (s + 1) * s * (s - 1) / 6.0 * v[..., 3])


def _extended_columns(values: np.ndarray, L: float) -> np.ndarray:
    """Columns continued over three periods using x_3(x + 2L e3) = x_3 + 2L."""
    return np.concatenate([values - 2 * L, values, values + 2 * L], axis=-1)


@dataclass(frozen=True)
class ColumnRoots:
    """Per-column solution of u_(+/-)(x1, x2, X3) = a with X3 in [-L, L)."""

    x3: np.ndarray       # root position, shape (n, n)
    cell: np.ndarray     # grid index j with x_j <= X3 < x_j+1
    frac: np.ndarray     # position inside the cell in [0, 1)
    level: np.ndarray    # per-column value a + 2Lm of the unwrapped label


def level_set_columns(labels: LabelFields, species: str, a: float,
                      polish: bool = True) -> ColumnRoots:
    """Solve u_(+/-) = a on every x3-column.

    On each column the unwrapped label x_3 is strictly increasing and gains
    2L per period, so u = a has exactly one root per period.  It is found
    for the shifted level a + 2Lm nearest the column's central value: a
    cubic interpolant of the samples is bisected, Newton steps on the
    trigonometric interpolant of the residual polish it, and the root is
    finally wrapped into [-L, L).
    """
    grid = labels.grid
    n, L, dx = grid.n, grid.L, grid.dx
    vals = _column_values(labels, species)
    if np.any(np.diff(vals, axis=-1) <= 0) or np.any(vals[..., 0] + 2 * L <= vals[..., -1]):
        raise NotMonotone(f"x_3^{species} is not strictly increasing along x3 at t = {labels.t:.6g}")
    level = a + 2 * L * np.round((vals[..., n // 2] - a) / (2 * L))
    ext = _extended_columns(vals, L)
    j = np.sum(ext <= level[..., None], axis=-1) - 1
    if np.any(j < 1) or np.any(j > 3 * n - 3):
        raise NotMonotone(f"level {a} not bracketed on every column")
    idx = j[..., None] + np.arange(-1, 3)
    v = np.take_along_axis(ext, idx, axis=-1)
    lo = np.zeros(j.shape)
    hi = np.ones(j.shape)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = _lagrange4(mid, v) <= level
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x3 = -L + (j - n + 0.5 * (lo + hi)) * dx
    if polish:
        x3 = _newton_polish(labels, species, level, x3)
    shift = 2 * L * np.floor((x3 + L) / (2 * L))
    x3 = x3 - shift
    level = level - shift
    rel = (x3 + L) / dx
    cell = np.minimum(np.floor(rel).astype(int), n - 1)
    frac = rel - cell
    return ColumnRoots(x3, cell, frac, level)


def _newton_polish(labels: LabelFields, species: str, level: np.ndarray, x3: np.ndarray,
                   steps: int = 4) -> np.ndarray:
    grid = labels.grid
    ch = np.fft.rfft(labels.phi(species)[2], axis=-1)
    shift = drift(species, labels.t)
    for _ in range(steps):
        g = x3 + shift + sp.interpolate_trig_columns(ch, grid, x3) - level
        dg = 1.0 + sp.interpolate_trig_columns(ch, grid, x3, deriv=True)
        x3 = x3 - g / dg
    return x3


def column_label_residual(labels: LabelFields, species: str, a: float,
                          x3: np.ndarray) -> np.ndarray:
    """u_(+/-)(x1, x2, x3) - a, reduced modulo 2L, from the trigonometric
    interpolant of the label residual."""
    L = labels.grid.L
    ch = np.fft.rfft(labels.phi(species)[2], axis=-1)
    r = x3 + drift(species, labels.t) + sp.interpolate_trig_columns(ch, labels.grid, x3) - a
    return r - 2 * L * np.round(r / (2 * L))


def level_set_x3(labels: LabelFields, species: str, a: float, i1: int, i2: int) -> float:
    """X3 in [-L, L) on the column (x1[i1], x2[i2]) where u_(+/-) = a."""
    return float(level_set_columns(labels, species, a).x3[i1, i2])


def interpolate_on_roots(field: np.ndarray, roots: ColumnRoots) -> np.ndarray:
    """Cubic interpolation of a periodic grid field (..., n, n, n) at the
    column roots."""
    n = field.shape[-1]
    idx = (roots.cell[..., None] + np.arange(-1, 3)) % n
    idx = np.broadcast_to(idx, field.shape[:-1] + (4,))
    v = np.take_along_axis(field, idx, axis=-1)
    return _lagrange4(roots.frac, v)
