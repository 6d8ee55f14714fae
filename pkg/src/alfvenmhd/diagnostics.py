"""Weighted energies, characteristic fluxes, diffusions and decay metrics.

Conventions: the weight of species +/- is built from the labels of the
opposite species, ``<w_-/+>``; logarithms are natural; every spatial
integral is the rectangle rule of :func:`spectral.integrate_box`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import spectral as sp
from .characteristics import (LabelFields, SeparationMetrics, interpolate_on_roots,
                              level_set_columns, other_species)
from .errors import FitIllConditioned
from .solver import SPECIES, DecompositionState, ElsasserState
from .spectral import Grid

N_FLUX_LEVELS = 33
SURFACE_FACTOR = math.sqrt(2.0)


# -- derivative ladder ------------------------------------------------------

@dataclass(frozen=True)
class LadderConfig:
    """Orders 0..K of the weighted ladder.

    ``n_star`` plays the role of the top "main" order: orders up to
    ``n_star + 1`` carry <w>^2 (log <w>)^4, and the three following orders
    use <w> (log <w>)^4, (log <w>)^4 and 1/L.  The default ``K - 1`` keeps
    every diagnosed order in the main tier.
    """

    K: int = 2
    n_star: int | None = None

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if self.n_star is not None and self.n_star < -1:
            raise ValueError("n_star must be >= -1")

    @property
    def top_main(self) -> int:
        return (self.K - 1 if self.n_star is None else self.n_star) + 1

    def tier(self, k: int) -> int:
        """0 for the main tier, 1..3 for the three upper tiers."""
        offset = k - self.top_main
        if offset <= 0:
            return 0
        if offset > 3:
            raise ValueError(f"order {k} lies beyond the ladder (n_star + 4)")
        return offset

    def check(self, grid: Grid) -> None:
        if self.K > grid.n // 6:
            raise ValueError(f"K = {self.K} exceeds n/6 = {grid.n // 6}")
        self.tier(self.K)


def tier_weight(w: np.ndarray, tier: int, L: float) -> np.ndarray:
    lg4 = np.log(w) ** 4
    if tier == 0:
        return w * w * lg4
    if tier == 1:
        return w * lg4
    if tier == 2:
        return lg4
    if tier == 3:
        return np.full_like(w, 1.0 / L)
    raise ValueError(f"unknown tier {tier}")


@lru_cache(maxsize=None)
def _multiplicities(order: int, extra: int) -> tuple[tuple[tuple[int, int, int], int], ...]:
    """Pairs (beta, c) with |beta| = order + extra such that

        sum_{|alpha| = order} sum_{i1..i_extra} |d_i1 .. d_i_extra d^alpha f|^2
            = sum_beta c * |d^beta f|^2.
    """
    counts: dict[tuple[int, int, int], int] = {}
    for alpha in sp.multi_indices(order):
        for tup in itertools.product(range(3), repeat=extra):
            beta = list(alpha)
            for i in tup:
                beta[i] += 1
            beta = tuple(beta)
            counts[beta] = counts.get(beta, 0) + 1
    return tuple(sorted(counts.items()))


@lru_cache(maxsize=None)
def _tensor_multiplicities(m: int) -> tuple[tuple[tuple[int, int, int], int], ...]:
    """Pairs (beta, m!/beta!) so that |grad^m f|^2 = sum c |d^beta f|^2."""
    return _multiplicities(0, m)


class PartialSquares:
    """Memoized |d^beta f|^2 (summed over components) for one vector field."""

    def __init__(self, f_hat: np.ndarray, grid: Grid):
        self.f_hat = f_hat
        self.grid = grid
        self._cache: dict = {}

    def __call__(self, beta) -> np.ndarray:
        beta = tuple(beta)
        if beta not in self._cache:
            d = sp.inverse(sp.partial_hat(self.f_hat, self.grid, beta), self.grid)
            self._cache[beta] = np.sum(d * d, axis=0)
        return self._cache[beta]


class StateSquares:
    """Partial-derivative squares of z and of j = curl z for both species."""

    def __init__(self, state: ElsasserState):
        grid = state.grid
        self.z = {s: PartialSquares(state.hat(s), grid) for s in SPECIES}
        self.j = {s: PartialSquares(sp.curl_hat(state.hat(s), grid), grid) for s in SPECIES}


def _as_squares(f, grid: Grid) -> PartialSquares:
    return f if isinstance(f, PartialSquares) else PartialSquares(f, grid)


def derivative_density(f, grid: Grid, terms) -> np.ndarray:
    """sum over (beta, c) in ``terms`` of c * |d^beta f|^2 in physical space.

    ``f`` is a transform (3, ...) or a :class:`PartialSquares`.
    """
    sq = _as_squares(f, grid)
    out = np.zeros(grid.shape)
    for beta, c in terms:
        out += c * sq(beta)
    return out


def gradient_density(f, grid: Grid, order: int = 0, extra: int = 1) -> np.ndarray:
    """sum_{|alpha| = order} |grad^extra f^(alpha)|^2."""
    return derivative_density(f, grid, _multiplicities(order, extra))


def vorticity_density(z_hat: np.ndarray, grid: Grid, order: int, j_squares=None) -> np.ndarray:
    """sum_{|alpha| = order} |j^(alpha)|^2 with j = curl z."""
    sq = j_squares if j_squares is not None else PartialSquares(sp.curl_hat(z_hat, grid), grid)
    return derivative_density(sq, grid, [(a, 1) for a in sp.multi_indices(order)])


# -- energies -----------------------------------------------------------------

def _weight_of(labels: LabelFields, species: str) -> np.ndarray:
    return labels.w(other_species(species))


def energy_lowest(state: ElsasserState, labels: LabelFields) -> tuple[float, float]:
    """E_(+/-) = int (log <w_(-/+)>)^4 |z_(+/-)|^2 dx."""
    grid = state.grid
    out = []
    for s in SPECIES:
        z = state.field(s)
        weight = np.log(_weight_of(labels, s)) ** 4
        out.append(sp.integrate_box(weight * np.sum(z * z, axis=0), grid))
    return tuple(out)


def energy_order(state: ElsasserState, labels: LabelFields, k: int,
                 ladder: LadderConfig, squares: StateSquares | None = None) -> tuple[float, float]:
    """sum_{|alpha| = k} E_(+/-)^(alpha) with the tier weight of order k."""
    if k > ladder.K:
        raise ValueError(f"order {k} exceeds K = {ladder.K}")
    grid = state.grid
    tier = ladder.tier(k)
    out = []
    for s in SPECIES:
        src = squares.z[s] if squares is not None else state.hat(s)
        dens = gradient_density(src, grid, k, 1)
        weight = tier_weight(_weight_of(labels, s), tier, grid.L)
        out.append(sp.integrate_box(weight * dens, grid))
    return tuple(out)


def _total_energy_hat(hats, grid: Grid, K: int, mu: float) -> float:
    kd2 = grid.kd2
    symbol = np.ones(grid.spectral_shape)
    for k in range(K):
        symbol = symbol + kd2 * sp.symbol_sum(grid, k)
    symbol = symbol + mu * kd2 * sp.symbol_sum(grid, K)
    total = 0.0
    for h in hats:
        total += sp.spectral_sum(symbol * np.sum(np.abs(h) ** 2, axis=0), grid) * grid.dx**3
    return total


def total_energy(state: ElsasserState, K: int, mu: float) -> float:
    """Unweighted total energy over both species:

        ||z||^2 + sum_{|alpha| <= K-1} ||grad z^(alpha)||^2 + mu sum_{|alpha| = K} ||grad z^(alpha)||^2
    """
    return _total_energy_hat((state.hat_plus, state.hat_minus), state.grid, K, mu)


def decomposition_energies(dec: DecompositionState, grid: Grid, K: int,
                           mu: float) -> tuple[float, float]:
    """Total energies of the linear and nonlinear parts."""
    lin = _total_energy_hat((sp.forward(dec.z_lin_plus), sp.forward(dec.z_lin_minus)), grid, K, mu)
    non = _total_energy_hat((sp.forward(dec.z_non_plus), sp.forward(dec.z_non_minus)), grid, K, mu)
    return lin, non


def initial_weighted_energy(state0: ElsasserState, ladder: LadderConfig, mu: float,
                            R: float = 100.0) -> float:
    """Weighted size of the initial data with <x> = (R^2 + |x|^2)^(1/2).

    Derivative orders m = 1..K+1 are included; order m = k + 1 takes the
    prefactor and weight of its rung, with n_star as in the ladder.
    """
    grid = state0.grid
    L = grid.L
    bx = np.sqrt(R * R + np.sum(grid.coords ** 2, axis=0))
    lg4 = np.log(bx) ** 4
    logL = math.log(L) if L > 1 else 1.0
    top = ladder.top_main - 1  # the n_star of the ladder
    total = 0.0
    for s in SPECIES:
        z = state0.field(s)
        total += sp.integrate_box(bx ** 4 * np.sum(z * z, axis=0), grid)
        for k in range(ladder.K + 1):
            dens = derivative_density(state0.hat(s), grid, _tensor_multiplicities(k + 1))
            offset = k - top
            if offset <= 0:
                pref, weight = 1.0, bx * bx * lg4
            elif offset == 1:
                pref, weight = mu, bx * bx * lg4
            elif offset == 2:
                pref, weight = mu / logL, bx * lg4
            elif offset == 3:
                pref, weight = mu / logL**2, lg4
            elif offset == 4:
                pref, weight = mu / L, 1.0
            else:
                raise ValueError(f"order {k + 1} lies beyond the initial-energy display")
            total += pref * sp.integrate_box(weight * dens, grid)
    return total


def low_freq_mass(state: ElsasserState, h: float) -> float:
    """sum_{|k| <= h} |z+^(k)|^2 + |z-^(k)|^2 in the Parseval normalization."""
    grid = state.grid
    mask = grid.kmag <= h * (1 + 1e-12)
    total = 0.0
    for hz in (state.hat_plus, state.hat_minus):
        total += sp.spectral_sum(mask * np.sum(np.abs(hz) ** 2, axis=0), grid)
    return total * grid.dx**3


# -- unweighted dissipation over a step -------------------------------------

def _exp_weights(lam: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Weights (A, B) with int_0^h g(s) ds ~ A g(0) + B g(h) for g(s) = e^(-lam s) q(s),
    q linear.  Exact when q is linear; reduces to the trapezoid rule at lam = 0."""
    x = np.minimum(lam * h, 700.0)
    small = x < 1e-4
    xs = np.where(small, 1.0, x)
    em1 = -np.expm1(-xs)                    # 1 - e^-x
    i0 = em1 / xs                            # (1/h) int e^-lam s
    i1 = (em1 - xs * np.exp(-xs)) / xs**2    # (1/h^2) int s e^-lam s
    a = i0 - i1
    b = (np.expm1(xs) - xs) / xs**2          # e^x i1
    a = np.where(small, 0.5 - x / 6.0 + x * x / 24.0, a)
    b = np.where(small, 0.5 + x / 6.0 + x * x / 24.0, b)
    return a * h, b * h


def dissipation_increment(hat_prev: np.ndarray, hat_curr: np.ndarray, grid: Grid,
                          mu: float, dt: float) -> float:
    """mu * int_t^(t+dt) ||grad z||^2 for one species.

    Each Fourier mode is integrated with the exponentially fitted trapezoid
    rule for the decay rate 2 mu |k|^2, which is exact for pure viscous
    decay and second order otherwise.
    """
    a, b = _exp_weights(2.0 * mu * grid.k2, dt)
    e0 = np.sum(np.abs(hat_prev) ** 2, axis=0)
    e1 = np.sum(np.abs(hat_curr) ** 2, axis=0)
    return mu * sp.spectral_sum(grid.k2 * (a * e0 + b * e1), grid) * grid.dx**3


# -- fluxes -------------------------------------------------------------------

def flux_levels(L: float, count: int = N_FLUX_LEVELS) -> np.ndarray:
    return np.linspace(-L / 4, L / 4, count)


def flux_integrands(state: ElsasserState, labels: LabelFields, species: str,
                    ladder: LadderConfig, squares: StateSquares | None = None) -> np.ndarray:
    """Integrand fields for F, F^(0), ..., F^(K) of one species, stacked.

    F uses (log <w>)^4 |z|^2, F^(0) uses <w>^2 (log <w>)^4 |grad z|^2 and the
    orders k >= 1 use <w>^2 (log <w>)^4 |j^(k)|^2.
    """
    grid = state.grid
    w = _weight_of(labels, species)
    lg4 = np.log(w) ** 4
    main = w * w * lg4
    z = state.field(species)
    squares = squares or StateSquares(state)
    rows = [lg4 * np.sum(z * z, axis=0), main * gradient_density(squares.z[species], grid, 0, 1)]
    for k in range(1, ladder.K + 1):
        rows.append(main * vorticity_density(None, grid, k, squares.j[species]))
    return np.array(rows)


def surface_sample(labels: LabelFields, species: str, integrands: np.ndarray,
                   levels: np.ndarray) -> np.ndarray:
    """sqrt(2) * sum_{x1, x2} f(x1, x2, X3(a)) dx1 dx2 on the level sets u = a.

    ``integrands`` has shape (m, n, n, n); the result has shape (m, len(levels)).
    """
    grid = labels.grid
    out = np.empty((integrands.shape[0], len(levels)))
    for i, a in enumerate(levels):
        roots = level_set_columns(labels, species, float(a))
        # the integrands are non-negative; cubic interpolation may undershoot
        vals = np.maximum(interpolate_on_roots(integrands, roots), 0.0)
        out[:, i] = SURFACE_FACTOR * np.sum(vals, axis=(-2, -1)) * grid.dx**2
    return out


@dataclass
class FluxAccumulator:
    """Trapezoidal time integrals of the surface samples, per level a.

    ``values[species]`` has shape (K + 2, n_levels): row 0 is F, row 1 is
    F^(0) and row k + 1 is F^(k).
    """

    levels: np.ndarray
    ladder: LadderConfig
    t_last: float | None = None
    last: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    @classmethod
    def create(cls, L: float, ladder: LadderConfig, count: int = N_FLUX_LEVELS):
        return cls(flux_levels(L, count), ladder)

    def sample(self, state: ElsasserState, labels: LabelFields,
               squares: StateSquares | None = None) -> None:
        for s in SPECIES:
            if not np.any(state.field(s)):
                cur = np.zeros((self.ladder.K + 2, len(self.levels)))
            else:
                rows = flux_integrands(state, labels, s, self.ladder, squares)
                cur = surface_sample(labels, s, rows, self.levels)
            if self.t_last is None:
                self.values[s] = np.zeros_like(cur)
            else:
                self.values[s] = self.values[s] + 0.5 * (state.t - self.t_last) * (self.last[s] + cur)
            self.last[s] = cur
        self.t_last = state.t

    def flux(self, species: str) -> np.ndarray:
        """Sup over the sampled levels, one entry per row."""
        if species not in self.values:
            return np.zeros(self.ladder.K + 2)
        return self.values[species].max(axis=1)


# -- diffusions -------------------------------------------------------------

def diffusion_tier_integrands(state: ElsasserState, labels: LabelFields,
                              ladder: LadderConfig, squares: StateSquares | None = None) -> dict:
    """Per species, int W_k sum_{|alpha| = k} |grad^2 z^(alpha)|^2 dx for k = 0..K
    (the D ladder integrands at one time, without mu)."""
    grid = state.grid
    out = {}
    for s in SPECIES:
        w = _weight_of(labels, s)
        zh = squares.z[s] if squares is not None else PartialSquares(state.hat(s), grid)
        out[s] = np.array([
            sp.integrate_box(tier_weight(w, ladder.tier(k), grid.L) * gradient_density(zh, grid, k, 2), grid)
            for k in range(ladder.K + 1)])
    return out


@dataclass
class DiffusionAccumulator:
    """Running diffusions.

    ``lowest`` (weighted D) and ``unweighted`` are advanced every solver step;
    the ladder rows ``tiers`` are advanced at the diagnostic cadence.  All
    integrals are trapezoidal in time except ``unweighted``, which uses the
    exponentially fitted rule of :func:`dissipation_increment`.
    """

    mu: float
    ladder: LadderConfig
    lowest: dict = field(default_factory=lambda: {s: 0.0 for s in SPECIES})
    unweighted: dict = field(default_factory=lambda: {s: 0.0 for s in SPECIES})
    tiers: dict = field(default_factory=dict)
    _prev_state: ElsasserState | None = None
    _prev_lowest: dict | None = None
    _prev_tier_t: float | None = None
    _prev_tier_vals: dict | None = None

    def _lowest_now(self, state: ElsasserState, labels: LabelFields) -> dict:
        out = {}
        for s in SPECIES:
            w = _weight_of(labels, s)
            dens = gradient_density(state.hat(s), state.grid, 0, 1)
            out[s] = self.mu * sp.integrate_box(np.log(w) ** 4 * dens, state.grid)
        return out

    def step(self, state: ElsasserState, labels: LabelFields) -> None:
        """Record ``state`` (after a solver step, or the initial state)."""
        cur = self._lowest_now(state, labels)
        prev = self._prev_state
        if prev is not None:
            dt = state.t - prev.t
            for s in SPECIES:
                self.lowest[s] += 0.5 * dt * (self._prev_lowest[s] + cur[s])
                self.unweighted[s] += dissipation_increment(prev.hat(s), state.hat(s),
                                                            state.grid, self.mu, dt)
        self._prev_state = state
        self._prev_lowest = cur

    def tier_sample(self, state: ElsasserState, labels: LabelFields,
                    squares: StateSquares | None = None) -> None:
        vals = diffusion_tier_integrands(state, labels, self.ladder, squares)
        vals = {s: self.mu * v for s, v in vals.items()}
        if self._prev_tier_t is None:
            self.tiers = {s: np.zeros_like(v) for s, v in vals.items()}
        else:
            dt = state.t - self._prev_tier_t
            for s in SPECIES:
                self.tiers[s] = self.tiers[s] + 0.5 * dt * (self._prev_tier_vals[s] + vals[s])
        self._prev_tier_t = state.t
        self._prev_tier_vals = vals


# -- record -------------------------------------------------------------------

@dataclass
class DiagRecord:
    t: float
    E_plus: float = 0.0
    E_minus: float = 0.0
    E_k_plus: list = field(default_factory=list)
    E_k_minus: list = field(default_factory=list)
    F_plus: float = 0.0
    F_minus: float = 0.0
    F_k_plus: list = field(default_factory=list)
    F_k_minus: list = field(default_factory=list)
    D_plus: float = 0.0
    D_minus: float = 0.0
    D_k_plus: list = field(default_factory=list)
    D_k_minus: list = field(default_factory=list)
    total_E: float = 0.0
    basic_energy_residual_plus: float = 0.0
    basic_energy_residual_minus: float = 0.0
    separation: SeparationMetrics | None = None
    low_freq_mass: float = 0.0
    E_lin_total: float = float("nan")
    E_non_total: float = float("nan")
    mode_amplitude: float = float("nan")


def csv_columns(K: int) -> list[str]:
    cols = ["t", "E_plus", "E_minus"]
    for k in range(K + 1):
        cols += [f"E{k}_plus", f"E{k}_minus"]
    cols += ["F_plus", "F_minus", "D_plus", "D_minus", "total_E",
             "basic_residual_plus", "basic_residual_minus", "sep_min", "sep_max",
             "weight_product_min", "low_freq_mass", "E_lin_total", "E_non_total"]
    for k in range(K + 1):
        cols += [f"F{k}_plus", f"F{k}_minus"]
    for k in range(K + 1):
        cols += [f"D{k}_plus", f"D{k}_minus"]
    cols.append("mode_amplitude")
    return cols


def record_row(rec: DiagRecord, K: int) -> list[float]:
    row = [rec.t, rec.E_plus, rec.E_minus]
    for k in range(K + 1):
        row += [rec.E_k_plus[k], rec.E_k_minus[k]]
    sep = rec.separation
    sep_vals = [sep.min_abs_diff, sep.max_abs_diff, sep.min_weight_product] if sep else [float("nan")] * 3
    row += [rec.F_plus, rec.F_minus, rec.D_plus, rec.D_minus, rec.total_E,
            rec.basic_energy_residual_plus, rec.basic_energy_residual_minus, *sep_vals,
            rec.low_freq_mass, rec.E_lin_total, rec.E_non_total]
    for k in range(K + 1):
        row += [rec.F_k_plus[k], rec.F_k_minus[k]]
    for k in range(K + 1):
        row += [rec.D_k_plus[k], rec.D_k_minus[k]]
    row.append(rec.mode_amplitude)
    return row


# -- fits and reports ------------------------------------------------------

@dataclass(frozen=True)
class DispersionFit:
    omega: float
    gamma: float


MIN_FIT_SAMPLES = 10


def dispersion_fit(times, amplitudes) -> DispersionFit:
    """Least-squares slopes of log|a| (= -gamma) and unwrapped arg a (= omega)."""
    t = np.asarray(times, dtype=float)
    a = np.asarray(amplitudes, dtype=complex)
    if t.size < MIN_FIT_SAMPLES or t.size != a.size:
        raise FitIllConditioned(f"need at least {MIN_FIT_SAMPLES} samples, got {t.size}")
    if np.any(a == 0) or np.ptp(t) == 0:
        raise FitIllConditioned("amplitude series vanishes or has no time extent")
    gamma = -np.polyfit(t, np.log(np.abs(a)), 1)[0]
    omega = np.polyfit(t, np.unwrap(np.angle(a)), 1)[0]
    return DispersionFit(float(omega), float(gamma))


@dataclass(frozen=True)
class DecayReport:
    ratios: list
    geometric_rate: float | None
    l2_monotone: bool | None


def decay_schedule(energies, l2_parts=None, times=None) -> DecayReport:
    """Ratios E(t_n)/E(t_(n-1)), the best-fit geometric rate per interval,
    and whether the L^2 part is non-increasing (if given)."""
    e = np.asarray(energies, dtype=float)
    ratios = []
    for prev, cur in zip(e[:-1], e[1:]):
        if prev > 0:
            ratios.append(float(cur / prev))
    rate = None
    pos = e[e > 0]
    if ratios and pos.size >= 2:
        x = np.arange(e.size, dtype=float) if times is None else np.asarray(times, dtype=float)
        x = x[e > 0]
        rate = float(np.exp(np.polyfit(np.arange(pos.size) if times is None else x,
                                       np.log(pos), 1)[0]))
    mono = None
    if l2_parts is not None:
        l2 = np.asarray(l2_parts, dtype=float)
        mono = bool(np.all(np.diff(l2) <= 1e-14 * max(1.0, float(np.max(np.abs(l2))))))
    return DecayReport(ratios, rate, mono)
