"""Time integration of the Elsasser system with background field B0 = e3.

    d_t z+ + Z- . grad z+ - mu Lap z+ = -grad p,   Z- = z- - e3
    d_t z- + Z+ . grad z- - mu Lap z- = -grad p,   Z+ = z+ + e3

Diffusion is integrated exactly through the factor exp(-mu |k|^2 dt); the
advection and pressure terms use SSP-RK3 in integrating-factor form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import spectral as sp
from .errors import AmplitudeTooLarge, CFLViolation, DecompositionDrift
from .spectral import Grid

SPECIES = ("plus", "minus")
# sign s such that Z_s = z_s + s * e3
B0_SIGN = {"plus": 1.0, "minus": -1.0}


@dataclass(frozen=True)
class ElsasserState:
    grid: Grid
    t: float
    z_plus: np.ndarray
    z_minus: np.ndarray

    @cached_property
    def hat_plus(self) -> np.ndarray:
        return sp.forward(self.z_plus)

    @cached_property
    def hat_minus(self) -> np.ndarray:
        return sp.forward(self.z_minus)

    def field(self, species: str) -> np.ndarray:
        return self.z_plus if species == "plus" else self.z_minus

    def hat(self, species: str) -> np.ndarray:
        return self.hat_plus if species == "plus" else self.hat_minus

    def max_speed(self) -> float:
        """Largest pointwise |z+| or |z-|."""
        return max(float(np.sqrt(np.max(np.sum(z * z, axis=0))))
                   for z in (self.z_plus, self.z_minus))

    @classmethod
    def zero(cls, grid: Grid, t: float = 0.0) -> "ElsasserState":
        return cls(grid, t, grid.zeros(3), grid.zeros(3))


@dataclass(frozen=True)
class SolverParams:
    mu: float
    dt: float
    cfl_safety: float = 0.5
    dealias: bool = True

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive (inviscid runs are not supported)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")


def cfl_limit(state: ElsasserState, params: SolverParams) -> float:
    return params.cfl_safety * state.grid.dx / (1.0 + state.max_speed())


def check_cfl(state: ElsasserState, params: SolverParams) -> None:
    limit = cfl_limit(state, params)
    if params.dt > limit * (1.0 + 1e-12):
        raise CFLViolation(f"dt = {params.dt:.6g} exceeds the CFL bound {limit:.6g} at t = {state.t:.6g}")


@dataclass
class _Stage:
    """Physical fields and pressure gradient of one Runge-Kutta stage."""

    z_plus: np.ndarray
    z_minus: np.ndarray
    grad_p_hat: np.ndarray


def _advection_hat(grid: Grid, adv: np.ndarray, w: np.ndarray, w_hat: np.ndarray,
                   sign_b: float, dealias: bool) -> np.ndarray:
    """Transform of -(Z . grad) w with Z = adv + sign_b * e3 and div adv = 0."""
    th = sp.forward(adv[:, None] * w[None, :])
    if dealias:
        th = sp.dealias(th, grid)
    k = grid.k
    out = -1j * (k[0] * th[0] + k[1] * th[1] + k[2] * th[2])
    out -= sign_b * 1j * k[2] * w_hat
    return out


def _full_rhs(grid: Grid, zp_hat: np.ndarray, zm_hat: np.ndarray, dealias: bool):
    zp = sp.inverse(zp_hat, grid)
    zm = sp.inverse(zm_hat, grid)
    th = sp.product_tensor_hat(zm, zp, grid, dealias)  # th[j, k] ~ zm^j zp^k
    k = grid.k
    adv_p = -1j * (k[0] * th[0] + k[1] * th[1] + k[2] * th[2]) + 1j * k[2] * zp_hat
    adv_m = -1j * (k[0] * th[:, 0] + k[1] * th[:, 1] + k[2] * th[:, 2]) - 1j * k[2] * zm_hat
    p_hat = sp._pressure_hat_from_products(th, grid)
    grad_p = np.array([1j * kk * p_hat for kk in k])
    rp = sp.leray_project_hat(adv_p - grad_p, grid)
    rm = sp.leray_project_hat(adv_m - grad_p, grid)
    return rp, rm, _Stage(zp, zm, grad_p)


def rhs_elsasser(state: ElsasserState, dealias: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """-(Z-/+ . grad) z+/- - grad p, Leray-projected, in physical space."""
    grid = state.grid
    rp, rm, _ = _full_rhs(grid, state.hat_plus, state.hat_minus, dealias)
    return sp.inverse(rp, grid), sp.inverse(rm, grid)


def _passenger_rhs(grid: Grid, stage: _Stage, species: str, w_hat: np.ndarray,
                   with_pressure: bool, dealias: bool) -> np.ndarray:
    # z+ is carried by Z- and z- by Z+
    adv = stage.z_minus if species == "plus" else stage.z_plus
    sign_b = -B0_SIGN[species]
    w = sp.inverse(w_hat, grid)
    out = _advection_hat(grid, adv, w, w_hat, sign_b, dealias)
    if with_pressure:
        out = out - stage.grad_p_hat
    return out


def _ssprk3_if(grid: Grid, mu: float, dt: float, zp_hat, zm_hat, dealias: bool,
               passengers=()):
    """One IF-SSPRK3 step; ``passengers`` are (species, hat, with_pressure)."""
    e_full = np.exp(-mu * grid.k2 * dt)
    e_half = np.exp(-mu * grid.k2 * 0.5 * dt)
    e_back = np.exp(mu * grid.k2 * 0.5 * dt)

    def all_rhs(up, um, ws):
        rp, rm, stage = _full_rhs(grid, up, um, dealias)
        rw = [_passenger_rhs(grid, stage, s, w, wp, dealias)
              for (s, _, wp), w in zip(passengers, ws)]
        return rp, rm, rw

    u0 = [zp_hat, zm_hat] + [p[1] for p in passengers]
    r = all_rhs(u0[0], u0[1], u0[2:])
    r0 = [r[0], r[1]] + r[2]
    u1 = [e_full * (a + dt * b) for a, b in zip(u0, r0)]
    r = all_rhs(u1[0], u1[1], u1[2:])
    r1 = [r[0], r[1]] + r[2]
    u2 = [0.75 * e_half * a + 0.25 * e_back * (b + dt * c) for a, b, c in zip(u0, u1, r1)]
    r = all_rhs(u2[0], u2[1], u2[2:])
    r2 = [r[0], r[1]] + r[2]
    u3 = [(1.0 / 3.0) * e_full * a + (2.0 / 3.0) * e_half * (b + dt * c)
          for a, b, c in zip(u0, u2, r2)]
    return u3


def step(state: ElsasserState, params: SolverParams) -> ElsasserState:
    """Advance ``state`` by ``params.dt``."""
    check_cfl(state, params)
    grid = state.grid
    zp_hat, zm_hat = _ssprk3_if(grid, params.mu, params.dt, state.hat_plus,
                                state.hat_minus, params.dealias)
    return ElsasserState(grid, state.t + params.dt,
                         sp.inverse(zp_hat, grid), sp.inverse(zm_hat, grid))


@dataclass(frozen=True)
class DecompositionState:
    """Split z = z_lin + z_non on the interval starting at ``t_start``."""

    t_start: float
    t: float
    z_lin_plus: np.ndarray
    z_lin_minus: np.ndarray
    z_non_plus: np.ndarray
    z_non_minus: np.ndarray

    @classmethod
    def start(cls, state: ElsasserState) -> "DecompositionState":
        zero = np.zeros_like(state.z_plus)
        return cls(state.t, state.t, state.z_plus.copy(), state.z_minus.copy(),
                   zero, zero.copy())

    def lin(self, species: str) -> np.ndarray:
        return self.z_lin_plus if species == "plus" else self.z_lin_minus

    def non(self, species: str) -> np.ndarray:
        return self.z_non_plus if species == "plus" else self.z_non_minus

    def drift(self, state: ElsasserState) -> float:
        """max |z - z_lin - z_non| relative to max |z| over both species."""
        scale = max(np.max(np.abs(state.z_plus)), np.max(np.abs(state.z_minus)))
        diff = max(np.max(np.abs(state.z_plus - self.z_lin_plus - self.z_non_plus)),
                   np.max(np.abs(state.z_minus - self.z_lin_minus - self.z_non_minus)))
        if scale == 0.0:
            return float(diff)
        return float(diff / scale)


DRIFT_TOLERANCE = 1e-8


def step_with_decomposition(state: ElsasserState, dec: DecompositionState,
                            params: SolverParams):
    """Advance the solution and both parts of its decomposition together.

    Both parts use the advecting fields and the pressure of the full
    solution at every Runge-Kutta stage, so their sum tracks z.
    """
    check_cfl(state, params)
    grid = state.grid
    passengers = [
        ("plus", sp.forward(dec.z_lin_plus), False),
        ("minus", sp.forward(dec.z_lin_minus), False),
        ("plus", sp.forward(dec.z_non_plus), True),
        ("minus", sp.forward(dec.z_non_minus), True),
    ]
    out = _ssprk3_if(grid, params.mu, params.dt, state.hat_plus, state.hat_minus,
                     params.dealias, passengers)
    phys = [sp.inverse(h, grid) for h in out]
    new_state = ElsasserState(grid, state.t + params.dt, phys[0], phys[1])
    new_dec = DecompositionState(dec.t_start, new_state.t, *phys[2:])
    drift = new_dec.drift(new_state)
    if drift > DRIFT_TOLERANCE:
        raise DecompositionDrift(f"|z - z_lin - z_non| / |z| = {drift:.3e} at t = {new_state.t:.6g}")
    return new_state, new_dec


def evolve_decomposition(dec: DecompositionState, state: ElsasserState,
                         params: SolverParams) -> DecompositionState:
    return step_with_decomposition(state, dec, params)[1]


def _vorticity_terms_hat(state: ElsasserState, species: str, mu: float) -> np.ndarray:
    """Transform of Z.grad j - mu Lap j + eps_ijk d_i z_o^l d_l z_s^j for species s."""
    grid = state.grid
    zs_hat = state.hat(species)
    other = "minus" if species == "plus" else "plus"
    zo = state.field(other)
    zo_hat = state.hat(other)
    sign_b = -B0_SIGN[species]
    j_hat = sp.curl_hat(zs_hat, grid)
    grad_j = np.array([[sp.inverse(sp.derivative_hat(j_hat[c], grid, a), grid)
                        for c in range(3)] for a in (1, 2, 3)])  # [l, c]
    adv = np.einsum("lxyz,lcxyz->cxyz", zo, grad_j)
    grad_o = np.array([[sp.inverse(sp.derivative_hat(zo_hat[c], grid, a), grid)
                        for c in range(3)] for a in (1, 2, 3)])  # [i, l] = d_i z_o^l
    grad_s = np.array([[sp.inverse(sp.derivative_hat(zs_hat[c], grid, a), grid)
                        for c in range(3)] for a in (1, 2, 3)])  # [l, j] = d_l z_s^j
    m = np.einsum("ilxyz,ljxyz->ijxyz", grad_o, grad_s)
    eps_term = np.array([m[1, 2] - m[2, 1], m[2, 0] - m[0, 2], m[0, 1] - m[1, 0]])
    nl_hat = sp.dealias(sp.forward(adv + eps_term), grid)
    return nl_hat + sign_b * 1j * grid.k[2] * j_hat + mu * grid.k2 * j_hat


def vorticity_residual(prev: ElsasserState, curr: ElsasserState, mu: float) -> float:
    """Max-norm residual of the curl equations between two consecutive states.

    The time derivative is a forward difference and the spatial terms are
    averaged over both ends, so the residual is O(dt^2) for a consistent
    stepper.
    """
    grid = curr.grid
    dt = curr.t - prev.t
    worst = 0.0
    for species in SPECIES:
        dj = (sp.curl_hat(curr.hat(species), grid) - sp.curl_hat(prev.hat(species), grid)) / dt
        r_hat = dj + 0.5 * (_vorticity_terms_hat(prev, species, mu)
                            + _vorticity_terms_hat(curr, species, mu))
        worst = max(worst, float(np.max(np.abs(sp.inverse(r_hat, grid)))))
    return worst


AMPLITUDE_LIMIT = 0.5


def _packet_field(grid: Grid, sigma: float, carrier: int, rng: np.random.Generator) -> np.ndarray:
    x = grid.coords
    kc = carrier * grid.k0
    ph = rng.uniform(0.0, 2.0 * np.pi, size=3)
    envelope = np.exp(-0.5 * (x[2] / sigma) ** 2)
    potential = grid.zeros(3)
    potential[2] = envelope * np.cos(kc * x[0] + ph[0]) * np.cos(kc * x[1] + ph[1])
    potential[0] = 0.5 * envelope * np.cos(kc * x[1] + ph[2])
    z_hat = sp.dealias(sp.curl_hat(sp.forward(potential), grid), grid)
    return sp.inverse(sp.leray_project_hat(z_hat, grid), grid)


def init_wave_packet(grid: Grid, amplitude: float, sigma: float | None = None,
                     species: str = "plus", carrier: int = 1, seed: int = 0) -> ElsasserState:
    """Divergence-free packets localized in x3 with max |z| equal to ``amplitude``.

    ``species`` is "plus", "minus" or "both".  The default envelope width
    is L/8.
    """
    if species not in ("plus", "minus", "both"):
        raise ValueError(f"unknown species {species!r}")
    if sigma is None:
        sigma = grid.L / 8.0
    fields = {"plus": grid.zeros(3), "minus": grid.zeros(3)}
    if amplitude != 0.0:
        for offset, s in enumerate(SPECIES):
            if species not in (s, "both"):
                continue
            z = _packet_field(grid, sigma, carrier, np.random.default_rng([seed, offset]))
            z *= amplitude / np.sqrt(np.max(np.sum(z * z, axis=0)))
            fields[s] = z
    state = ElsasserState(grid, 0.0, fields["plus"], fields["minus"])
    if state.max_speed() > AMPLITUDE_LIMIT:
        raise AmplitudeTooLarge(f"max |z| = {state.max_speed():.4g} exceeds {AMPLITUDE_LIMIT}")
    return state


def mode_polarization(mode) -> np.ndarray:
    """Unit vector orthogonal to the wavevector (e2 for modes along e3)."""
    m = np.asarray(mode, dtype=float)
    if m[0] == 0 and m[1] == 0:
        return np.array([0.0, 1.0, 0.0])
    e = np.cross(m, [0.0, 0.0, 1.0])
    return e / np.linalg.norm(e)


def init_single_mode(grid: Grid, mode, species: str = "plus",
                     amplitude: float = 1e-6) -> ElsasserState:
    """``amplitude * e * cos(k . x)`` in one species, with ``k = k0 * mode``."""
    if abs(amplitude) > AMPLITUDE_LIMIT:
        raise AmplitudeTooLarge(f"amplitude {amplitude} exceeds {AMPLITUDE_LIMIT}")
    x = grid.coords
    k = grid.k0 * np.asarray(mode, dtype=float)
    phase = k[0] * x[0] + k[1] * x[1] + k[2] * x[2]
    z = amplitude * mode_polarization(mode)[:, None, None, None] * np.cos(phase)[None]
    zero = grid.zeros(3)
    if species == "plus":
        return ElsasserState(grid, 0.0, z, zero)
    if species == "minus":
        return ElsasserState(grid, 0.0, zero, z)
    raise ValueError(f"unknown species {species!r}")


def mode_amplitude(state: ElsasserState, species: str, mode) -> complex:
    """Complex amplitude of ``mode`` along its polarization, normalized so a
    field ``a * e * cos(k . x)`` at t = 0 gives modulus ``a``."""
    grid = state.grid
    n = grid.n
    m = [int(v) for v in mode]
    conj = False
    if m[2] < 0:
        m = [-v for v in m]
        conj = True
    vh = state.hat(species)[:, m[0] % n, m[1] % n, m[2]]
    val = complex(np.dot(mode_polarization(mode), vh))
    # phase reference so the coefficient of cos(k.x) is real at t = 0
    k = grid.k0 * np.asarray(m, dtype=float)
    val *= np.exp(1j * k.sum() * grid.L)
    val /= 0.5 * np.sqrt(float(n) ** 3)
    if m == [0, 0, 0]:
        val *= 0.5
    return val.conjugate() if conj else val
