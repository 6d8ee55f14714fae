"""Periodic-grid spectral infrastructure on the cube [-L, L)^3.

Arrays are indexed ``[i1, i2, i3]`` with ``x_a = -L + i_a * dx``; vector
fields carry a leading component axis of length 3.  Spectral arrays are
real-to-complex transforms over the last three axes with orthonormal
scaling, so ``sum(f**2) == spectral_sum(|F|**2)`` on the grid.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft

AXES = (-3, -2, -1)


def _workers() -> int:
    value = os.environ.get("ALFVEN_THREADS")
    if not value:
        return 1
    return max(1, int(value))


@dataclass(frozen=True)
class Grid:
    """Uniform cubic grid with ``n`` points per axis on [-L, L)^3."""

    n: int
    L: float

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def k0(self) -> float:
        return np.pi / self.L

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** 3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n // 2 + 1)

    @cached_property
    def x1d(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.n)

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinates as an array of shape (3, n, n, n)."""
        return np.array(np.meshgrid(self.x1d, self.x1d, self.x1d, indexing="ij"))

    @cached_property
    def mode_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer mode numbers, broadcastable to the spectral shape."""
        m = np.fft.fftfreq(self.n, 1.0 / self.n)
        m3 = np.arange(self.n // 2 + 1, dtype=float)
        return m[:, None, None], m[None, :, None], m3[None, None, :]

    @cached_property
    def k(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavenumbers used for differentiation (Nyquist entries zeroed)."""
        out = []
        for m in self.mode_index:
            kk = self.k0 * m.copy()
            kk[np.abs(m) == self.n // 2] = 0.0
            out.append(kk)
        return tuple(out)

    @cached_property
    def k_full(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavenumbers including the Nyquist entries (used for |k|^2)."""
        return tuple(self.k0 * m for m in self.mode_index)

    @cached_property
    def k2(self) -> np.ndarray:
        k1, k2, k3 = self.k_full
        return k1**2 + k2**2 + k3**2

    @cached_property
    def kd2(self) -> np.ndarray:
        k1, k2, k3 = self.k
        return k1**2 + k2**2 + k3**2

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def rfft_weight(self) -> np.ndarray:
        """Multiplicity of each half-spectrum bin in the full spectrum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return np.broadcast_to(w[None, None, :], self.spectral_shape)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.n / 3.0
        m1, m2, m3 = self.mode_index
        return (np.abs(m1) <= cut) & (np.abs(m2) <= cut) & (np.abs(m3) <= cut)

    def zeros(self, ncomp: int | None = None) -> np.ndarray:
        shape = self.shape if ncomp is None else (ncomp,) + self.shape
        return np.zeros(shape)


def forward(f: np.ndarray) -> np.ndarray:
    return scipy.fft.rfftn(f, axes=AXES, norm="ortho", workers=_workers())


def inverse(fh: np.ndarray, grid: Grid) -> np.ndarray:
    return scipy.fft.irfftn(fh, s=grid.shape, axes=AXES, norm="ortho", workers=_workers())


def spectral_sum(a: np.ndarray, grid: Grid) -> float:
    """Sum of a half-spectrum quantity over the full spectrum."""
    w = grid.rfft_weight
    return float(np.sum(w * a))


def dealias(fh: np.ndarray, grid: Grid) -> np.ndarray:
    """2/3-rule truncation: zero every mode with some |m_i| > n/3."""
    return fh * grid.dealias_mask


def derivative_hat(fh: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Spectral derivative along ``axis`` in {1, 2, 3}."""
    return 1j * grid.k[axis - 1] * fh


def partial_hat(fh: np.ndarray, grid: Grid, alpha) -> np.ndarray:
    """Mixed derivative d^alpha for a multi-index ``alpha = (a1, a2, a3)``."""
    factor = 1.0
    for kk, a in zip(grid.k, alpha):
        if a:
            factor = factor * (1j * kk) ** a
    return fh * factor


def derivative(f: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    return inverse(derivative_hat(forward(f), grid, axis), grid)


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    fh = forward(f)
    return np.array([inverse(derivative_hat(fh, grid, a), grid) for a in (1, 2, 3)])


def divergence_hat(vh: np.ndarray, grid: Grid) -> np.ndarray:
    k1, k2, k3 = grid.k
    return 1j * (k1 * vh[0] + k2 * vh[1] + k3 * vh[2])


def divergence(v: np.ndarray, grid: Grid) -> np.ndarray:
    return inverse(divergence_hat(forward(v), grid), grid)


def curl_hat(vh: np.ndarray, grid: Grid) -> np.ndarray:
    k1, k2, k3 = grid.k
    return 1j * np.array([
        k2 * vh[2] - k3 * vh[1],
        k3 * vh[0] - k1 * vh[2],
        k1 * vh[1] - k2 * vh[0],
    ])


def curl(v: np.ndarray, grid: Grid) -> np.ndarray:
    return inverse(curl_hat(forward(v), grid), grid)


def laplacian_hat(fh: np.ndarray, grid: Grid) -> np.ndarray:
    return -grid.k2 * fh


def leray_project_hat(vh: np.ndarray, grid: Grid) -> np.ndarray:
    """Apply I - k k^T / |k|^2 mode by mode; the mean mode is untouched."""
    k = grid.k
    kd2 = grid.kd2
    inv = np.divide(1.0, kd2, out=np.zeros_like(kd2), where=kd2 > 0)
    kdotv = k[0] * vh[0] + k[1] * vh[1] + k[2] * vh[2]
    return np.array([vh[a] - k[a] * kdotv * inv for a in range(3)])


def leray_project(v: np.ndarray, grid: Grid) -> np.ndarray:
    return inverse(leray_project_hat(forward(v), grid), grid)


def _pressure_hat_from_products(th: np.ndarray, grid: Grid) -> np.ndarray:
    # th[j, k] is the transform of z_-^j z_+^k
    k = grid.k
    rhs = np.zeros(grid.spectral_shape, dtype=complex)
    for j in range(3):
        for m in range(3):
            rhs -= k[j] * k[m] * th[j, m]
    kd2 = grid.kd2
    inv = np.divide(1.0, kd2, out=np.zeros_like(kd2), where=kd2 > 0)
    return rhs * inv


def product_tensor_hat(zm: np.ndarray, zp: np.ndarray, grid: Grid,
                       dealiased: bool = True) -> np.ndarray:
    """Transforms of the nine products ``zm[j] * zp[k]``."""
    prod = zm[:, None] * zp[None, :]
    th = forward(prod)
    if dealiased:
        th = dealias(th, grid)
    return th


def solve_pressure_hat(zp: np.ndarray, zm: np.ndarray, grid: Grid,
                       dealiased: bool = False) -> np.ndarray:
    return _pressure_hat_from_products(product_tensor_hat(zm, zp, grid, dealiased), grid)


def solve_pressure(zp: np.ndarray, zm: np.ndarray, grid: Grid,
                   dealiased: bool = False) -> np.ndarray:
    """Zero-mean p with -Lap p = sum_jk d_j d_k (zm^j zp^k)."""
    return inverse(solve_pressure_hat(zp, zm, grid, dealiased), grid)


def integrate_box(f: np.ndarray, grid: Grid) -> float:
    """Rectangle-rule integral over the box, pairwise-summed by numpy."""
    return float(np.sum(f)) * grid.dx**3


def l2_norm_sq(v: np.ndarray, grid: Grid) -> float:
    return integrate_box(v * v, grid)


def l2_norm_sq_hat(vh: np.ndarray, grid: Grid) -> float:
    """Squared L2 norm computed from the transform (Parseval)."""
    return spectral_sum(np.abs(vh) ** 2, grid) * grid.dx**3


def multi_indices(order: int):
    """All multi-indices (a1, a2, a3) with a1 + a2 + a3 == order."""
    return [a for a in itertools.product(range(order + 1), repeat=3) if sum(a) == order]


def symbol_sum(grid: Grid, order: int) -> np.ndarray:
    """sum over |alpha| == order of prod_i k_i^(2 alpha_i)."""
    k = grid.k
    out = np.zeros(grid.spectral_shape)
    for a in multi_indices(order):
        out = out + (k[0] ** (2 * a[0])) * (k[1] ** (2 * a[1])) * (k[2] ** (2 * a[2]))
    return out


def interpolate_trig_columns(column_hat: np.ndarray, grid: Grid,
                             x3: np.ndarray, deriv: bool = False) -> np.ndarray:
    """Evaluate the trigonometric interpolant along axis 3 at per-column points.

    ``column_hat`` is the unnormalized rfft along axis 3 with shape
    (n, n, n//2+1); ``x3`` has shape (n, n).
    """
    n = grid.n
    m = np.arange(n // 2 + 1)
    kk = grid.k0 * m
    phase = np.exp(1j * kk[None, None, :] * (x3[..., None] + grid.L))
    coef = column_hat.copy()
    coef[..., 1:n // 2] *= 2.0
    if deriv:
        coef = coef * (1j * kk)
        coef[..., n // 2] = 0.0
    return np.real(np.sum(coef * phase, axis=-1)) / n
