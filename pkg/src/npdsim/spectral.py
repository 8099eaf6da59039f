"""Fourier machinery for periodic tori.

Transforms, spectral derivatives, 2/3-rule dealiasing, the gauge-fixed
Poisson inverse, and the Leray projector, all on uniform grids in 2 or 3
dimensions. The transform convention is

    f(x) = sum_k fhat(k) exp(i k.x)

so the forward transform carries the 1/N normalization and coefficients are
mode amplitudes (cos(x) has coefficient 1/2 at k = +-1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * np.pi

__all__ = [
    "Grid",
    "RealField",
    "SpectralField",
    "NonFiniteFieldError",
    "HermitianSymmetryError",
    "ChargeNeutralityError",
    "forward_transform",
    "inverse_transform",
    "gradient",
    "divergence",
    "curl",
    "laplacian",
    "dealias",
    "solve_poisson",
    "leray_project",
    "resample",
    "hermitian_defect",
    "spectral_l2",
]


class NonFiniteFieldError(ValueError):
    """A field contains NaN or Inf values."""


class HermitianSymmetryError(ValueError):
    """Spectral coefficients are not conjugate-symmetric, so no real inverse exists."""


class ChargeNeutralityError(ValueError):
    """The mean charge is too large for the periodic Poisson problem to be solvable."""


def _first_nonfinite(values: np.ndarray):
    bad = np.argwhere(~np.isfinite(values))
    return tuple(int(i) for i in bad[0]) if bad.size else None


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with precomputed spectral quantities.

    Parameters
    ----------
    shape : tuple of int
        Points per axis; each entry must be even and >= 8. Length 2 or 3.
    lengths : tuple of float, optional
        Physical side length per axis; defaults to 2*pi per axis so the
        smallest nonzero |k|^2 is exactly 1.

    Precomputed attributes (read-only arrays):
    ``wavenumbers`` (per-axis physical wavenumbers in FFT order), ``modes``
    (per-axis integer mode numbers), ``k2`` (full |k|^2 lattice), ``deriv_k``
    (per-axis broadcastable wavenumbers with the Nyquist entry zeroed, used
    for all first derivatives), and ``dealias_mask`` (True on retained
    modes; a mode is dropped when 3*|m_j| > n_j on any axis).
    """

    shape: tuple[int, ...]
    lengths: tuple[float, ...] | None = None

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        object.__setattr__(self, "shape", shape)
        dim = len(shape)
        if dim not in (2, 3):
            raise ValueError(f"grid must be 2- or 3-dimensional, got dim={dim}")
        for n in shape:
            if n < 8 or n % 2 != 0:
                raise ValueError(f"points per axis must be even and >= 8, got {n}")
        if self.lengths is None:
            lengths = (TWO_PI,) * dim
        else:
            lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        if len(lengths) != dim:
            raise ValueError("lengths must match the grid dimension")
        for length in lengths:
            if not np.isfinite(length) or length <= 0.0:
                raise ValueError(f"axis length must be positive and finite, got {length}")
        object.__setattr__(self, "lengths", lengths)

        modes = tuple(
            np.rint(np.fft.fftfreq(n) * n).astype(np.int64) for n in shape
        )
        wavenumbers = tuple(
            (TWO_PI / length) * m.astype(np.float64)
            for m, length in zip(modes, lengths)
        )

        def _bcast(arr, axis):
            view = [1] * dim
            view[axis] = arr.size
            return arr.reshape(view)

        k2 = np.zeros(shape, dtype=np.float64)
        for axis, k in enumerate(wavenumbers):
            k2 = k2 + _bcast(k, axis) ** 2

        # Nyquist-zeroed wavenumbers: the odd derivative of the +-n/2 mode is
        # ill-defined on an even grid, so every first-derivative operator
        # (gradient, divergence, curl, Leray) shares these arrays.
        deriv_k = []
        for axis, (k, n) in enumerate(zip(wavenumbers, shape)):
            kd = k.copy()
            kd[n // 2] = 0.0
            deriv_k.append(_bcast(kd, axis))

        keep = np.ones(shape, dtype=bool)
        for axis, (m, n) in enumerate(zip(modes, shape)):
            keep &= _bcast(3 * np.abs(m) <= n, axis)

        for arr in (k2, *deriv_k, keep):
            arr.flags.writeable = False
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "wavenumbers", wavenumbers)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "deriv_k", tuple(deriv_k))
        object.__setattr__(self, "dealias_mask", keep)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.shape))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(length / n for length, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self) -> float:
        return self.volume / self.npoints

    def axes(self) -> tuple[np.ndarray, ...]:
        """Per-axis coordinate arrays x_j = j*h."""
        return tuple(
            np.arange(n) * (length / n)
            for n, length in zip(self.shape, self.lengths)
        )

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Dense coordinate arrays of the grid shape (ij indexing)."""
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))


def _frozen_array(values, dtype, grid: Grid, kind: str) -> np.ndarray:
    arr = np.array(values, dtype=dtype, order="C", copy=True)
    if arr.shape != grid.shape:
        raise ValueError(
            f"{kind} shape {arr.shape} does not match grid shape {grid.shape}"
        )
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RealField:
    """A real scalar field sampled on a Grid. Values are copied and frozen."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, np.float64, self.grid, "field")
        bad = _first_nonfinite(arr)
        if bad is not None:
            raise NonFiniteFieldError(
                f"non-finite value {arr[bad]!r} at index {bad}"
            )
        object.__setattr__(self, "values", arr)

    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a field on a Grid, full complex lattice."""

    grid: Grid
    coefficients: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.coefficients, np.complex128, self.grid, "coefficients")
        bad = _first_nonfinite(arr)
        if bad is not None:
            raise NonFiniteFieldError(
                f"non-finite coefficient {arr[bad]!r} at index {bad}"
            )
        object.__setattr__(self, "coefficients", arr)


def hermitian_defect(coefficients: np.ndarray) -> float:
    """Max deviation from coeff(-k) = conj(coeff(k)), relative to the peak magnitude."""
    axes = tuple(range(coefficients.ndim))
    flipped = np.roll(np.flip(coefficients, axis=axes), 1, axis=axes)
    scale = float(np.max(np.abs(coefficients)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(flipped - np.conj(coefficients)))) / scale


def forward_transform(f: RealField) -> SpectralField:
    """Discrete Fourier transform with amplitude normalization (1/N forward)."""
    bad = _first_nonfinite(f.values)
    if bad is not None:
        raise NonFiniteFieldError(f"non-finite value at index {bad}")
    coeffs = np.fft.fftn(f.values) / f.grid.npoints
    return SpectralField(f.grid, coeffs)


def inverse_transform(fhat: SpectralField, symmetry_tol: float = 1e-9) -> RealField:
    """Invert forward_transform; rejects coefficients that are not Hermitian."""
    defect = hermitian_defect(fhat.coefficients)
    if defect > symmetry_tol:
        raise HermitianSymmetryError(
            f"Hermitian symmetry violated: relative defect {defect:.3e} > {symmetry_tol:.1e}"
        )
    values = np.fft.ifftn(fhat.coefficients).real * fhat.grid.npoints
    return RealField(fhat.grid, values)


def gradient(fhat: SpectralField) -> tuple[SpectralField, ...]:
    """Spectral gradient; the Nyquist derivative mode is zeroed on each axis."""
    grid = fhat.grid
    return tuple(
        SpectralField(grid, 1j * grid.deriv_k[axis] * fhat.coefficients)
        for axis in range(grid.dim)
    )


def divergence(components: Sequence[SpectralField]) -> SpectralField:
    grid = _common_grid(components)
    out = np.zeros(grid.shape, dtype=np.complex128)
    for axis, comp in enumerate(components):
        out += 1j * grid.deriv_k[axis] * comp.coefficients
    return SpectralField(grid, out)


def curl(components: Sequence[SpectralField]):
    """Spectral curl: scalar dx f_y - dy f_x in 2D, the usual vector in 3D."""
    grid = _common_grid(components)
    kd = grid.deriv_k
    c = [comp.coefficients for comp in components]
    if grid.dim == 2:
        return SpectralField(grid, 1j * kd[0] * c[1] - 1j * kd[1] * c[0])
    return (
        SpectralField(grid, 1j * kd[1] * c[2] - 1j * kd[2] * c[1]),
        SpectralField(grid, 1j * kd[2] * c[0] - 1j * kd[0] * c[2]),
        SpectralField(grid, 1j * kd[0] * c[1] - 1j * kd[1] * c[0]),
    )


def laplacian(fhat: SpectralField) -> SpectralField:
    return SpectralField(fhat.grid, -fhat.grid.k2 * fhat.coefficients)


def dealias(fhat: SpectralField) -> SpectralField:
    """Zero every mode with 3|m_j| > n_j on any axis (2/3 rule)."""
    return SpectralField(fhat.grid, fhat.coefficients * fhat.grid.dealias_mask)


def spectral_l2(fhat: SpectralField) -> float:
    """Grid-quadrature L2 norm computed via Parseval."""
    return float(
        np.sqrt(fhat.grid.volume * np.sum(np.abs(fhat.coefficients) ** 2))
    )


def solve_poisson(
    rho_hat: SpectralField, epsilon: float, neutrality_tol: float = 1e-10
) -> SpectralField:
    """Solve -epsilon * Laplace(phi) = rho with the zero-mean gauge phi_hat(0) = 0.

    The k = 0 coefficient of rho (its mean) must vanish to within
    ``neutrality_tol`` relative to the L2 norm of rho, otherwise the periodic
    problem is not solvable and a ChargeNeutralityError is raised.
    """
    if not (np.isfinite(epsilon) and epsilon > 0.0):
        raise ValueError(f"epsilon must be positive and finite, got {epsilon}")
    grid = rho_hat.grid
    zero = (0,) * grid.dim
    mean_charge = rho_hat.coefficients[zero]
    scale = spectral_l2(rho_hat)
    if abs(mean_charge) > neutrality_tol * scale:
        raise ChargeNeutralityError(
            f"mean charge {mean_charge!r} exceeds {neutrality_tol:.1e} * ||rho||_L2 = "
            f"{neutrality_tol * scale:.3e}"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = rho_hat.coefficients / (epsilon * grid.k2)
    phi[zero] = 0.0
    return SpectralField(grid, phi)


def _common_grid(components: Sequence[SpectralField]) -> Grid:
    grid = components[0].grid
    if len(components) != grid.dim:
        raise ValueError(
            f"expected {grid.dim} vector components, got {len(components)}"
        )
    for comp in components:
        if comp.grid is not grid and comp.grid != grid:
            raise ValueError("vector components live on different grids")
    return grid


def leray_project(components: Sequence[SpectralField]) -> tuple[SpectralField, ...]:
    """Project a vector field onto divergence-free fields: u = (I - k k^T/|k|^2) f.

    Modes where every derivative wavenumber vanishes (k = 0 and pure Nyquist
    modes) are passed through unchanged.
    """
    grid = _common_grid(components)
    kd = grid.deriv_k
    k2d = np.zeros(grid.shape, dtype=np.float64)
    for axis in range(grid.dim):
        k2d = k2d + kd[axis] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_k2 = np.where(k2d > 0.0, 1.0 / np.where(k2d > 0.0, k2d, 1.0), 0.0)
    k_dot_f = np.zeros(grid.shape, dtype=np.complex128)
    for axis, comp in enumerate(components):
        k_dot_f += kd[axis] * comp.coefficients
    factor = k_dot_f * inv_k2
    return tuple(
        SpectralField(grid, comp.coefficients - kd[axis] * factor)
        for axis, comp in enumerate(components)
    )


def _remap_axis(coeffs: np.ndarray, axis: int, n_old: int, n_new: int) -> np.ndarray:
    """Resize one FFT axis, splitting or folding the Nyquist bucket."""
    shape = list(coeffs.shape)
    shape[axis] = n_new
    out = np.zeros(shape, dtype=np.complex128)
    moved = np.moveaxis(coeffs, axis, 0)
    out_moved = np.moveaxis(out, axis, 0)
    modes_old = np.rint(np.fft.fftfreq(n_old) * n_old).astype(int)
    if n_new >= n_old:
        for i, m in enumerate(modes_old):
            if abs(m) < n_old // 2:
                out_moved[m % n_new] += moved[i]
            else:
                # coarse Nyquist bucket: split evenly across +-n_old/2
                half = n_old // 2
                out_moved[half % n_new] += 0.5 * moved[i]
                out_moved[(-half) % n_new] += 0.5 * moved[i]
    else:
        half_new = n_new // 2
        for i, m in enumerate(modes_old):
            if abs(m) < half_new:
                out_moved[m % n_new] += moved[i]
            elif abs(m) == half_new:
                out_moved[half_new] += moved[i]
    return out


def resample(f: RealField, target: Grid) -> RealField:
    """Band-limited injection/restriction of a field onto another grid.

    The target must share the physical lengths. Injection is exact for
    band-limited fields; restriction folds the target's Nyquist bucket.
    """
    grid = f.grid
    if target.dim != grid.dim or target.lengths != grid.lengths:
        raise ValueError(
            f"target grid geometry {target.lengths} does not match {grid.lengths}"
        )
    coeffs = forward_transform(f).coefficients
    for axis in range(grid.dim):
        coeffs = _remap_axis(coeffs, axis, grid.shape[axis], target.shape[axis])
    return inverse_transform(SpectralField(target, coeffs))
