"""Physical state and constitutive solves for two-species electrodiffusion.

Works in the charge/total-concentration variables rho = c1 - c2 and
sigma = c1 + c2 (unit valences, equal diffusivity D). The potential solves
-epsilon * Laplace(phi) = rho, the Darcy velocity is the Leray projection of
-rho * grad(phi) (friction coefficient 1), and the evolution is

    d rho  /dt = -u.grad(rho)   + D*(Lap(rho)   + grad(sigma).grad(phi) - sigma*rho/epsilon)
    d sigma/dt = -u.grad(sigma) + D*(Lap(sigma) + grad(rho).grad(phi)   - rho^2/epsilon)

where Lap(phi) = -rho/epsilon has been substituted exactly. All quadratic
products are formed pointwise from 2/3-dealiased factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    ChargeNeutralityError,
    Grid,
    RealField,
    SpectralField,
    dealias,
    forward_transform,
    gradient,
    inverse_transform,
    leray_project,
    solve_poisson,
)

__all__ = [
    "Params",
    "IonState",
    "VelocitySolve",
    "from_concentrations",
    "potential",
    "velocity",
    "tendency",
]


@dataclass(frozen=True)
class Params:
    """Physical constants: epsilon ~ Debye length squared, diffusivity D."""

    epsilon: float
    diffusivity: float

    def __post_init__(self):
        for name in ("epsilon", "diffusivity"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
            object.__setattr__(self, name, float(value))


NEUTRALITY_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class IonState:
    """Ion pair state at one instant.

    The stored ground truth is the concentration pair (c1, c2); rho and sigma
    are derived once at construction. Keeping (c1, c2) primary makes binary
    snapshots (which store c1 then c2) lossless round trips.
    """

    c1: RealField
    c2: RealField
    time: float = 0.0

    def __post_init__(self):
        if self.c1.grid != self.c2.grid:
            raise ValueError("c1 and c2 live on different grids")
        if not (np.isfinite(self.time) and self.time >= 0.0):
            raise ValueError(f"time must be nonnegative and finite, got {self.time}")
        object.__setattr__(self, "time", float(self.time))
        grid = self.c1.grid
        rho = RealField(grid, self.c1.values - self.c2.values)
        sigma = RealField(grid, self.c1.values + self.c2.values)
        scale = max(float(np.mean(sigma.values)), float(np.max(np.abs(rho.values))))
        if abs(rho.mean()) > NEUTRALITY_RTOL * max(scale, 1e-300):
            raise ChargeNeutralityError(
                f"mean charge {rho.mean():.3e} violates neutrality "
                f"(tolerance {NEUTRALITY_RTOL:.0e} relative to {scale:.3e})"
            )
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "sigma", sigma)

    @property
    def grid(self) -> Grid:
        return self.c1.grid

    @property
    def sigma_bar(self) -> float:
        return float(np.mean(self.sigma.values))

    @property
    def min_c1(self) -> float:
        return float(np.min(self.c1.values))

    @property
    def min_c2(self) -> float:
        return float(np.min(self.c2.values))

    @classmethod
    def from_rho_sigma(cls, rho: RealField, sigma: RealField, time: float = 0.0) -> "IonState":
        """Build a state from (rho, sigma); used by the time stepper."""
        c1 = RealField(rho.grid, 0.5 * (sigma.values + rho.values))
        c2 = RealField(rho.grid, 0.5 * (sigma.values - rho.values))
        return cls(c1, c2, time)


def from_concentrations(c1: RealField, c2: RealField) -> IonState:
    """Validate nonnegative, neutral concentrations and build the initial state.

    The discrete mean of rho = c1 - c2 is projected out exactly (split evenly
    between the two species) so that the periodic Poisson problem is solvable.
    """
    if c1.grid != c2.grid:
        raise ValueError("c1 and c2 live on different grids")
    for name, field in (("c1", c1), ("c2", c2)):
        low = np.argwhere(field.values < -1e-12)
        if low.size:
            idx = tuple(int(i) for i in low[0])
            raise ValueError(
                f"{name} is negative at index {idx}: {field.values[idx]!r}"
            )
    m1, m2 = c1.mean(), c2.mean()
    scale = max(abs(m1), abs(m2), 1.0)
    if abs(m1 - m2) > NEUTRALITY_RTOL * scale:
        raise ChargeNeutralityError(
            f"mean(c1) = {m1!r} and mean(c2) = {m2!r} differ by {m1 - m2:.3e}, "
            f"exceeding {NEUTRALITY_RTOL:.0e} relative"
        )
    shift = 0.5 * float(np.mean(c1.values - c2.values))
    c1p = RealField(c1.grid, c1.values - shift)
    c2p = RealField(c2.grid, c2.values + shift)
    return IonState(c1p, c2p, time=0.0)


@dataclass(frozen=True, eq=False)
class VelocitySolve:
    """Darcy velocity with its potential and, optionally, the recovered pressure."""

    u: tuple[RealField, ...]
    phi: RealField
    pressure: RealField | None = None


class _Rhs:
    """Work product of one right-hand-side evaluation (plain arrays)."""

    __slots__ = (
        "grid",
        "rho_hat",
        "sigma_hat",
        "phi_hat",
        "force_hat",
        "u_hat",
        "u",
        "grad_phi",
        "grad_rho",
        "grad_sigma",
        "rho_d",
        "sigma_d",
        "n_rho_hat",
        "n_sigma_hat",
    )


def _evaluate_arrays(rho_hat: np.ndarray, sigma_hat: np.ndarray, grid: Grid, params: Params) -> _Rhs:
    """Nonlinear right-hand side in spectral space, diffusion excluded.

    Every factor entering a pointwise product is dealiased first; products are
    transformed back and dealiased again. The k = 0 coefficient of both
    outputs is set to its analytic value 0 so spatial means are conserved
    exactly by the stepper.
    """
    mask = grid.dealias_mask
    kd = grid.deriv_k
    eps = params.epsilon
    npts = grid.npoints
    zero = (0,) * grid.dim

    def to_grid(c):
        return np.fft.ifftn(c).real * npts

    def to_hat(v):
        return np.fft.fftn(v) * (mask / npts)

    mean_charge = rho_hat[zero]
    l2 = np.sqrt(grid.volume * np.sum(np.abs(rho_hat) ** 2))
    if abs(mean_charge) > 1e-10 * l2:
        raise ChargeNeutralityError(
            f"mean charge {mean_charge!r} exceeds 1e-10 * ||rho||_L2 = {1e-10 * l2:.3e}"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_hat = rho_hat / (eps * grid.k2)
    phi_hat[zero] = 0.0

    grad_phi = [to_grid(1j * kd[a] * phi_hat * mask) for a in range(grid.dim)]
    grad_rho = [to_grid(1j * kd[a] * rho_hat * mask) for a in range(grid.dim)]
    grad_sigma = [to_grid(1j * kd[a] * sigma_hat * mask) for a in range(grid.dim)]
    rho_d = to_grid(rho_hat * mask)
    sigma_d = to_grid(sigma_hat * mask)

    force_hat = [to_hat(-rho_d * grad_phi[a]) for a in range(grid.dim)]
    k2d = sum(kd[a] ** 2 for a in range(grid.dim))
    inv_k2 = np.where(k2d > 0.0, 1.0 / np.where(k2d > 0.0, k2d, 1.0), 0.0)
    k_dot_f = sum(kd[a] * force_hat[a] for a in range(grid.dim))
    factor = k_dot_f * inv_k2
    u_hat = [force_hat[a] - kd[a] * factor for a in range(grid.dim)]
    u = [to_grid(u_hat[a]) for a in range(grid.dim)]

    adv_rho = sum(u[a] * grad_rho[a] for a in range(grid.dim))
    adv_sigma = sum(u[a] * grad_sigma[a] for a in range(grid.dim))
    drift_rho = sum(grad_sigma[a] * grad_phi[a] for a in range(grid.dim))
    drift_sigma = sum(grad_rho[a] * grad_phi[a] for a in range(grid.dim))
    D = params.diffusivity
    n_rho = -adv_rho + D * (drift_rho - sigma_d * rho_d / eps)
    n_sigma = -adv_sigma + D * (drift_sigma - rho_d * rho_d / eps)

    out = _Rhs()
    out.grid = grid
    out.rho_hat = rho_hat
    out.sigma_hat = sigma_hat
    out.phi_hat = phi_hat
    out.force_hat = force_hat
    out.u_hat = u_hat
    out.u = u
    out.grad_phi = grad_phi
    out.grad_rho = grad_rho
    out.grad_sigma = grad_sigma
    out.rho_d = rho_d
    out.sigma_d = sigma_d
    out.n_rho_hat = to_hat(n_rho)
    out.n_sigma_hat = to_hat(n_sigma)
    out.n_rho_hat[zero] = 0.0
    out.n_sigma_hat[zero] = 0.0
    return out


def _evaluate(state: IonState, params: Params) -> _Rhs:
    rho_hat = forward_transform(state.rho).coefficients.copy()
    sigma_hat = forward_transform(state.sigma).coefficients.copy()
    return _evaluate_arrays(rho_hat, sigma_hat, state.grid, params)


def potential(state: IonState, params: Params) -> RealField:
    """Zero-mean electric potential of the current charge density."""
    rho_hat = forward_transform(state.rho)
    return inverse_transform(solve_poisson(rho_hat, params.epsilon))


def velocity(state: IonState, params: Params, with_pressure: bool = False) -> VelocitySolve:
    """Darcy velocity u = LerayProject(-rho * grad(phi)), dealiased.

    When ``with_pressure`` is set, the zero-mean pressure solving
    Lap(p) = div(-rho * grad(phi)) is recovered as well.
    """
    rhs = _evaluate(state, params)
    grid = state.grid
    u = tuple(RealField(grid, rhs.u[a]) for a in range(grid.dim))
    phi = inverse_transform(SpectralField(grid, rhs.phi_hat))
    pressure = None
    if with_pressure:
        kd = grid.deriv_k
        k2d = sum(kd[a] ** 2 for a in range(grid.dim))
        inv_k2 = np.where(k2d > 0.0, 1.0 / np.where(k2d > 0.0, k2d, 1.0), 0.0)
        k_dot_f = sum(kd[a] * rhs.force_hat[a] for a in range(grid.dim))
        p_hat = -1j * k_dot_f * inv_k2
        pressure = inverse_transform(SpectralField(grid, p_hat))
    return VelocitySolve(u=u, phi=phi, pressure=pressure)


def tendency(state: IonState, params: Params) -> tuple[RealField, RealField]:
    """Instantaneous time derivatives (d rho/dt, d sigma/dt)."""
    rhs = _evaluate(state, params)
    grid = state.grid
    D = params.diffusivity
    drho_hat = rhs.n_rho_hat - D * grid.k2 * rhs.rho_hat
    dsigma_hat = rhs.n_sigma_hat - D * grid.k2 * rhs.sigma_hat
    return (
        inverse_transform(SpectralField(grid, drho_hat)),
        inverse_transform(SpectralField(grid, dsigma_hat)),
    )
