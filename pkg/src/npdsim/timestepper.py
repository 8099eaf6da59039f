"""Integrating-factor Heun time integration.

The stiff diffusion D*Laplacian is diagonal in Fourier space and applied
exactly through exp(-D|k|^2 dt); the transport, drift, and reaction terms are
advanced with a two-stage explicit rule, giving second order overall with no
linear solves. The step size is limited by the advective CFL and by the
explicit reaction term D*sigma/epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import IonState, Params, _evaluate, _evaluate_arrays
from .spectral import RealField, SpectralField, forward_transform, inverse_transform

__all__ = ["StepperConfig", "BlowUpError", "MaxStepsError", "step", "stable_dt", "integrate"]


@dataclass(frozen=True)
class StepperConfig:
    """Time-stepping controls. ``dt=None`` selects the adaptive step."""

    t_end: float
    dt: float | None = None
    cfl_advective: float = 0.5
    reaction_safety: float = 0.5
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (np.isfinite(self.t_end) and self.t_end >= 0.0):
            raise ValueError(f"t_end must be nonnegative and finite, got {self.t_end}")
        if self.dt is not None and not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be positive when fixed, got {self.dt}")
        for name in ("cfl_advective", "reaction_safety"):
            value = getattr(self, name)
            if not (0.0 < value <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")


class BlowUpError(RuntimeError):
    """The run produced non-finite values or lost positivity beyond the abort threshold."""

    def __init__(self, message: str, time: float, steps: int, last_diagnostics: dict | None = None):
        super().__init__(message)
        self.time = time
        self.steps = steps
        self.last_diagnostics = dict(last_diagnostics or {})

    def report(self) -> str:
        lines = [
            "blow-up/under-resolution detected",
            f"  reason: {self.args[0]}",
            f"  time: {self.time:.6g}  steps: {self.steps}",
        ]
        for key, value in self.last_diagnostics.items():
            lines.append(f"  last {key}: {value:.6g}")
        return "\n".join(lines)


class MaxStepsError(RuntimeError):
    """max_steps was exhausted before t_end; carries the partial state."""

    def __init__(self, state: IonState, steps: int):
        super().__init__(
            f"max_steps = {steps} exhausted at t = {state.time:.6g} before t_end"
        )
        self.state = state
        self.steps = steps


def stable_dt(state: IonState, params: Params, cfg: StepperConfig) -> float:
    """Largest admissible step: min of the advective CFL bound, the explicit
    reaction bound epsilon/(D*max sigma) with their safety factors, and the
    remaining time to t_end. Bounds with a vanishing denominator are dropped."""
    from .model import velocity

    bounds = []
    u = velocity(state, params).u
    umax = max(float(np.max(np.abs(comp.values))) for comp in u)
    if umax > 0.0:
        h = min(state.grid.spacings)
        bounds.append(cfg.cfl_advective * h / umax)
    sigma_max = float(np.max(state.sigma.values))
    if sigma_max > 0.0:
        bounds.append(cfg.reaction_safety * params.epsilon / (params.diffusivity * sigma_max))
    remaining = cfg.t_end - state.time
    if remaining > 0.0:
        bounds.append(remaining)
    if not bounds:
        raise ValueError("no positive step bound: state is at or past t_end")
    dt = min(bounds)
    if dt <= 0.0:
        raise ValueError(f"computed nonpositive dt = {dt}")
    return dt


def _step_arrays(rho_hat, sigma_hat, grid, params: Params, dt: float):
    """One integrating-factor Heun step on spectral arrays."""
    decay = np.exp(-params.diffusivity * grid.k2 * dt)
    s1 = _evaluate_arrays(rho_hat, sigma_hat, grid, params)
    rho_mid = decay * (rho_hat + dt * s1.n_rho_hat)
    sigma_mid = decay * (sigma_hat + dt * s1.n_sigma_hat)
    if not (np.all(np.isfinite(rho_mid)) and np.all(np.isfinite(sigma_mid))):
        raise FloatingPointError("non-finite predictor stage")
    s2 = _evaluate_arrays(rho_mid, sigma_mid, grid, params)
    rho_new = decay * rho_hat + 0.5 * dt * (decay * s1.n_rho_hat + s2.n_rho_hat)
    sigma_new = decay * sigma_hat + 0.5 * dt * (decay * s1.n_sigma_hat + s2.n_sigma_hat)
    if not (np.all(np.isfinite(rho_new)) and np.all(np.isfinite(sigma_new))):
        raise FloatingPointError("non-finite corrector stage")
    return rho_new, sigma_new


def step(state: IonState, dt: float, params: Params) -> IonState:
    """Advance one step of size dt. Spatial means of rho and sigma are
    preserved exactly (the integrating factor is 1 at k = 0 and the nonlinear
    term has zero mean)."""
    if not (np.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    grid = state.grid
    rho_hat = forward_transform(state.rho).coefficients.copy()
    sigma_hat = forward_transform(state.sigma).coefficients.copy()
    try:
        rho_new, sigma_new = _step_arrays(rho_hat, sigma_hat, grid, params, dt)
    except FloatingPointError as exc:
        raise BlowUpError(str(exc), time=state.time, steps=1) from exc
    rho = inverse_transform(SpectralField(grid, rho_new))
    sigma = inverse_transform(SpectralField(grid, sigma_new))
    return IonState.from_rho_sigma(rho, sigma, time=state.time + dt)


def integrate(
    state0: IonState,
    params: Params,
    cfg: StepperConfig,
    observer: Callable[[int, IonState], None] | None = None,
    positivity_abort: float = 1e-6,
) -> IonState:
    """Advance state0 to cfg.t_end, invoking ``observer(step_index, state)``
    after every step (and once with the initial state).

    Negative concentrations are monitored, never clipped; the run halts with
    a BlowUpError once min c_i < -positivity_abort * sigma_bar, which signals
    under-resolution rather than physics (the continuum solution stays
    nonnegative).
    """
    state = state0
    sigma_bar = state.sigma_bar
    last = _summary(state)
    if observer is not None:
        observer(0, state)
    steps = 0
    # tolerate round-off in the time accumulator when testing t < t_end
    t_eps = 1e-12 * max(cfg.t_end, 1.0)
    while state.time < cfg.t_end - t_eps:
        if steps >= cfg.max_steps:
            raise MaxStepsError(state, steps)
        if cfg.dt is not None:
            dt = min(cfg.dt, cfg.t_end - state.time)
        else:
            dt = stable_dt(state, params, cfg)
        try:
            state = step(state, dt, params)
        except BlowUpError as exc:
            raise BlowUpError(exc.args[0], time=exc.time, steps=steps, last_diagnostics=last) from None
        steps += 1
        min_c = min(state.min_c1, state.min_c2)
        if sigma_bar > 0.0 and min_c < -positivity_abort * sigma_bar:
            raise BlowUpError(
                f"concentration fell to {min_c:.3e}, below -{positivity_abort:.1e} * sigma_bar",
                time=state.time,
                steps=steps,
                last_diagnostics=last,
            )
        last = _summary(state)
        if observer is not None:
            observer(steps, state)
    return state


def _summary(state: IonState) -> dict:
    vol = state.grid.volume
    rho2 = float(np.mean(state.rho.values ** 2))
    dev = state.sigma.values - state.sigma_bar
    return {
        "time": state.time,
        "l2_rho": float(np.sqrt(vol * rho2)),
        "l2_sigma_dev": float(np.sqrt(vol * np.mean(dev ** 2))),
        "min_c": min(state.min_c1, state.min_c2),
    }
