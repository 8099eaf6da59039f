"""Norms, exact-identity residuals, decay-rate fits, and compliance reports.

The two identities checked along trajectories, in equality form with every
term kept, are

  energy:   1/2 d/dt ||grad phi||^2 + (1/eps)||u||^2 + (D/eps^2)||rho||^2
            + (D/eps) Int sigma |grad phi|^2 = 0
  lyapunov: 1/2 d/dt (||rho||^2 + ||sigma - mean||^2)
            + D (||grad rho||^2 + ||grad sigma||^2) + (D/eps) Int sigma rho^2 = 0

with the time derivatives evaluated analytically through the tendencies, so
the residuals measure the spatial discretization error, not the stepper's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import IonState, Params, _evaluate
from .spectral import RealField, SpectralField, inverse_transform

__all__ = [
    "LP_VALUES",
    "lp_norm",
    "sobolev_norm",
    "identity_residuals",
    "energy_identity_terms",
    "lyapunov_identity_terms",
    "curl_identity_residual",
    "velocity_bound",
    "DiagnosticsRecord",
    "DecayFit",
    "fit_decay_rate",
    "Verdict",
    "TheoremReport",
    "theorem_report",
]

LP_VALUES = (2.0, 3.0, 4.0, 6.0, math.inf)


def lp_norm(f: RealField, p: float) -> float:
    """Grid-quadrature L^p norm: (volume * mean |f|^p)^(1/p); max |f| for p = inf."""
    if p != math.inf and p < 1.0:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    a = np.abs(f.values)
    if p == math.inf:
        return float(np.max(a)) if a.size else 0.0
    return float((f.grid.volume * np.mean(a**p)) ** (1.0 / p))


def sobolev_norm(f: RealField, s: int) -> float:
    """H^s norm (volume * sum_k (1+|k|^2)^s |fhat|^2)^(1/2) for s in {1, 2, 3}."""
    if s not in (1, 2, 3):
        raise ValueError(f"s must be 1, 2 or 3, got {s}")
    grid = f.grid
    coeffs = np.fft.fftn(f.values) / grid.npoints
    weight = (1.0 + grid.k2) ** s
    return float(np.sqrt(grid.volume * np.sum(weight * np.abs(coeffs) ** 2)))


def _quad(grid, values) -> float:
    return grid.cell_volume * float(np.sum(values))


def lyapunov_identity_terms(state: IonState, params: Params) -> dict:
    """All terms of the L2 balance; ``residual`` should vanish for resolved states."""
    grid = state.grid
    rhs = _evaluate(state, params)
    D, eps = params.diffusivity, params.epsilon
    drho_hat = rhs.n_rho_hat - D * grid.k2 * rhs.rho_hat
    dsig_hat = rhs.n_sigma_hat - D * grid.k2 * rhs.sigma_hat
    npts = grid.npoints
    f_rho = np.fft.ifftn(drho_hat).real * npts
    f_sig = np.fft.ifftn(dsig_hat).real * npts
    sigma_dev = state.sigma.values - state.sigma_bar
    ddt = _quad(grid, state.rho.values * f_rho) + _quad(grid, sigma_dev * f_sig)
    dissipation = D * grid.volume * float(
        np.sum(grid.k2 * (np.abs(rhs.rho_hat) ** 2 + np.abs(rhs.sigma_hat) ** 2))
    )
    reaction = (D / eps) * _quad(grid, state.sigma.values * state.rho.values**2)
    residual = ddt + dissipation + reaction
    scale = max(abs(ddt), abs(dissipation), abs(reaction))
    return {
        "ddt": ddt,
        "dissipation": dissipation,
        "reaction": reaction,
        "residual": residual,
        "scale": scale,
        "relative": abs(residual) / scale if scale > 0.0 else 0.0,
    }


def energy_identity_terms(state: IonState, params: Params) -> dict:
    """All terms of the potential-energy balance, d/dt via the rho tendency."""
    grid = state.grid
    rhs = _evaluate(state, params)
    D, eps = params.diffusivity, params.epsilon
    drho_hat = rhs.n_rho_hat - D * grid.k2 * rhs.rho_hat
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_t_hat = drho_hat / (eps * grid.k2)
    phi_t_hat[(0,) * grid.dim] = 0.0
    phi_t = np.fft.ifftn(phi_t_hat).real * grid.npoints
    ddt = (1.0 / eps) * _quad(grid, state.rho.values * phi_t)
    u_sq = (1.0 / eps) * grid.volume * float(
        sum(np.sum(np.abs(uh) ** 2) for uh in rhs.u_hat)
    )
    rho_sq = (D / eps**2) * grid.volume * float(np.sum(np.abs(rhs.rho_hat) ** 2))
    grad_phi_sq = sum(g**2 for g in rhs.grad_phi)
    sig_phi = (D / eps) * _quad(grid, state.sigma.values * grad_phi_sq)
    residual = ddt + u_sq + rho_sq + sig_phi
    scale = max(abs(ddt), abs(u_sq), abs(rho_sq), abs(sig_phi))
    return {
        "ddt": ddt,
        "velocity": u_sq,
        "charge": rho_sq,
        "screening": sig_phi,
        "residual": residual,
        "scale": scale,
        "relative": abs(residual) / scale if scale > 0.0 else 0.0,
    }


def identity_residuals(state: IonState, params: Params) -> tuple[float, float]:
    """Relative residuals (energy, lyapunov) of the two balances."""
    return (
        energy_identity_terms(state, params)["relative"],
        lyapunov_identity_terms(state, params)["relative"],
    )


def curl_identity_residual(state: IonState, params: Params) -> tuple[float, float]:
    """L2 residual of curl(u) = -grad(rho) x grad(phi) and its natural scale.

    In 2D the identity is the scalar perp-divergence form; in 3D the full
    cross product. Returns (residual, 1 + ||grad rho||_2 * ||grad phi||_inf).
    """
    grid = state.grid
    rhs = _evaluate(state, params)
    mask = grid.dealias_mask
    kd = grid.deriv_k
    npts = grid.npoints

    def to_hat(v):
        return np.fft.fftn(v) * (mask / npts)

    gr, gp = rhs.grad_rho, rhs.grad_phi
    if grid.dim == 2:
        curl_u = 1j * kd[0] * rhs.u_hat[1] - 1j * kd[1] * rhs.u_hat[0]
        cross = gr[0] * gp[1] - gr[1] * gp[0]
        res_sq = np.sum(np.abs(curl_u + to_hat(cross)) ** 2)
    else:
        pairs = ((1, 2), (2, 0), (0, 1))
        res_sq = 0.0
        for i, (a, b) in enumerate(pairs):
            curl_i = 1j * kd[a] * rhs.u_hat[b] - 1j * kd[b] * rhs.u_hat[a]
            cross_i = gr[a] * gp[b] - gr[b] * gp[a]
            res_sq += np.sum(np.abs(curl_i + to_hat(cross_i)) ** 2)
    residual = float(np.sqrt(grid.volume * res_sq))
    grad_rho_l2 = float(
        np.sqrt(grid.cell_volume * np.sum(sum(g**2 for g in gr)))
    )
    grad_phi_inf = float(np.max(np.sqrt(sum(g**2 for g in gp))))
    return residual, 1.0 + grad_rho_l2 * grad_phi_inf


def velocity_bound(state: IonState, params: Params) -> tuple[float, float]:
    """(||u||_2, ||rho grad phi||_2); the projector guarantees the first <= second."""
    grid = state.grid
    rhs = _evaluate(state, params)
    l2_u = float(
        np.sqrt(grid.volume * sum(np.sum(np.abs(uh) ** 2) for uh in rhs.u_hat))
    )
    force_sq = sum((rhs.rho_d * g) ** 2 for g in rhs.grad_phi)
    l2_force = float(np.sqrt(grid.cell_volume * np.sum(force_sq)))
    return l2_u, l2_force


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Time-stamped norms, extrema, and identity residuals of one state."""

    time: float
    l2_rho: float
    l3_rho: float
    l4_rho: float
    l6_rho: float
    linf_rho: float
    l2_sigma_dev: float
    l3_sigma_dev: float
    l4_sigma_dev: float
    l6_sigma_dev: float
    linf_sigma_dev: float
    l2_grad_rho: float
    l2_grad_sigma: float
    lr_grad_rho: dict[int, float]
    l2_grad_phi: float
    linf_grad_phi: float
    l2_u: float
    lr_grad_u: dict[int, float]
    h2_rho: float
    h2_sigma: float
    h3_rho: float
    h3_sigma: float
    l2_lap_rho: float
    l2_lap_sigma: float
    min_c1: float
    min_c2: float
    mean_rho: float
    mean_sigma: float
    energy_residual: float
    lyapunov_residual: float
    curl_residual: float = 0.0
    curl_scale: float = 1.0
    l2_force: float = 0.0

    @classmethod
    def compute(
        cls, state: IonState, params: Params, w1r: tuple[int, ...] = (2, 4)
    ) -> "DiagnosticsRecord":
        grid = state.grid
        rhs = _evaluate(state, params)
        npts = grid.npoints
        sigma_bar = state.sigma_bar
        sigma_dev = RealField(grid, state.sigma.values - sigma_bar)

        def grad_mag(coeffs):
            sq = 0.0
            for axis in range(grid.dim):
                g = np.fft.ifftn(1j * grid.deriv_k[axis] * coeffs).real * npts
                sq = sq + g**2
            return np.sqrt(sq)

        grad_rho_mag = grad_mag(rhs.rho_hat)
        grad_sigma_mag = grad_mag(rhs.sigma_hat)
        grad_phi_mag = np.sqrt(sum(g**2 for g in rhs.grad_phi))
        grad_u_sq = 0.0
        for axis in range(grid.dim):
            for comp in rhs.u_hat:
                g = np.fft.ifftn(1j * grid.deriv_k[axis] * comp).real * npts
                grad_u_sq = grad_u_sq + g**2
        grad_u_mag = np.sqrt(grad_u_sq)

        def lp_of(values, p):
            return lp_norm(RealField(grid, values), p)

        weight2 = (1.0 + grid.k2) ** 2
        weight3 = (1.0 + grid.k2) ** 3
        rho_abs2 = np.abs(rhs.rho_hat) ** 2
        sig_dev_hat = rhs.sigma_hat.copy()
        sig_dev_hat[(0,) * grid.dim] = 0.0
        sig_abs2 = np.abs(sig_dev_hat) ** 2
        vol = grid.volume
        energy = energy_identity_terms(state, params)
        lyapunov = lyapunov_identity_terms(state, params)
        curl_res, curl_scale = curl_identity_residual(state, params)
        l2_u, l2_force = velocity_bound(state, params)
        return cls(
            time=state.time,
            l2_rho=lp_norm(state.rho, 2),
            l3_rho=lp_norm(state.rho, 3),
            l4_rho=lp_norm(state.rho, 4),
            l6_rho=lp_norm(state.rho, 6),
            linf_rho=lp_norm(state.rho, math.inf),
            l2_sigma_dev=lp_norm(sigma_dev, 2),
            l3_sigma_dev=lp_norm(sigma_dev, 3),
            l4_sigma_dev=lp_norm(sigma_dev, 4),
            l6_sigma_dev=lp_norm(sigma_dev, 6),
            linf_sigma_dev=lp_norm(sigma_dev, math.inf),
            l2_grad_rho=lp_of(grad_rho_mag, 2),
            l2_grad_sigma=lp_of(grad_sigma_mag, 2),
            lr_grad_rho={r: lp_of(grad_rho_mag, r) for r in w1r},
            l2_grad_phi=lp_of(grad_phi_mag, 2),
            linf_grad_phi=lp_of(grad_phi_mag, math.inf),
            l2_u=l2_u,
            lr_grad_u={r: lp_of(grad_u_mag, r) for r in w1r},
            h2_rho=float(np.sqrt(vol * np.sum(weight2 * rho_abs2))),
            h2_sigma=float(np.sqrt(vol * np.sum(weight2 * sig_abs2))),
            h3_rho=float(np.sqrt(vol * np.sum(weight3 * rho_abs2))),
            h3_sigma=float(np.sqrt(vol * np.sum(weight3 * sig_abs2))),
            l2_lap_rho=float(np.sqrt(vol * np.sum(grid.k2**2 * rho_abs2))),
            l2_lap_sigma=float(np.sqrt(vol * np.sum(grid.k2**2 * sig_abs2))),
            min_c1=state.min_c1,
            min_c2=state.min_c2,
            mean_rho=state.rho.mean(),
            mean_sigma=state.sigma.mean(),
            energy_residual=energy["relative"],
            lyapunov_residual=lyapunov["relative"],
            curl_residual=curl_res,
            curl_scale=curl_scale,
            l2_force=l2_force,
        )


@dataclass(frozen=True)
class DecayFit:
    """Least-squares exponential fit value(t) ~ prefactor * exp(-rate * t)."""

    rate: float
    prefactor: float
    window: tuple[float, float]
    residual: float
    samples: int = 0


def fit_decay_rate(times, values, window: tuple[float, float]) -> DecayFit:
    """Fit a line through (t, log value) on the window; rate is minus the slope.

    Requires at least 5 samples in the window, all strictly positive (decay
    into the round-off floor must be windowed out by the caller).
    """
    t0, t1 = window
    if not t1 > t0:
        raise ValueError(f"window must satisfy t1 > t0, got {window}")
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = (times >= t0) & (times <= t1)
    t, v = times[sel], values[sel]
    if t.size < 5:
        raise ValueError(f"need >= 5 samples in window, found {t.size}")
    if np.any(v <= 0.0):
        raise ValueError("nonpositive values in window; shrink the window")
    logv = np.log(v)
    slope, intercept = np.polyfit(t, logv, 1)
    fit = slope * t + intercept
    rms = float(np.sqrt(np.mean((logv - fit) ** 2)))
    return DecayFit(
        rate=float(-slope),
        prefactor=float(np.exp(intercept)),
        window=(float(t0), float(t1)),
        residual=rms,
        samples=int(t.size),
    )


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    detail: str
    category: str = "theorem"  # "theorem" | "resolution" | "report"


@dataclass(frozen=True)
class TheoremReport:
    verdicts: tuple[Verdict, ...]

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def to_text(self) -> str:
        lines = []
        for v in self.verdicts:
            status = "PASS" if v.passed else "FAIL"
            lines.append(f"{status} [{v.category}] {v.name}: {v.detail}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "passed": self.passed,
            "verdicts": [
                {
                    "name": v.name,
                    "passed": v.passed,
                    "category": v.category,
                    "detail": v.detail,
                }
                for v in self.verdicts
            ],
        }


def identities_report(
    records,
    residual_tol: float = 1e-6,
    curl_tol: float = 1e-10,
) -> TheoremReport:
    """Pointwise-in-time checks of the exact discrete relations at every record:
    mean conservation, the energy and Lyapunov balances, the curl identity of
    the Darcy velocity, and the Leray L2 contraction."""
    records = list(records)
    if not records:
        raise ValueError("no diagnostics records")
    sigma_bar = float(records[0].mean_sigma)
    scale = max(sigma_bar, 1e-300)
    verdicts = []
    max_mean_rho = max(abs(r.mean_rho) for r in records)
    max_drift = max(abs(r.mean_sigma - sigma_bar) for r in records)
    verdicts.append(
        Verdict(
            "charge neutrality and sigma conservation",
            max_mean_rho <= 1e-10 * scale and max_drift <= 1e-10 * scale,
            f"max |mean rho| {max_mean_rho:.3e}, max sigma drift {max_drift:.3e} "
            f"(tol {1e-10 * scale:.1e})",
        )
    )
    for name in ("energy_residual", "lyapunov_residual"):
        worst = max(getattr(r, name) for r in records)
        verdicts.append(
            Verdict(
                f"{name.replace('_', ' ')} (equality form)",
                worst <= residual_tol,
                f"max relative residual {worst:.3e} vs {residual_tol:.1e} "
                "(failures indicate under-resolution)",
                category="resolution",
            )
        )
    worst_curl = max(r.curl_residual / r.curl_scale for r in records)
    verdicts.append(
        Verdict(
            "curl identity of the Darcy velocity",
            worst_curl <= curl_tol,
            f"max residual/scale {worst_curl:.3e} vs {curl_tol:.1e}",
        )
    )
    worst_ratio = 0.0
    contraction = True
    for r in records:
        if r.l2_force > 0.0:
            worst_ratio = max(worst_ratio, r.l2_u / r.l2_force)
            contraction = contraction and r.l2_u <= r.l2_force * (1.0 + 1e-12)
        else:
            contraction = contraction and r.l2_u <= 1e-300
    verdicts.append(
        Verdict(
            "velocity L2 contraction ||u|| <= ||rho grad phi||",
            contraction,
            f"max ratio {worst_ratio:.12g}",
        )
    )
    return TheoremReport(tuple(verdicts))


_FLOOR_FRACTION = 1e-13


def _try_fit(times, values, window) -> DecayFit | None:
    """Fit after pruning the round-off floor; None when no decay signal exists."""
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    peak = float(np.max(values)) if values.size else 0.0
    if peak <= 0.0:
        return None
    keep = values > _FLOOR_FRACTION * peak
    try:
        return fit_decay_rate(times[keep], values[keep], window)
    except ValueError:
        return None


def theorem_report(
    records,
    params: Params,
    rate_window: tuple[float, float] | None = None,
    positivity_tol: float = 1e-8,
    residual_tol: float = 1e-6,
    poincare_margin: float = 0.05,
) -> TheoremReport:
    """Evaluate decay, boundedness, positivity, and conservation claims.

    Decay rates are fitted on ``rate_window`` (default: the last three
    quarters of the run); series that are identically at the round-off floor
    report "no decay signal" and pass trivially. The squared-norm sum
    ||rho||^2 + ||sigma - mean||^2 must decay at least at 2*D*(1 - margin),
    the discrete counterpart of the Poincare-rate bound on the 2*pi torus.
    """
    records = list(records)
    if not records:
        raise ValueError("no diagnostics records")
    times = np.array([r.time for r in records])
    if rate_window is None:
        t0, t1 = float(times[0]), float(times[-1])
        rate_window = (t0 + 0.25 * (t1 - t0), t1)
    D = params.diffusivity
    verdicts: list[Verdict] = []

    def series(attr):
        return np.array([getattr(r, attr) for r in records])

    # (a) decay rates
    x_sq = series("l2_rho") ** 2 + series("l2_sigma_dev") ** 2
    fit = _try_fit(times, x_sq, rate_window)
    threshold = 2.0 * D * (1.0 - poincare_margin)
    if fit is None:
        verdicts.append(
            Verdict("l2 squared-sum decay rate", True, "no decay signal (series at floor)")
        )
    else:
        verdicts.append(
            Verdict(
                "l2 squared-sum decay rate",
                fit.rate >= threshold,
                f"rate {fit.rate:.6g} vs threshold {threshold:.6g} (2D less {poincare_margin:.0%})",
            )
        )
    decay_series = {
        "l2_rho": series("l2_rho"),
        "l4_rho": series("l4_rho"),
        "l6_rho": series("l6_rho"),
        "linf_rho": series("linf_rho"),
        "l2_sigma_dev": series("l2_sigma_dev"),
        "l4_sigma_dev": series("l4_sigma_dev"),
        "l6_sigma_dev": series("l6_sigma_dev"),
        "linf_sigma_dev": series("linf_sigma_dev"),
        "linf_grad_phi": series("linf_grad_phi"),
    }
    fits = {}
    for name, vals in decay_series.items():
        f = _try_fit(times, vals, rate_window)
        fits[name] = f
        if f is None:
            verdicts.append(Verdict(f"decay of {name}", True, "no decay signal"))
        else:
            verdicts.append(
                Verdict(f"decay of {name}", f.rate > 0.0, f"fitted rate {f.rate:.6g}")
            )
    # uniform-in-p decay of sigma deviation
    base = fits["l2_sigma_dev"]
    if base is None:
        verdicts.append(Verdict("uniform-in-p sigma decay", True, "no decay signal"))
    else:
        ratios = []
        ok = True
        for name in ("l4_sigma_dev", "l6_sigma_dev", "linf_sigma_dev"):
            f = fits[name]
            if f is None:
                continue
            ratios.append(f"{name}: {f.rate / base.rate:.3f}")
            ok = ok and f.rate >= 0.5 * base.rate
        verdicts.append(
            Verdict(
                "uniform-in-p sigma decay",
                ok,
                f"rate/rate_p2 >= 0.5 required; {'; '.join(ratios) or 'single series'}",
            )
        )

    # (b) boundedness
    for name in ("l2_grad_rho", "l2_grad_sigma", "h2_rho", "h2_sigma", "h3_rho", "h3_sigma"):
        vals = series(name)
        finite = bool(np.all(np.isfinite(vals)))
        verdicts.append(
            Verdict(
                f"boundedness of {name}",
                finite,
                f"max over run {np.max(vals):.6g}" if finite else "non-finite values",
            )
        )

    # (c) dissipation time integrals
    for name in ("l2_lap_rho", "l2_lap_sigma", "l2_grad_rho", "l2_grad_sigma"):
        integral = float(np.trapezoid(series(name) ** 2, times)) if times.size > 1 else 0.0
        verdicts.append(
            Verdict(
                f"time integral of {name}^2",
                bool(np.isfinite(integral)),
                f"{integral:.6g}",
                category="report",
            )
        )

    # (d) positivity
    sigma_bar = float(records[0].mean_sigma)
    min_c = min(min(r.min_c1, r.min_c2) for r in records)
    verdicts.append(
        Verdict(
            "concentration positivity",
            min_c >= -positivity_tol * max(sigma_bar, 1e-300),
            f"min c_i {min_c:.6g} vs -{positivity_tol:.1e} * sigma_bar",
        )
    )

    # (e) conservation
    max_mean_rho = float(np.max(np.abs(series("mean_rho"))))
    mean_sigma = series("mean_sigma")
    max_sigma_drift = float(np.max(np.abs(mean_sigma - mean_sigma[0])))
    scale = max(sigma_bar, 1e-300)
    verdicts.append(
        Verdict(
            "mean conservation",
            max_mean_rho <= 1e-10 * scale and max_sigma_drift <= 1e-10 * scale,
            f"max |mean rho| {max_mean_rho:.3e}, max sigma drift {max_sigma_drift:.3e}",
        )
    )

    # identity residuals (resolution quality, not a theorem claim)
    for name in ("energy_residual", "lyapunov_residual"):
        worst = float(np.max(series(name)))
        verdicts.append(
            Verdict(
                f"max {name}",
                worst <= residual_tol,
                f"{worst:.3e} vs {residual_tol:.1e} (failures indicate under-resolution)",
                category="resolution",
            )
        )

    # monotone decay of the Lyapunov functional at record cadence
    drops = np.diff(x_sq)
    tol = 1e-12 * max(float(x_sq[0]), 1e-300)
    verdicts.append(
        Verdict(
            "lyapunov functional non-increasing",
            bool(np.all(drops <= tol)),
            f"max increase between records {float(np.max(drops, initial=0.0)):.3e}",
        )
    )
    return TheoremReport(tuple(verdicts))
