"""Pseudo-spectral simulation of two-species ionic electrodiffusion coupled
to Darcy flow on periodic tori, with diagnostics that verify the system's
exact balances and decay estimates numerically."""

from .spectral import (
    Grid,
    RealField,
    SpectralField,
    NonFiniteFieldError,
    HermitianSymmetryError,
    ChargeNeutralityError,
    forward_transform,
    inverse_transform,
    gradient,
    divergence,
    curl,
    laplacian,
    dealias,
    solve_poisson,
    leray_project,
    resample,
)
from .model import IonState, Params, VelocitySolve, from_concentrations, potential, tendency, velocity
from .timestepper import BlowUpError, MaxStepsError, StepperConfig, integrate, stable_dt, step
from .diagnostics import (
    DecayFit,
    DiagnosticsRecord,
    TheoremReport,
    Verdict,
    fit_decay_rate,
    identity_residuals,
    identities_report,
    lp_norm,
    sobolev_norm,
    theorem_report,
)
from .io_config import (
    ConfigError,
    RunConfig,
    SnapshotError,
    append_diagnostics,
    emit_config,
    generate_initial,
    initial_state,
    load_config,
    parse_config,
    read_diagnostics,
    read_snapshot,
    write_snapshot,
)

__version__ = "0.1.0"
