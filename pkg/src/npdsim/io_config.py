"""Run configuration, initial-condition generation, snapshots, and CSV output.

Configs are JSON with a strict schema: unknown keys are rejected and every
violation is reported with its path. Snapshots use the little-endian "NPD1"
binary layout (header, then c1 then c2 as row-major float64), which round
trips states bit-exactly. Diagnostics tables are CSV with a fixed header and
17-significant-digit decimal formatting so parsed-back values are exact to
the last ulp.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .model import IonState, Params, from_concentrations
from .spectral import TWO_PI, Grid, RealField
from .timestepper import StepperConfig
from .diagnostics import DiagnosticsRecord

__all__ = [
    "ConfigError",
    "SnapshotError",
    "DiagnosticsFormatError",
    "GridSection",
    "InitialSection",
    "OutputSection",
    "RunConfig",
    "parse_config",
    "emit_config",
    "load_config",
    "generate_initial",
    "initial_state",
    "write_snapshot",
    "read_snapshot",
    "CSV_COLUMNS",
    "append_diagnostics",
    "read_diagnostics",
]


class ConfigError(ValueError):
    """One or more configuration violations; ``errors`` lists them by path."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  {e}" for e in self.errors))


class SnapshotError(ValueError):
    """Malformed, truncated, or mismatched snapshot file."""


class DiagnosticsFormatError(ValueError):
    """Diagnostics CSV header does not match the documented schema."""


@dataclass(frozen=True)
class GridSection:
    dim: int
    n: tuple[int, ...]
    length: tuple[float, ...]


@dataclass(frozen=True)
class InitialSection:
    kind: str
    sigma_bar: float
    amplitude: float | None = None
    mode: tuple[int, ...] | None = None
    width: float | None = None
    k_max: int | None = None
    seed: int | None = None


@dataclass(frozen=True)
class OutputSection:
    directory: str | None = None
    snapshot_every: int = 0
    diagnostics_every: int = 1
    w1r: tuple[int, ...] = (2, 4)


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection
    params: Params
    stepper: StepperConfig
    initial_condition: InitialSection
    output: OutputSection

    def make_grid(self) -> Grid:
        return Grid(self.grid.n, self.grid.length)


_KINDS = ("equilibrium", "single_mode", "gaussian_blobs", "random_band")


def _want_number(obj, key, path, errors, required=True, default=None, positive=False):
    if key not in obj:
        if required:
            errors.append(f"{path}.{key}: missing required key")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{path}.{key}: must be a number, got {value!r}")
        return default
    value = float(value)
    if not math.isfinite(value):
        errors.append(f"{path}.{key}: must be finite, got {value!r}")
        return default
    if positive and value <= 0.0:
        errors.append(f"{path}.{key}: must be > 0")
        return default
    return value


def _want_int(obj, key, path, errors, required=True, default=None, minimum=None):
    if key not in obj:
        if required:
            errors.append(f"{path}.{key}: missing required key")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        errors.append(f"{path}.{key}: must be an integer, got {value!r}")
        return default
    if minimum is not None and value < minimum:
        errors.append(f"{path}.{key}: must be >= {minimum}, got {value}")
        return default
    return value


def _reject_unknown(obj, path, allowed, errors):
    for key in sorted(set(obj) - set(allowed)):
        errors.append(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration.

    Every violation is collected and reported with its path, e.g.
    "params.epsilon: must be > 0". Unknown keys anywhere are rejected.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: invalid JSON: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be an object"])
    errors: list[str] = []
    _reject_unknown(raw, "", ("grid", "params", "stepper", "initial_condition", "output"), errors)
    for key in ("grid", "params", "stepper", "initial_condition"):
        if key not in raw:
            errors.append(f"{key}: missing required section")
        elif not isinstance(raw[key], dict):
            errors.append(f"{key}: must be an object")
    if errors:
        raise ConfigError(errors)

    # grid
    g = raw["grid"]
    _reject_unknown(g, "grid", ("dim", "n", "length"), errors)
    dim = _want_int(g, "dim", "grid", errors, minimum=2)
    if dim is not None and dim not in (2, 3):
        errors.append(f"grid.dim: must be 2 or 3, got {dim}")
        dim = None

    def per_axis(key, default, check, coerce):
        if key not in g:
            if default is None:
                errors.append(f"grid.{key}: missing required key")
                return None
            return (default,) * (dim or 2)
        value = g[key]
        items = value if isinstance(value, list) else [value]
        if dim is not None and len(items) not in (1, dim):
            errors.append(f"grid.{key}: expected 1 or {dim} entries, got {len(items)}")
            return None
        out = []
        for item in items:
            ok, val = coerce(item)
            if not ok or not check(val):
                errors.append(f"grid.{key}: invalid entry {item!r}")
                return None
            out.append(val)
        if len(out) == 1 and dim is not None:
            out = out * dim
        return tuple(out)

    n = per_axis(
        "n",
        None,
        lambda v: v >= 8 and v % 2 == 0,
        lambda x: (isinstance(x, int) and not isinstance(x, bool), x if isinstance(x, int) else 0),
    )
    if n is None and "n" in g and not any(e.startswith("grid.n") for e in errors):
        errors.append("grid.n: points per axis must be even integers >= 8")
    length = per_axis(
        "length",
        TWO_PI,
        lambda v: math.isfinite(v) and v > 0,
        lambda x: (isinstance(x, (int, float)) and not isinstance(x, bool), float(x) if isinstance(x, (int, float)) else 0.0),
    )

    # params
    p = raw["params"]
    _reject_unknown(p, "params", ("epsilon", "diffusivity"), errors)
    epsilon = _want_number(p, "epsilon", "params", errors, positive=True)
    diffusivity = _want_number(p, "diffusivity", "params", errors, positive=True)

    # stepper
    s = raw["stepper"]
    _reject_unknown(
        s, "stepper", ("dt", "cfl_advective", "reaction_safety", "t_end", "max_steps"), errors
    )
    t_end = _want_number(s, "t_end", "stepper", errors, positive=True)
    dt = None
    if "dt" in s:
        if s["dt"] == "adaptive":
            dt = None
        else:
            dt = _want_number(s, "dt", "stepper", errors, positive=True)
    cfl = _want_number(s, "cfl_advective", "stepper", errors, required=False, default=0.5)
    safety = _want_number(s, "reaction_safety", "stepper", errors, required=False, default=0.5)
    for name, value in (("cfl_advective", cfl), ("reaction_safety", safety)):
        if value is not None and not (0.0 < value <= 1.0):
            errors.append(f"stepper.{name}: must lie in (0, 1], got {value}")
    max_steps = _want_int(s, "max_steps", "stepper", errors, required=False, default=1_000_000, minimum=1)

    # initial condition
    ic = raw["initial_condition"]
    kind = ic.get("kind")
    if kind not in _KINDS:
        errors.append(
            f"initial_condition.kind: must be one of {', '.join(_KINDS)}, got {kind!r}"
        )
        kind = None
    allowed = {"kind", "sigma_bar"}
    if kind == "single_mode":
        allowed |= {"amplitude", "mode"}
    elif kind == "gaussian_blobs":
        allowed |= {"amplitude", "width"}
    elif kind == "random_band":
        allowed |= {"amplitude", "k_max", "seed"}
    _reject_unknown(ic, "initial_condition", allowed, errors)
    sigma_bar = _want_number(ic, "sigma_bar", "initial_condition", errors, positive=True)
    amplitude = mode = width = k_max = seed = None
    if kind in ("single_mode", "gaussian_blobs", "random_band"):
        amplitude = _want_number(ic, "amplitude", "initial_condition", errors, positive=True)
    if kind == "single_mode":
        if "mode" in ic:
            value = ic["mode"]
            ok = (
                isinstance(value, list)
                and (dim is None or len(value) == dim)
                and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
                and any(v != 0 for v in value)
            )
            if not ok:
                errors.append(
                    f"initial_condition.mode: must be {dim or 'dim'} integers, not all zero"
                )
            else:
                mode = tuple(value)
        elif dim is not None:
            mode = (1,) + (0,) * (dim - 1)
    if kind == "gaussian_blobs":
        width = _want_number(ic, "width", "initial_condition", errors, required=False, positive=True)
        if width is None and length is not None:
            width = min(length) / 10.0
    if kind == "random_band":
        k_max = _want_int(ic, "k_max", "initial_condition", errors, minimum=1)
        seed = _want_int(ic, "seed", "initial_condition", errors, minimum=0)

    # output
    o = raw.get("output", {})
    if not isinstance(o, dict):
        errors.append("output: must be an object")
        o = {}
    _reject_unknown(o, "output", ("directory", "snapshot_every", "diagnostics_every", "w1r"), errors)
    directory = o.get("directory")
    if directory is not None and not isinstance(directory, str):
        errors.append(f"output.directory: must be a string, got {directory!r}")
        directory = None
    snapshot_every = _want_int(o, "snapshot_every", "output", errors, required=False, default=0, minimum=0)
    diagnostics_every = _want_int(o, "diagnostics_every", "output", errors, required=False, default=1, minimum=1)
    w1r = (2, 4)
    if "w1r" in o:
        value = o["w1r"]
        ok = (
            isinstance(value, list)
            and value
            and all(isinstance(v, int) and not isinstance(v, bool) and v >= 2 for v in value)
        )
        if not ok:
            errors.append("output.w1r: must be a nonempty list of integers >= 2")
        else:
            w1r = tuple(value)

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        grid=GridSection(dim=dim, n=n, length=length),
        params=Params(epsilon=epsilon, diffusivity=diffusivity),
        stepper=StepperConfig(
            t_end=t_end,
            dt=dt,
            cfl_advective=cfl,
            reaction_safety=safety,
            max_steps=max_steps,
        ),
        initial_condition=InitialSection(
            kind=kind,
            sigma_bar=sigma_bar,
            amplitude=amplitude,
            mode=mode,
            width=width,
            k_max=k_max,
            seed=seed,
        ),
        output=OutputSection(
            directory=directory,
            snapshot_every=snapshot_every,
            diagnostics_every=diagnostics_every,
            w1r=w1r,
        ),
    )


def emit_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig to canonical JSON (defaults materialized, keys sorted)."""
    ic = {"kind": cfg.initial_condition.kind, "sigma_bar": cfg.initial_condition.sigma_bar}
    for key in ("amplitude", "width", "k_max", "seed"):
        value = getattr(cfg.initial_condition, key)
        if value is not None:
            ic[key] = value
    if cfg.initial_condition.mode is not None:
        ic["mode"] = list(cfg.initial_condition.mode)
    doc = {
        "grid": {
            "dim": cfg.grid.dim,
            "n": list(cfg.grid.n),
            "length": list(cfg.grid.length),
        },
        "params": {
            "epsilon": cfg.params.epsilon,
            "diffusivity": cfg.params.diffusivity,
        },
        "stepper": {
            "dt": "adaptive" if cfg.stepper.dt is None else cfg.stepper.dt,
            "cfl_advective": cfg.stepper.cfl_advective,
            "reaction_safety": cfg.stepper.reaction_safety,
            "t_end": cfg.stepper.t_end,
            "max_steps": cfg.stepper.max_steps,
        },
        "initial_condition": ic,
        "output": {
            "snapshot_every": cfg.output.snapshot_every,
            "diagnostics_every": cfg.output.diagnostics_every,
            "w1r": list(cfg.output.w1r),
        },
    }
    if cfg.output.directory is not None:
        doc["output"]["directory"] = cfg.output.directory
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _enumerate_band_modes(dim: int, k_max: int):
    """Integer modes with 0 < |m| <= k_max, one per conjugate pair, in a fixed scan order."""
    for idx in np.ndindex(*((2 * k_max + 1,) * dim)):
        m = tuple(i - k_max for i in idx)
        if all(v == 0 for v in m):
            continue
        if sum(v * v for v in m) > k_max * k_max:
            continue
        first = next(v for v in m if v != 0)
        if first < 0:
            continue
        yield m


def _cosine_sum(grid: Grid, modes, rng) -> np.ndarray:
    """Deterministic band-limited noise: sum of cosines with PCG64-drawn
    amplitude and phase per mode, in the documented enumeration order."""
    mesh = grid.mesh()
    out = np.zeros(grid.shape)
    for m in modes:
        amp = rng.standard_normal()
        phase = rng.uniform(0.0, TWO_PI)
        arg = np.zeros(grid.shape)
        for axis, mj in enumerate(m):
            if mj:
                arg = arg + (TWO_PI * mj / grid.lengths[axis]) * mesh[axis]
        out += amp * np.cos(arg + phase)
    return out


def _periodized_gaussian(grid: Grid, center, width: float) -> np.ndarray:
    mesh = grid.mesh()
    out = np.zeros(grid.shape)
    images = [(-1, 0, 1)] * grid.dim
    for shifts in np.ndindex(*(3,) * grid.dim):
        r2 = np.zeros(grid.shape)
        for axis in range(grid.dim):
            offset = center[axis] + (shifts[axis] - 1) * grid.lengths[axis]
            r2 = r2 + (mesh[axis] - offset) ** 2
        out += np.exp(-r2 / (2.0 * width**2))
    return out


def generate_initial(cfg: RunConfig) -> tuple[RealField, RealField]:
    """Build (c1, c2) for the configured kind.

    All kinds produce nonnegative species with equal means (sigma_bar / 2
    each), so the result always satisfies the from_concentrations
    preconditions. ``amplitude`` is the peak |rho(0)|; amplitudes that would
    force a species negative are rejected with the maximal admissible value.
    """
    grid = cfg.make_grid()
    ic = cfg.initial_condition
    sb = ic.sigma_bar
    half = 0.5 * sb

    if ic.kind == "equilibrium":
        c = np.full(grid.shape, half)
        return RealField(grid, c), RealField(grid, c)

    if ic.kind == "single_mode":
        a = ic.amplitude
        if a > sb:
            raise ValueError(
                f"single_mode amplitude {a} exceeds the maximal admissible {sb} "
                "(c_i would go negative)"
            )
        for axis, mj in enumerate(ic.mode):
            if abs(mj) >= grid.shape[axis] // 2:
                raise ValueError(
                    f"mode {ic.mode} not representable on grid {grid.shape}"
                )
        mesh = grid.mesh()
        arg = np.zeros(grid.shape)
        for axis, mj in enumerate(ic.mode):
            if mj:
                arg = arg + (TWO_PI * mj / grid.lengths[axis]) * mesh[axis]
        bump = 0.5 * a * np.cos(arg)
        return RealField(grid, half + bump), RealField(grid, half - bump)

    if ic.kind == "gaussian_blobs":
        width = ic.width
        center_plus = [0.25 * grid.lengths[0]] + [0.5 * L for L in grid.lengths[1:]]
        center_minus = [0.75 * grid.lengths[0]] + [0.5 * L for L in grid.lengths[1:]]
        raw_p = _periodized_gaussian(grid, center_plus, width)
        raw_m = _periodized_gaussian(grid, center_minus, width)
        raw_p -= raw_p.mean()
        raw_m -= raw_m.mean()
        d_peak = float(np.max(np.abs(raw_p - raw_m)))
        worst = float(min(raw_p.min(), raw_m.min()))
        a_max = -half * d_peak / worst
        if ic.amplitude > a_max:
            raise ValueError(
                f"gaussian_blobs amplitude {ic.amplitude} exceeds the maximal "
                f"admissible {a_max:.6g} (c_i would go negative)"
            )
        scale = ic.amplitude / d_peak
        return (
            RealField(grid, half + scale * raw_p),
            RealField(grid, half + scale * raw_m),
        )

    if ic.kind == "random_band":
        if ic.k_max >= min(grid.shape) // 2:
            raise ValueError(
                f"random_band k_max {ic.k_max} not representable on grid {grid.shape}"
            )
        seq_rho, seq_sigma = np.random.SeedSequence(ic.seed).spawn(2)
        modes = list(_enumerate_band_modes(grid.dim, ic.k_max))
        d_rho = _cosine_sum(grid, modes, np.random.Generator(np.random.PCG64(seq_rho)))
        d_sig = _cosine_sum(grid, modes, np.random.Generator(np.random.PCG64(seq_sigma)))
        d_rho -= d_rho.mean()
        d_sig -= d_sig.mean()
        d_rho *= ic.amplitude / np.max(np.abs(d_rho))
        d_sig *= ic.amplitude / np.max(np.abs(d_sig))
        worst = float(min(np.min(d_sig + d_rho), np.min(d_sig - d_rho)))
        if sb + worst < 0.0:
            a_max = -ic.amplitude * sb / worst
            raise ValueError(
                f"random_band amplitude {ic.amplitude} exceeds the maximal "
                f"admissible {a_max:.6g} (c_i would go negative)"
            )
        return (
            RealField(grid, 0.5 * (sb + d_sig + d_rho)),
            RealField(grid, 0.5 * (sb + d_sig - d_rho)),
        )

    raise ValueError(f"unknown initial-condition kind {ic.kind!r}")


def initial_state(cfg: RunConfig) -> IonState:
    return from_concentrations(*generate_initial(cfg))


_MAGIC = b"NPD1"


def write_snapshot(state: IonState, path) -> None:
    """Write the NPD1 binary snapshot: header, then c1 then c2 (row-major <f8)."""
    grid = state.grid
    parts = [
        _MAGIC,
        struct.pack("<H", 1),
        struct.pack("<I", grid.dim),
        struct.pack(f"<{grid.dim}I", *grid.shape),
        struct.pack(f"<{grid.dim}d", *grid.lengths),
        struct.pack("<d", state.time),
        struct.pack("<I", 2),
    ]
    for name in ("c1", "c2"):
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
    parts.append(np.ascontiguousarray(state.c1.values).astype("<f8").tobytes())
    parts.append(np.ascontiguousarray(state.c2.values).astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_snapshot(path, expected_grid: Grid | None = None) -> IonState:
    """Read an NPD1 snapshot; rejects bad magic, shape mismatch, or truncation."""
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0

    def take(n, what):
        nonlocal offset
        if offset + n > len(data):
            raise SnapshotError(f"truncated snapshot: {what} missing at byte {offset}")
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    if take(4, "magic") != _MAGIC:
        raise SnapshotError("bad magic: not an NPD1 snapshot")
    (endian,) = struct.unpack("<H", take(2, "endianness marker"))
    if endian != 1:
        raise SnapshotError(f"unsupported endianness marker {endian}")
    (dim,) = struct.unpack("<I", take(4, "dimension"))
    if dim not in (2, 3):
        raise SnapshotError(f"unsupported dimension {dim}")
    shape = struct.unpack(f"<{dim}I", take(4 * dim, "shape"))
    lengths = struct.unpack(f"<{dim}d", take(8 * dim, "lengths"))
    (time,) = struct.unpack("<d", take(8, "time"))
    (nfields,) = struct.unpack("<I", take(4, "field count"))
    names = []
    for _ in range(nfields):
        (ln,) = struct.unpack("<I", take(4, "field name length"))
        names.append(take(ln, "field name").decode("utf-8"))
    if names != ["c1", "c2"]:
        raise SnapshotError(f"unexpected field names {names}, want ['c1', 'c2']")
    npoints = int(np.prod(shape))
    payload = take(2 * npoints * 8, "payload")
    if offset != len(data):
        raise SnapshotError(f"trailing bytes after payload ({len(data) - offset})")
    grid = Grid(shape, lengths)
    if expected_grid is not None and grid != expected_grid:
        raise SnapshotError(
            f"snapshot grid {dim}D {shape} does not match expected "
            f"{expected_grid.dim}D {expected_grid.shape}"
        )
    c1 = np.frombuffer(payload[: npoints * 8], dtype="<f8").reshape(shape)
    c2 = np.frombuffer(payload[npoints * 8 :], dtype="<f8").reshape(shape)
    return IonState(RealField(grid, c1), RealField(grid, c2), time=time)


CSV_COLUMNS = (
    "time,l2_rho,l2_sigma_dev,l3_rho,l4_rho,l6_rho,linf_rho,linf_sigma_dev,"
    "l2_grad_rho,l2_grad_sigma,lr_grad_rho,l2_grad_phi,linf_grad_phi,l2_u,"
    "lr_grad_u,h2_rho,h2_sigma,h3_rho,h3_sigma,min_c1,min_c2,mean_rho,"
    "mean_sigma,energy_residual,lyapunov_residual"
)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _csv_row(record: DiagnosticsRecord) -> str:
    r = max(record.lr_grad_rho)  # the largest configured W^{1,r} exponent
    values = [
        record.time,
        record.l2_rho,
        record.l2_sigma_dev,
        record.l3_rho,
        record.l4_rho,
        record.l6_rho,
        record.linf_rho,
        record.linf_sigma_dev,
        record.l2_grad_rho,
        record.l2_grad_sigma,
        record.lr_grad_rho[r],
        record.l2_grad_phi,
        record.linf_grad_phi,
        record.l2_u,
        record.lr_grad_u[r],
        record.h2_rho,
        record.h2_sigma,
        record.h3_rho,
        record.h3_sigma,
        record.min_c1,
        record.min_c2,
        record.mean_rho,
        record.mean_sigma,
        record.energy_residual,
        record.lyapunov_residual,
    ]
    return ",".join(_fmt(v) for v in values)


def append_diagnostics(record: DiagnosticsRecord, path) -> None:
    """Append one CSV row, writing the header first on an empty or new file."""
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    if exists:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
        if header != CSV_COLUMNS:
            raise DiagnosticsFormatError(
                f"existing header does not match the diagnostics schema: {header!r}"
            )
    with open(path, "a", encoding="utf-8") as fh:
        if not exists:
            fh.write(CSV_COLUMNS + "\n")
        fh.write(_csv_row(record) + "\n")


def read_diagnostics(path) -> dict[str, np.ndarray]:
    """Read a diagnostics CSV into column arrays keyed by header name."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_COLUMNS:
            raise DiagnosticsFormatError(f"unrecognized diagnostics header {header!r}")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    names = header.split(",")
    if any(len(row) != len(names) for row in rows):
        raise DiagnosticsFormatError("row length does not match the header")
    columns = np.array(rows, dtype=float) if rows else np.empty((0, len(names)))
    return {name: columns[:, i] for i, name in enumerate(names)}
