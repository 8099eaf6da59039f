"""Command-line front end: run, verify, convergence, decay-fit.

Exit codes are a stable contract: 0 success, 1 usage or configuration error,
2 numerical failure (blow-up, positivity loss, or step budget exhausted).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from .diagnostics import (
    DiagnosticsRecord,
    TheoremReport,
    Verdict,
    fit_decay_rate,
    identities_report,
    theorem_report,
)
from .io_config import (
    ConfigError,
    GridSection,
    RunConfig,
    append_diagnostics,
    emit_config,
    initial_state,
    load_config,
    read_diagnostics,
    write_snapshot,
)
from .model import IonState, Params
from .spectral import RealField, resample
from .timestepper import BlowUpError, MaxStepsError, StepperConfig, integrate, stable_dt, step

__all__ = ["main", "stability_distances"]


class _Recorder:
    """Observer that collects records at a cadence and streams CSV/snapshots."""

    def __init__(self, params, w1r, every, csv_path=None, snapshot_every=0, out_dir=None):
        self.params = params
        self.w1r = w1r
        self.every = max(int(every), 1)
        self.csv_path = csv_path
        self.snapshot_every = int(snapshot_every)
        self.out_dir = out_dir
        self.records: list[DiagnosticsRecord] = []

    def __call__(self, step_index: int, state: IonState) -> None:
        if step_index % self.every == 0:
            record = DiagnosticsRecord.compute(state, self.params, self.w1r)
            self.records.append(record)
            if self.csv_path is not None:
                append_diagnostics(record, self.csv_path)
        if self.snapshot_every and self.out_dir and step_index % self.snapshot_every == 0:
            write_snapshot(state, os.path.join(self.out_dir, f"snapshot_{step_index:06d}.npd"))


def _run_trajectory(cfg: RunConfig, out_dir: str | None):
    state0 = initial_state(cfg)
    csv_path = os.path.join(out_dir, "diagnostics.csv") if out_dir else None
    if csv_path and os.path.exists(csv_path):
        os.remove(csv_path)
    recorder = _Recorder(
        cfg.params,
        cfg.output.w1r,
        cfg.output.diagnostics_every,
        csv_path=csv_path,
        snapshot_every=cfg.output.snapshot_every,
        out_dir=out_dir,
    )
    final = integrate(state0, cfg.params, cfg.stepper, observer=recorder)
    return final, recorder.records


def _prepare_out(args, cfg) -> str | None:
    out = getattr(args, "out", None) or cfg.output.directory
    if out:
        os.makedirs(out, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = _prepare_out(args, cfg)
    if out is None:
        print("error: no output directory (use --out or output.directory)", file=sys.stderr)
        return 1
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(emit_config(cfg))
    final, records = _run_trajectory(cfg, out)
    last = records[-1] if records else DiagnosticsRecord.compute(final, cfg.params, cfg.output.w1r)
    print(
        f"done t={final.time:.6g} l2_rho={last.l2_rho:.6g} "
        f"l2_sigma_dev={last.l2_sigma_dev:.6g} min_c1={final.min_c1:.6g} "
        f"min_c2={final.min_c2:.6g}"
    )
    return 0


def _distance(a: IonState, b: IonState) -> float:
    vol = a.grid.volume
    drho = float(np.mean((a.rho.values - b.rho.values) ** 2))
    dsig = float(np.mean((a.sigma.values - b.sigma.values) ** 2))
    return math.sqrt(vol * (drho + dsig))


def stability_distances(cfg: RunConfig, delta: float = 1e-6, record_every: int = 1):
    """Evolve the configured state and a copy perturbed by L2 distance delta;
    return (times, distances) on a shared fixed-dt time lattice."""
    base = initial_state(cfg)
    grid = base.grid
    mesh0 = grid.mesh()[0]
    bump = np.cos((2.0 * np.pi / grid.lengths[0]) * mesh0)
    bump_l2 = math.sqrt(grid.volume * float(np.mean(bump**2)))
    scale = delta / bump_l2
    other = IonState.from_rho_sigma(
        RealField(grid, base.rho.values + scale * bump),
        RealField(grid, base.sigma.values),
        time=base.time,
    )
    dt = 0.5 * min(
        stable_dt(base, cfg.params, cfg.stepper),
        stable_dt(other, cfg.params, cfg.stepper),
    )
    nsteps = max(int(math.ceil(cfg.stepper.t_end / dt)), 1)
    dt = cfg.stepper.t_end / nsteps
    times = [0.0]
    distances = [_distance(base, other)]
    for i in range(1, nsteps + 1):
        base = step(base, dt, cfg.params)
        other = step(other, dt, cfg.params)
        if i % record_every == 0 or i == nsteps:
            times.append(base.time)
            distances.append(_distance(base, other))
    return np.array(times), np.array(distances)


def _stability_verdicts(cfg: RunConfig, delta: float = 1e-6) -> list[Verdict]:
    times, dist = stability_distances(cfg, delta)
    d0 = dist[0]
    early = dist[times <= 1.0]
    growth = float(np.max(early) / d0)
    verdicts = [
        Verdict(
            "stability: bounded growth for t <= 1",
            growth <= 100.0,
            f"max distance/delta {growth:.4g} (limit 100)",
        )
    ]
    late = dist[times >= 2.0]
    if late.size >= 3:
        diffs = np.diff(late)
        tol = 1e-9 * float(np.max(late))
        decreasing = bool(np.all(diffs <= tol)) and late[-1] < late[0]
        verdicts.append(
            Verdict(
                "stability: contraction for t >= 2",
                decreasing,
                f"distance {late[0]:.4g} -> {late[-1]:.4g}",
            )
        )
    return verdicts


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    out = _prepare_out(args, cfg)
    _, records = _run_trajectory(cfg, out)
    verdicts: list[Verdict] = []
    if args.suite in ("identities", "all"):
        verdicts.extend(identities_report(records).verdicts)
    if args.suite in ("theorems", "all"):
        verdicts.extend(theorem_report(records, cfg.params).verdicts)
        verdicts.extend(_stability_verdicts(cfg))
    report = TheoremReport(tuple(verdicts))
    print(report.to_text())
    if out:
        with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.to_text() + "\n")
        with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0 if report.passed else 2


def _final_state(cfg: RunConfig) -> IonState:
    return integrate(initial_state(cfg), cfg.params, cfg.stepper)


def _time_ladder(cfg: RunConfig, rungs: int = 3):
    state0 = initial_state(cfg)
    dt0 = cfg.stepper.dt
    if dt0 is None:
        dt0 = 0.5 * stable_dt(state0, cfg.params, cfg.stepper)
    # snap to an integer number of steps so every rung hits t_end exactly
    steps0 = max(int(math.ceil(cfg.stepper.t_end / dt0)), 2)
    dts = [cfg.stepper.t_end / (steps0 * 2**i) for i in range(rungs + 1)]
    finals = []
    for dt in dts:
        run_cfg = dataclasses.replace(cfg.stepper, dt=dt)
        finals.append(integrate(state0, cfg.params, run_cfg))
    reference = finals[-1]
    errors = [_distance(f, reference) for f in finals[:-1]]
    orders = [
        math.log2(errors[i] / errors[i + 1]) if errors[i + 1] > 0 else math.inf
        for i in range(len(errors) - 1)
    ]
    return dts, errors, orders


def _space_ladder(cfg: RunConfig, rungs: int = 3):
    shapes = [
        tuple(n * 2**i for n in cfg.grid.n) for i in range(rungs + 1)
    ]
    ref_cfg = dataclasses.replace(
        cfg, grid=GridSection(cfg.grid.dim, shapes[-1], cfg.grid.length)
    )
    dt = cfg.stepper.dt
    if dt is None:
        dt = 0.5 * stable_dt(initial_state(ref_cfg), cfg.params, cfg.stepper)
    finals = []
    for shape in shapes:
        rung_cfg = dataclasses.replace(
            cfg,
            grid=GridSection(cfg.grid.dim, shape, cfg.grid.length),
            stepper=dataclasses.replace(cfg.stepper, dt=dt),
        )
        finals.append(_final_state(rung_cfg))
    reference = finals[-1]
    ref_grid = reference.grid
    scale = math.sqrt(
        ref_grid.volume
        * float(np.mean(reference.rho.values**2) + np.mean(reference.sigma.values**2))
    )
    errors = []
    for final in finals[:-1]:
        rho_i = resample(final.rho, ref_grid)
        sig_i = resample(final.sigma, ref_grid)
        diff = math.sqrt(
            ref_grid.volume
            * float(
                np.mean((rho_i.values - reference.rho.values) ** 2)
                + np.mean((sig_i.values - reference.sigma.values) ** 2)
            )
        )
        errors.append(diff / scale)
    return shapes, errors


_SPATIAL_FLOOR = 1e-12


def cmd_convergence(args) -> int:
    cfg = load_config(args.config)
    if args.axis == "time":
        dts, errors, orders = _time_ladder(cfg)
        print("dt           error        order")
        for i, (dt, err) in enumerate(zip(dts[:-1], errors)):
            order = f"{orders[i - 1]:.3f}" if i > 0 else "-"
            print(f"{dt:<12.6g} {err:<12.6g} {order}")
        ok = all(o >= 1.9 for o in orders)
        print(f"temporal self-convergence orders: {['%.3f' % o for o in orders]}")
        return 0 if ok else 2
    shapes, errors = _space_ladder(cfg)
    print("n            relative error")
    for shape, err in zip(shapes[:-1], errors):
        print(f"{'x'.join(map(str, shape)):<12} {err:.6g}")
    ok = True
    for coarse, fine in zip(errors, errors[1:]):
        if coarse <= _SPATIAL_FLOOR and fine <= _SPATIAL_FLOOR:
            continue
        ok = ok and (coarse / max(fine, 1e-300) >= 10.0 or fine <= _SPATIAL_FLOOR)
    print(f"spectral decay (>=10x per rung until {_SPATIAL_FLOOR:g} floor): {'ok' if ok else 'violated'}")
    return 0 if ok else 2


def cmd_decay_fit(args) -> int:
    columns = read_diagnostics(args.diagnostics)
    if args.column not in columns:
        names = ", ".join(name for name in columns if name != "time")
        print(f"error: column {args.column!r} not found; available: {names}", file=sys.stderr)
        return 1
    t0, t1 = args.window
    try:
        fit = fit_decay_rate(columns["time"], columns[args.column], (t0, t1))
    except ValueError as exc:
        print(f"error: {exc} (try a shorter window ending before the floor)", file=sys.stderr)
        return 1
    print(f"column: {args.column}")
    print(f"window: [{fit.window[0]:.17g}, {fit.window[1]:.17g}] ({fit.samples} samples)")
    print(f"rate: {fit.rate:.17g}")
    print(f"prefactor: {fit.prefactor:.17g}")
    print(f"fit residual (rms log): {fit.residual:.17g}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npd",
        description="Pseudo-spectral two-species electrodiffusion in porous media",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a configuration to t_end")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", help="output directory (overrides output.directory)")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="run and check identities/theorem claims")
    p_verify.add_argument("--config", required=True)
    p_verify.add_argument("--suite", choices=("identities", "theorems", "all"), default="all")
    p_verify.add_argument("--out")
    p_verify.set_defaults(func=cmd_verify)

    p_conv = sub.add_parser("convergence", help="refinement ladder study")
    p_conv.add_argument("--config", required=True)
    p_conv.add_argument("--axis", choices=("space", "time"), required=True)
    p_conv.set_defaults(func=cmd_convergence)

    p_fit = sub.add_parser("decay-fit", help="fit an exponential rate to a CSV column")
    p_fit.add_argument("--diagnostics", required=True)
    p_fit.add_argument("--column", required=True)
    p_fit.add_argument("--window", nargs=2, type=float, required=True, metavar=("T0", "T1"))
    p_fit.set_defaults(func=cmd_decay_fit)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BlowUpError as exc:
        print(exc.report(), file=sys.stderr)
        return 2
    except MaxStepsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
