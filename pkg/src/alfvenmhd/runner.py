"""Run orchestration: simulations, offline diagnosis, sweeps and dispersion fits."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import spectral as sp
from .characteristics import LabelFields, advect_labels, compute_weights, separation_metrics
from .config import SimConfig, validate, with_value
from .diagnostics import (DiagRecord, DiffusionAccumulator, FluxAccumulator, LadderConfig,
                          StateSquares, csv_columns, decay_schedule, decomposition_energies,
                          dispersion_fit, energy_lowest, energy_order, initial_weighted_energy,
                          low_freq_mass, record_row, total_energy)
from .errors import (AlfvenError, CFLViolation, ConfigValidationError, NotMonotone,
                     SnapshotError)
from .snapshot import Snapshot, read_snapshot, write_snapshot
from .solver import (SPECIES, DecompositionState, ElsasserState, SolverParams,
                     init_single_mode, init_wave_packet, mode_amplitude, step,
                     step_with_decomposition)
from .spectral import Grid

SCHEMA_VERSION = 1
CSV_NAME = "diagnostics.csv"
DIAGNOSE_CSV_NAME = "diagnose.csv"
MANIFEST_NAME = "manifest.json"
SWEEP_AXES = ("mu", "L", "amplitude")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CFL = 2
EXIT_NOT_MONOTONE = 3
EXIT_IO = 4
EXIT_HEADER = 5


# -- setup ------------------------------------------------------------------

def make_grid(cfg: SimConfig) -> Grid:
    return Grid(cfg.n, cfg.L)


def ladder_of(cfg: SimConfig) -> LadderConfig:
    return LadderConfig(cfg.K, cfg.n_star)


def initial_state(cfg: SimConfig) -> ElsasserState:
    grid = make_grid(cfg)
    if cfg.ic == "zero":
        return ElsasserState.zero(grid)
    if cfg.ic == "single_mode":
        return init_single_mode(grid, cfg.mode, cfg.mode_species, cfg.amplitude)
    species = cfg.ic.split("_", 1)[1]
    return init_wave_packet(grid, cfg.amplitude, cfg.envelope_sigma, species,
                            cfg.carrier, cfg.seed)


def resolve_dt(cfg: SimConfig, state0: ElsasserState) -> tuple[float, int]:
    """Step size and step count with ``nsteps * dt`` landing on ``t_final``.

    ``auto`` takes min(dx/8, CFL bound at t = 0); an explicit dt is shrunk
    (never enlarged) so that a whole number of steps fits.
    """
    grid = state0.grid
    if cfg.dt is None:
        target = min(grid.dx / 8.0, cfg.cfl * grid.dx / (1.0 + state0.max_speed()))
    else:
        target = cfg.dt
    if cfg.t_final == 0:
        return target, 0
    nsteps = max(1, math.ceil(cfg.t_final / target - 1e-9))
    return cfg.t_final / nsteps, nsteps


def default_low_freq_h(grid: Grid) -> float:
    """Half of the dealiased band, (n/6) k0."""
    return grid.n / 6.0 * grid.k0


def checkpoint_steps(cfg: SimConfig, dt: float, nsteps: int) -> list[int]:
    return sorted({min(nsteps, int(round(t / dt))) for t in cfg.checkpoint_times})


# -- per-sample diagnostics -------------------------------------------------

def instant_record(state: ElsasserState, labels: LabelFields, cfg: SimConfig,
                   ladder: LadderConfig, squares: StateSquares | None = None) -> DiagRecord:
    """Fields of a DiagRecord that depend only on the current (state, labels).

    Shared by in-run sampling and offline diagnosis so both produce the same
    numbers from the same arrays.
    """
    squares = squares or StateSquares(state)
    grid = state.grid
    e_plus, e_minus = energy_lowest(state, labels)
    e_k = [energy_order(state, labels, k, ladder, squares) for k in range(ladder.K + 1)]
    h = cfg.low_freq_h if cfg.low_freq_h is not None else default_low_freq_h(grid)
    rec = DiagRecord(
        t=state.t, E_plus=e_plus, E_minus=e_minus,
        E_k_plus=[v[0] for v in e_k], E_k_minus=[v[1] for v in e_k],
        total_E=total_energy(state, ladder.K, cfg.mu),
        separation=separation_metrics(labels),
        low_freq_mass=low_freq_mass(state, h),
    )
    if cfg.ic == "single_mode":
        a = mode_amplitude(state, cfg.mode_species, cfg.mode)
        rec.mode_amplitude = abs(a) / abs(cfg.amplitude) if cfg.amplitude else 0.0
    return rec


@dataclass
class _Tracker:
    """Accumulates F, D and the basic-energy residual across samples."""

    cfg: SimConfig
    ladder: LadderConfig
    flux: FluxAccumulator
    diff: DiffusionAccumulator
    l2_start: dict = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: SimConfig, grid: Grid, mu: float) -> "_Tracker":
        ladder = ladder_of(cfg)
        return cls(cfg, ladder, FluxAccumulator.create(grid.L, ladder),
                   DiffusionAccumulator(mu, ladder))

    def every_step(self, state: ElsasserState, labels: LabelFields) -> None:
        if not self.l2_start:
            self.l2_start = {s: sp.l2_norm_sq(state.field(s), state.grid) for s in SPECIES}
        self.diff.step(state, labels)

    def sample(self, state: ElsasserState, labels: LabelFields) -> DiagRecord:
        squares = StateSquares(state)
        self.flux.sample(state, labels, squares)
        self.diff.tier_sample(state, labels, squares)
        rec = instant_record(state, labels, self.cfg, self.ladder, squares)
        fp, fm = self.flux.flux("plus"), self.flux.flux("minus")
        rec.F_plus, rec.F_minus = float(fp[0]), float(fm[0])
        rec.F_k_plus, rec.F_k_minus = [float(v) for v in fp[1:]], [float(v) for v in fm[1:]]
        rec.D_plus, rec.D_minus = self.diff.lowest["plus"], self.diff.lowest["minus"]
        rec.D_k_plus = [float(v) for v in self.diff.tiers["plus"]]
        rec.D_k_minus = [float(v) for v in self.diff.tiers["minus"]]
        res = {}
        for s in SPECIES:
            e0 = self.l2_start[s]
            r = abs(sp.l2_norm_sq(state.field(s), state.grid) + 2.0 * self.diff.unweighted[s] - e0)
            res[s] = r / e0 if e0 > 0 else r
        rec.basic_energy_residual_plus = res["plus"]
        rec.basic_energy_residual_minus = res["minus"]
        return rec


# -- CSV --------------------------------------------------------------------

def schema_line(K: int, partial: bool) -> str:
    span = "partial" if partial else "complete"
    return f"# schema alfvenmhd-diagnostics v{SCHEMA_VERSION} K={K} D={span} F={span}"


def write_csv(path, records: list[DiagRecord], K: int, partial: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(schema_line(K, partial) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_columns(K))
        for rec in records:
            writer.writerow([format(float(v), ".17g") for v in record_row(rec, K)])


def read_csv(path) -> tuple[str, list[str], np.ndarray]:
    """Schema line, column names and the data block of a diagnostics CSV."""
    with open(path, encoding="utf-8") as fh:
        schema = fh.readline().rstrip("\n")
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.empty((0, len(header)))
    return schema, header, data


# -- simulate ---------------------------------------------------------------

@dataclass
class RunResult:
    cfg: SimConfig
    dt: float
    nsteps: int
    records: list[DiagRecord]
    state: ElsasserState
    labels: LabelFields
    mode_series: list = field(default_factory=list)  # (t, complex amplitude) per step
    l2_series: list = field(default_factory=list)  # (t, ||z+||^2, ||z-||^2) per step
    snapshots: list = field(default_factory=list)
    max_drift: float = 0.0
    interval_starts: list = field(default_factory=list)
    initial_energy: float = 0.0
    wall_time: float = 0.0


def simulate(cfg: SimConfig, output_dir: str | os.PathLike | None = None) -> RunResult:
    """Run ``cfg``; write snapshots, CSV and manifest when ``output_dir`` is given.

    Exceptions from the solver and the flux machinery propagate.
    """
    started = time.perf_counter()
    validate(cfg)
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    state = initial_state(cfg)
    grid = state.grid
    dt, nsteps = resolve_dt(cfg, state)
    params = SolverParams(cfg.mu, dt, cfl_safety=cfg.cfl)
    labels = LabelFields.initial(grid, cfg.R)
    tracker = _Tracker.create(cfg, grid, cfg.mu)
    checkpoints = checkpoint_steps(cfg, dt, nsteps)
    restarts = set(checkpoints) - {0, nsteps}
    result = RunResult(cfg, dt, nsteps, [], state, labels,
                       initial_energy=initial_weighted_energy(state, tracker.ladder, cfg.mu, cfg.R))
    dec = DecompositionState.start(state) if cfg.decompose else None
    if dec is not None:
        result.interval_starts.append(state.t)

    def sample(i: int):
        rec = tracker.sample(state, labels)
        if dec is not None:
            rec.E_lin_total, rec.E_non_total = decomposition_energies(dec, grid, cfg.K, cfg.mu)
        result.records.append(rec)

    def snapshot(i: int):
        if out is None:
            return
        path = out / f"snap_{i:07d}.bin"
        write_snapshot(path, Snapshot.from_run(state, labels, cfg.mu))
        result.snapshots.append(str(path))

    def track_mode():
        result.l2_series.append((state.t, *(sp.l2_norm_sq(state.field(s), grid) for s in SPECIES)))
        if cfg.ic == "single_mode":
            result.mode_series.append((state.t, mode_amplitude(state, cfg.mode_species, cfg.mode)))

    tracker.every_step(state, labels)
    track_mode()
    sample(0)
    if 0 in checkpoints:
        snapshot(0)
    for i in range(1, nsteps + 1):
        if dec is not None:
            new_state, dec = step_with_decomposition(state, dec, params)
            result.max_drift = max(result.max_drift, dec.drift(new_state))
        else:
            new_state = step(state, params)
        labels = advect_labels(labels, state, dt, state_next=new_state)
        state = new_state
        tracker.every_step(state, labels)
        track_mode()
        if i % cfg.flux_cadence == 0 or i == nsteps or i in restarts:
            sample(i)
        if i in checkpoints or i == nsteps:
            snapshot(i)
        if dec is not None and i in restarts:
            dec = DecompositionState.start(state)
            result.interval_starts.append(state.t)
    result.state, result.labels = state, labels
    result.wall_time = time.perf_counter() - started
    if out is not None:
        write_csv(out / CSV_NAME, result.records, cfg.K)
        _write_manifest(out / MANIFEST_NAME, result)
    return result


def _write_manifest(path, result: RunResult) -> None:
    cfg = result.cfg
    doc = {
        "config": cfg.to_text(),
        "threshold_satisfied": cfg.threshold_satisfied,
        "dt": result.dt,
        "nsteps": result.nsteps,
        "initial_weighted_energy": result.initial_energy,
        "max_decomposition_drift": result.max_drift,
        "snapshots": [os.path.basename(p) for p in result.snapshots],
        "wall_time_seconds": result.wall_time,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CFLViolation):
        return EXIT_CFL
    if isinstance(exc, NotMonotone):
        return EXIT_NOT_MONOTONE
    if isinstance(exc, SnapshotError):
        return EXIT_HEADER
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_CONFIG


def run_simulate(cfg: SimConfig, output_dir=None, log=print) -> int:
    try:
        result = simulate(cfg, output_dir if output_dir is not None else cfg.output_dir)
    except (AlfvenError, OSError) as exc:
        log(f"simulate failed: {getattr(exc, 'code', type(exc).__name__)}: {exc}")
        return exit_code_for(exc)
    log(f"simulate: {result.nsteps} steps of dt = {result.dt:.6g} in {result.wall_time:.1f} s; "
        f"threshold_satisfied = {cfg.threshold_satisfied}")
    return EXIT_OK


# -- diagnose ---------------------------------------------------------------

def diagnose(cfg: SimConfig, paths) -> list[DiagRecord]:
    """Recompute DiagRecords from snapshots.

    F and D are integrated only over the span covered by the snapshots.
    """
    if not paths:
        raise SnapshotError("no snapshots given")
    snaps = [read_snapshot(p) for p in paths]
    first = snaps[0]
    for s in snaps[1:]:
        if (s.n, s.L, s.mu) != (first.n, first.L, first.mu):
            raise SnapshotError(f"snapshots disagree on (n, L, mu): {(first.n, first.L, first.mu)} "
                                f"vs {(s.n, s.L, s.mu)}")
    snaps.sort(key=lambda s: s.t)
    run_cfg = replace(cfg, n=first.n, L=first.L, mu=first.mu)
    grid = first.grid
    tracker = _Tracker.create(run_cfg, grid, first.mu)
    records = []
    for snap in snaps:
        state = ElsasserState(grid, snap.t, snap.z_plus, snap.z_minus)
        labels = compute_weights(LabelFields(grid, snap.t, snap.phi_plus, snap.phi_minus, run_cfg.R))
        tracker.every_step(state, labels)
        records.append(tracker.sample(state, labels))
    return records


def run_diagnose(cfg: SimConfig, paths, output_dir=None, log=print) -> int:
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    try:
        records = diagnose(cfg, list(paths))
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / DIAGNOSE_CSV_NAME, records, cfg.K, partial=True)
    except (AlfvenError, OSError) as exc:
        log(f"diagnose failed: {getattr(exc, 'code', type(exc).__name__)}: {exc}")
        return exit_code_for(exc)
    log(f"diagnose: {len(records)} snapshots -> {out / DIAGNOSE_CSV_NAME}")
    return EXIT_OK


# -- sweep ------------------------------------------------------------------

SWEEP_COLUMNS = ["axis", "value", "exit_code", "threshold_satisfied", "final_total_E",
                 "decay_rate", "l2_monotone", "sep_min", "sep_ratio_min", "gamma_fit"]


@dataclass(frozen=True)
class SweepEntry:
    value: float
    exit_code: int
    threshold_satisfied: bool
    final_total_E: float = float("nan")
    decay_rate: float = float("nan")
    l2_monotone: bool | None = None
    sep_min: float = float("nan")
    sep_ratio_min: float = float("nan")
    gamma_fit: float = float("nan")


def _summarize(value: float, cfg: SimConfig, result: RunResult) -> SweepEntry:
    recs = result.records
    energies = [r.total_E for r in recs]
    times = [r.t for r in recs]
    l2 = np.array([row[1:] for row in result.l2_series])
    report = decay_schedule(energies, times=times)
    mono = all(decay_schedule(l2[:, i], l2_parts=l2[:, i]).l2_monotone for i in range(2))
    later = [r for r in recs if r.t > 0 and r.separation is not None]
    sep_min = min((r.separation.min_abs_diff for r in later), default=float("nan"))
    ratio = min((r.separation.min_abs_diff / r.t for r in later), default=float("nan"))
    gamma = float("nan")
    if cfg.ic == "single_mode" and len(result.mode_series) >= 2:
        t, a = zip(*result.mode_series)
        try:
            gamma = dispersion_fit(t, a).gamma
        except AlfvenError:
            pass
    return SweepEntry(value, EXIT_OK, cfg.threshold_satisfied, energies[-1],
                      report.geometric_rate if report.geometric_rate is not None else float("nan"),
                      mono, sep_min, ratio, gamma)


def sweep(cfg: SimConfig, axis: str, values, output_dir=None, log=print) -> list[SweepEntry]:
    if axis not in SWEEP_AXES:
        raise ConfigValidationError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}")
    values = [float(v) for v in values]
    if len(values) < 2:
        raise ConfigValidationError("a sweep needs at least two values")
    if not all(math.isfinite(v) for v in values):
        raise ConfigValidationError("sweep values must be finite")
    root = Path(output_dir if output_dir is not None else cfg.output_dir)
    entries = []
    for v in values:
        try:
            run_cfg = with_value(cfg, axis, v)
        except ConfigValidationError as exc:
            log(f"sweep {axis}={v!r}: {exc}")
            entries.append(SweepEntry(v, EXIT_CONFIG, False))
            continue
        try:
            result = simulate(run_cfg, root / f"{axis}={v!r}")
        except (AlfvenError, OSError) as exc:
            log(f"sweep {axis}={v!r}: {getattr(exc, 'code', type(exc).__name__)}: {exc}")
            entries.append(SweepEntry(v, exit_code_for(exc), run_cfg.threshold_satisfied))
            continue
        entries.append(_summarize(v, run_cfg, result))
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep_summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for e in entries:
            writer.writerow([axis, repr(e.value), e.exit_code, str(e.threshold_satisfied).lower(),
                             format(e.final_total_E, ".17g"), format(e.decay_rate, ".17g"),
                             "" if e.l2_monotone is None else str(e.l2_monotone).lower(),
                             format(e.sep_min, ".17g"), format(e.sep_ratio_min, ".17g"),
                             format(e.gamma_fit, ".17g")])
    return entries


def run_sweep(cfg: SimConfig, axis: str, values, output_dir=None, log=print) -> int:
    try:
        entries = sweep(cfg, axis, values, output_dir, log)
    except ConfigValidationError as exc:
        log(f"sweep rejected: {exc.code}: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        log(f"sweep failed: {exc}")
        return EXIT_IO
    ok = [e for e in entries if e.exit_code == EXIT_OK]
    log(f"sweep: {len(ok)} of {len(entries)} runs succeeded")
    if ok:
        return EXIT_OK
    return entries[0].exit_code if entries else EXIT_CONFIG


# -- dispersion -------------------------------------------------------------

DISPERSION_AMPLITUDE = 1e-6


@dataclass(frozen=True)
class DispersionResult:
    mode: tuple
    species: str
    omega: float
    gamma: float
    omega_expected: float
    gamma_expected: float
    samples: int


def measure_dispersion(grid: Grid, mu: float, mode, species: str, t_final: float,
                       amplitude: float = DISPERSION_AMPLITUDE) -> DispersionResult:
    """Linear single-mode run sampled every step and fitted.

    Uses dt <= dx/16 with at least ``MIN_FIT_SAMPLES`` steps.
    """
    from .diagnostics import MIN_FIT_SAMPLES

    nsteps = max(MIN_FIT_SAMPLES, math.ceil(t_final / (grid.dx / 16.0) - 1e-9))
    dt = t_final / nsteps
    state = init_single_mode(grid, mode, species, amplitude)
    params = SolverParams(mu, dt)
    times, amps = [state.t], [mode_amplitude(state, species, mode)]
    for _ in range(nsteps):
        state = step(state, params)
        times.append(state.t)
        amps.append(mode_amplitude(state, species, mode))
    fit = dispersion_fit(times, amps)
    k = grid.k0 * np.asarray(mode, dtype=float)
    sign = 1.0 if species == "plus" else -1.0
    return DispersionResult(tuple(int(m) for m in mode), species, fit.omega, fit.gamma,
                            sign * float(k[2]), mu * float(k @ k), len(times))


def run_dispersion(cfg: SimConfig, mode, species: str, log=print) -> int:
    try:
        if not any(mode):
            raise ConfigValidationError("mode must be nonzero")
        t_final = cfg.t_final if cfg.t_final > 0 else 1.0
        res = measure_dispersion(make_grid(cfg), cfg.mu, mode, species, t_final)
    except AlfvenError as exc:
        log(f"dispersion failed: {exc.code}: {exc}")
        return exit_code_for(exc)
    log(f"mode {res.mode} ({species}): omega = {res.omega:.10g} (expected {res.omega_expected:.10g}), "
        f"gamma = {res.gamma:.10g} (expected {res.gamma_expected:.10g}), {res.samples} samples")
    return EXIT_OK
