import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from alfvenmhd import cli, runner
from alfvenmhd.characteristics import LabelFields
from alfvenmhd.config import SimConfig, parse_config, with_value
from alfvenmhd.diagnostics import csv_columns
from alfvenmhd.errors import ConfigParseError, ConfigValidationError, NotMonotone, SnapshotError
from alfvenmhd.snapshot import (HEADER, Snapshot, from_bytes, read_snapshot, to_bytes,
                                write_snapshot)
from alfvenmhd.solver import init_wave_packet
from alfvenmhd.spectral import Grid

BASE = "mu = 0.5\nL = 7.4\nn = 32\nic = zero\nt_final = 1\n"


def small_cfg(**kw) -> SimConfig:
    values = dict(mu=0.25, L=4.0, n=16, t_final=0.5, ic="packet_both", amplitude=0.1,
                  flux_cadence=2)
    values.update(kw)
    return SimConfig(**values)


# -- config -------------------------------------------------------------------

def test_threshold_example():
    cfg = parse_config(BASE)
    assert cfg.threshold_satisfied
    assert cfg.ic == "zero" and cfg.K == 2 and cfg.R == 100.0 and cfg.dt is None


def test_threshold_just_below():
    assert not parse_config(BASE.replace("7.4", "7.38")).threshold_satisfied


def test_mu_zero_rejected():
    with pytest.raises(ConfigValidationError, match="mu"):
        parse_config(BASE.replace("mu = 0.5", "mu = 0"))


def test_large_amplitude_rejected():
    text = BASE.replace("ic = zero", "ic = packet_plus") + "amplitude = 0.9\n"
    with pytest.raises(ConfigValidationError, match="amplitude"):
        parse_config(text)


@pytest.mark.parametrize("line, lineno", [
    ("bogus = 3", 6), ("n = thirty", 6), ("no equals sign", 6), ("mu = 0.3", 6),
    ("ic = spiral", 6), ("decompose = maybe", 6),
])
def test_parse_errors_carry_line(line, lineno):
    with pytest.raises(ConfigParseError) as info:
        parse_config(BASE + line + "\n")
    assert info.value.lineno == lineno
    assert info.value.code == "PARSE_ERROR"


def test_comments_and_blank_lines():
    text = "# header\n\n" + BASE.replace("n = 32", "n = 32   # resolution")
    assert parse_config(text).n == 32


def test_missing_required_key():
    with pytest.raises(ConfigValidationError, match="t_final"):
        parse_config("mu = 0.5\nL = 7.4\nn = 32\n")


def test_single_mode_and_lists():
    cfg = parse_config(BASE.replace("ic = zero", "ic = single_mode(1, 0, -2, minus)")
                       + "checkpoint_times = 0.5, 0.25\ndt = 0.01\n")
    assert cfg.mode == (1, 0, -2) and cfg.mode_species == "minus"
    assert cfg.checkpoint_times == (0.25, 0.5)
    assert cfg.dt == 0.01


@pytest.mark.parametrize("extra", [
    "checkpoint_times = 2", "n = 9", "K = 9", "dt = -1", "flux_cadence = 0", "R = 0",
])
def test_validation_rules(extra):
    with pytest.raises(ConfigValidationError):
        parse_config(BASE.replace("n = 32\n", "") + extra + ("\nn = 32\n" if "n =" not in extra else "\n"))


def test_threshold_flags_over_L():
    cfg = parse_config(BASE)
    flags = [with_value(cfg, "L", v).threshold_satisfied for v in (4.0, 8.0, 16.0)]
    assert flags == [False, True, True]


@settings(max_examples=30, deadline=None)
@given(mu=st.floats(0.01, 0.99), L=st.floats(0.5, 50), n=st.sampled_from([16, 32]),
       amp=st.floats(0, 0.5), seed=st.integers(0, 1000), decompose=st.booleans())
def test_text_roundtrip(mu, L, n, amp, seed, decompose):
    cfg = SimConfig(mu=mu, L=L, n=n, t_final=1.0, amplitude=amp, seed=seed,
                    decompose=decompose, checkpoint_times=(0.5,))
    assert parse_config(cfg.to_text()) == cfg


def test_text_roundtrip_single_mode():
    cfg = parse_config(BASE.replace("ic = zero", "ic = single_mode(0,0,1,plus)"))
    assert parse_config(cfg.to_text()) == cfg


# -- snapshots ----------------------------------------------------------------

def random_snapshot(n=8, seed=0) -> Snapshot:
    rng = np.random.default_rng(seed)
    arr = lambda: rng.standard_normal((3, n, n, n))  # noqa: E731
    return Snapshot(n, 3.5, 0.2, 1.25, arr(), arr(), arr(), arr())


def assert_bit_equal(a: np.ndarray, b: np.ndarray):
    assert a.dtype == b.dtype and a.shape == b.shape
    assert a.tobytes() == b.tobytes()


def test_snapshot_roundtrip_file(tmp_path):
    snap = random_snapshot()
    write_snapshot(tmp_path / "s.bin", snap)
    back = read_snapshot(tmp_path / "s.bin")
    assert (back.n, back.L, back.mu, back.t) == (snap.n, snap.L, snap.mu, snap.t)
    for x, y in zip(snap.fields(), back.fields()):
        assert_bit_equal(np.ascontiguousarray(x), np.ascontiguousarray(y))


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (4, 3, 3, 3, 3)), st.floats(-1e6, 1e6))
def test_snapshot_roundtrip_arbitrary_values(arr, t):
    snap = Snapshot(3, 1.0, 0.5, t, *arr)
    data = to_bytes(snap)
    assert to_bytes(from_bytes(data)) == data


def test_snapshot_layout_x1_fastest():
    snap = random_snapshot(n=8)
    data = to_bytes(snap)
    assert data[:4] == b"ALFV"
    head = np.frombuffer(data, dtype="<f8", offset=HEADER.size, count=3)
    np.testing.assert_array_equal(head, snap.z_plus[0][:3, 0, 0])
    assert len(data) == HEADER.size + 12 * 8**3 * 8


@pytest.mark.parametrize("mutate, message", [
    (lambda d: b"XXXX" + d[4:], "magic"),
    (lambda d: d[:4] + (7).to_bytes(4, "little") + d[8:], "version"),
    (lambda d: d[:-8], "length"),
    (lambda d: d + b"\0" * 8, "length"),
    (lambda d: d[:10], "header"),
])
def test_snapshot_corruption(mutate, message):
    data = to_bytes(random_snapshot())
    with pytest.raises(SnapshotError, match=message):
        from_bytes(mutate(data))


def test_snapshot_state_and_labels():
    grid = Grid(8, 4.0)
    state = init_wave_packet(grid, 0.1, species="both")
    labels = LabelFields.initial(grid)
    snap = from_bytes(to_bytes(Snapshot.from_run(state, labels, 0.3)))
    assert_bit_equal(snap.state().z_minus, state.z_minus)
    np.testing.assert_array_equal(snap.labels().w_plus, labels.w_plus)


# -- runner -------------------------------------------------------------------

def test_zero_run_writes_zero_diagnostics(tmp_path):
    cfg = small_cfg(ic="zero", checkpoint_times=(0.25,))
    assert runner.run_simulate(cfg, tmp_path, log=lambda *_: None) == 0
    schema, header, data = runner.read_csv(tmp_path / runner.CSV_NAME)
    assert schema.startswith("# schema") and "D=complete" in schema
    assert header[:3] == ["t", "E_plus", "E_minus"]
    assert data.shape[0] >= 3
    zero_cols = [c for c in header if c not in ("t", "sep_min", "sep_max", "weight_product_min",
                                                "mode_amplitude")]
    for c in zero_cols:
        assert np.all(data[:, header.index(c)] == 0.0), c
    manifest = json.loads((tmp_path / runner.MANIFEST_NAME).read_text())
    assert manifest["threshold_satisfied"] is False
    assert manifest["snapshots"] == ["snap_0000004.bin", "snap_0000008.bin"]
    assert manifest["nsteps"] * manifest["dt"] == pytest.approx(0.5)


def test_csv_header_matches_schema():
    head = ["t", "E_plus", "E_minus", "E0_plus", "E0_minus", "E1_plus", "E1_minus", "E2_plus",
            "E2_minus", "F_plus", "F_minus", "D_plus", "D_minus", "total_E",
            "basic_residual_plus", "basic_residual_minus", "sep_min", "sep_max",
            "weight_product_min", "low_freq_mass", "E_lin_total", "E_non_total"]
    assert csv_columns(2)[:len(head)] == head


def test_single_mode_amplitude_column(tmp_path):
    cfg = small_cfg(ic="single_mode", mode=(0, 1, 1), mode_species="plus", amplitude=1e-6,
                    mu=0.1, t_final=1.0, decompose=False)
    assert runner.run_simulate(cfg, tmp_path, log=lambda *_: None) == 0
    _, header, data = runner.read_csv(tmp_path / runner.CSV_NAME)
    t = data[:, 0]
    k2 = (math.pi / cfg.L) ** 2 * 2
    expected = np.exp(-cfg.mu * k2 * t)
    np.testing.assert_allclose(data[:, header.index("mode_amplitude")], expected, rtol=0.01)


def test_auto_dt_lands_on_t_final():
    cfg = small_cfg(t_final=0.37)
    state = runner.initial_state(cfg)
    dt, nsteps = runner.resolve_dt(cfg, state)
    assert dt <= state.grid.dx / 8
    assert nsteps * dt == pytest.approx(0.37, rel=1e-14)


def test_explicit_dt_shrinks_to_fit():
    cfg = small_cfg(t_final=1.0, dt=0.3)
    dt, nsteps = runner.resolve_dt(cfg, runner.initial_state(cfg))
    assert nsteps == 4 and dt == 0.25


def test_deterministic_csv(tmp_path):
    cfg = small_cfg(checkpoint_times=(0.25,))
    for name in ("a", "b"):
        assert runner.run_simulate(cfg, tmp_path / name, log=lambda *_: None) == 0
    a = (tmp_path / "a" / runner.CSV_NAME).read_bytes()
    assert a == (tmp_path / "b" / runner.CSV_NAME).read_bytes()
    for snap in ("snap_0000004.bin", "snap_0000008.bin"):
        assert (tmp_path / "a" / snap).read_bytes() == (tmp_path / "b" / snap).read_bytes()


@pytest.fixture(scope="module")
def packet_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_cfg(checkpoint_times=(0.0, 0.25), flux_cadence=1)
    return cfg, runner.simulate(cfg, out), out


def test_decomposition_restarts_at_checkpoints(packet_run):
    cfg, result, _ = packet_run
    assert result.interval_starts == pytest.approx([0.0, 0.25])
    assert result.max_drift <= 1e-8
    restart = [r for r in result.records if r.t == pytest.approx(0.25)][0]
    assert restart.E_non_total > 0


def test_diagnose_reproduces_energies(packet_run, tmp_path):
    cfg, result, out = packet_run
    paths = [out / p for p in ("snap_0000004.bin", "snap_0000008.bin")]
    records = runner.diagnose(cfg, paths)
    in_run = {r.t: r for r in result.records}
    for rec in records:
        ref = in_run[rec.t]
        assert rec.E_plus == ref.E_plus and rec.E_minus == ref.E_minus
        assert rec.E_k_plus == ref.E_k_plus and rec.E_k_minus == ref.E_k_minus
        assert rec.total_E == ref.total_E
        assert rec.low_freq_mass == ref.low_freq_mass
    assert runner.run_diagnose(cfg, paths, tmp_path, log=lambda *_: None) == 0
    schema, header, data = runner.read_csv(tmp_path / runner.DIAGNOSE_CSV_NAME)
    assert "D=partial" in schema
    assert header == runner.read_csv(out / runner.CSV_NAME)[1]
    assert data[0, header.index("D_plus")] == 0.0 and data[1, header.index("D_plus")] > 0


def test_diagnose_order_independent(packet_run):
    cfg, _, out = packet_run
    paths = [out / p for p in ("snap_0000008.bin", "snap_0000000.bin")]
    recs = runner.diagnose(cfg, paths)
    assert [r.t for r in recs] == [0.0, pytest.approx(0.5)]


def test_diagnose_empty_and_mismatch(packet_run, tmp_path):
    cfg, _, out = packet_run
    quiet = lambda *_: None  # noqa: E731
    assert runner.run_diagnose(cfg, [], tmp_path, log=quiet) == 5
    other = random_snapshot(n=16)
    write_snapshot(tmp_path / "other.bin", other)
    assert runner.run_diagnose(cfg, [out / "snap_0000004.bin", tmp_path / "other.bin"],
                               tmp_path, log=quiet) == 5
    (tmp_path / "junk.bin").write_bytes(b"not a snapshot at all")
    assert runner.run_diagnose(cfg, [tmp_path / "junk.bin"], tmp_path, log=quiet) == 5


def test_cfl_violation_exit_code(tmp_path):
    cfg = small_cfg(dt=1.0, t_final=1.0)
    assert runner.run_simulate(cfg, tmp_path, log=lambda *_: None) == 2


def test_not_monotone_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NotMonotone("synthetic")
    monkeypatch.setattr(runner.FluxAccumulator, "sample", boom)
    assert runner.run_simulate(small_cfg(), tmp_path, log=lambda *_: None) == 3


def test_io_failure_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert runner.run_simulate(small_cfg(), blocker / "sub", log=lambda *_: None) == 4


# -- sweeps -------------------------------------------------------------------

def test_sweep_needs_two_values(tmp_path):
    with pytest.raises(ConfigValidationError):
        runner.sweep(small_cfg(), "mu", [0.1], tmp_path)
    assert runner.run_sweep(small_cfg(), "mu", [0.1], tmp_path, log=lambda *_: None) == 1


def test_sweep_gamma_linear_in_mu(tmp_path):
    cfg = small_cfg(ic="single_mode", mode=(1, 0, 1), mode_species="minus", amplitude=1e-6,
                    t_final=1.0, decompose=False, flux_cadence=1000)
    mus = [0.1, 0.2, 0.4]
    entries = runner.sweep(cfg, "mu", mus, tmp_path, log=lambda *_: None)
    gammas = np.array([e.gamma_fit for e in entries])
    slope = np.polyfit(mus, gammas, 1)[0]
    k2 = 2 * (math.pi / cfg.L) ** 2
    assert slope == pytest.approx(k2, rel=0.02)
    lines = (tmp_path / "sweep_summary.csv").read_text().splitlines()
    assert lines[0].split(",") == runner.SWEEP_COLUMNS and len(lines) == 4
    assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == [
        "mu=0.1", "mu=0.2", "mu=0.4"]


def test_sweep_threshold_flags_and_failures(tmp_path):
    cfg = small_cfg(ic="zero", mu=0.5, t_final=0.1, n=8, K=1)
    entries = runner.sweep(cfg, "L", [4.0, 8.0, 16.0], tmp_path, log=lambda *_: None)
    assert [e.threshold_satisfied for e in entries] == [False, True, True]
    entries = runner.sweep(small_cfg(t_final=0.1, n=8, K=1), "amplitude", [0.1, 0.9], tmp_path / "a",
                           log=lambda *_: None)
    assert [e.exit_code for e in entries] == [0, 1]


# -- command line -------------------------------------------------------------

def write_cfg(path, text):
    path.write_text(text)
    return str(path)


def test_cli_simulate_and_diagnose(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.txt", "mu = 0.3\nL = 4\nn = 8\nK = 1\nt_final = 0.25\n"
                    "ic = packet_plus\namplitude = 0.05\n"
                    f"output_dir = {tmp_path / 'out'}\n")
    assert cli.main(["simulate", cfg]) == 0
    snaps = sorted(str(p) for p in (tmp_path / "out").glob("snap_*.bin"))
    assert len(snaps) == 1
    assert cli.main(["diagnose", cfg, *snaps, "--output-dir", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / runner.DIAGNOSE_CSV_NAME).exists()
    assert cli.main(["diagnose", cfg]) == 5


def test_cli_config_errors(tmp_path, capsys):
    bad = write_cfg(tmp_path / "bad.txt", "mu = 0.3\nwhat\n")
    assert cli.main(["simulate", bad]) == 1
    assert "line 2" in capsys.readouterr().err
    assert cli.main(["simulate", str(tmp_path / "missing.txt")]) == 4


def test_cli_dispersion(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.txt", "mu = 0.1\nL = 3.141592653589793\nn = 16\nt_final = 0.5\n")
    assert cli.main(["dispersion", cfg, "--k", "0,0,1", "--species", "minus"]) == 0
    out = capsys.readouterr().out
    assert "omega" in out and "expected -1" in out


def test_cli_sweep(tmp_path):
    cfg = write_cfg(tmp_path / "c.txt", "mu = 0.3\nL = 4\nn = 8\nK = 1\nt_final = 0.1\nic = zero\n")
    assert cli.main(["sweep", cfg, "--axis", "L", "--values", "4,8",
                     "--output-dir", str(tmp_path / "s")]) == 0
    with pytest.raises(SystemExit):
        cli.main(["sweep", cfg, "--axis", "R", "--values", "1,2"])
