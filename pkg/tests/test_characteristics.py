import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alfvenmhd import characteristics as ch
from alfvenmhd import solver as s
from alfvenmhd.errors import NotMonotone, RegionEmpty
from alfvenmhd.spectral import Grid


def evolve_geometry(state, params, t_final, labels=None, fm=None, every=None):
    """Advance solver, labels and flow map together; yields after each step."""
    labels = labels or ch.LabelFields.initial(state.grid)
    fm = fm or ch.FlowMapState.initial(state.grid)
    nsteps = int(round(t_final / params.dt))
    for _ in range(nsteps):
        nxt = s.step(state, params)
        labels = ch.advect_labels(labels, state, params.dt, nxt)
        fm = ch.advance_flowmap(fm, state, params.dt, nxt)
        state = nxt
        yield state, labels, fm


@pytest.fixture(scope="module")
def packet_run():
    g = Grid(16, 8.0)
    state = s.init_wave_packet(g, 0.1, species="both")
    params = s.SolverParams(0.25, g.dx / 8)
    return list(evolve_geometry(state, params, 2.0))


class TestWrap:
    @pytest.mark.parametrize("value, expected", [(0.5, 0.5), (-1.5, 0.5), (1.7, -0.3),
                                                 (1.0, 1.0), (-1.0, 1.0), (3.0, 1.0)])
    def test_examples(self, value, expected):
        L = 4.0
        assert ch.wrap_into_box(np.array(value * L), L) == pytest.approx(expected * L, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(0.5, 50))
    def test_range_and_congruence(self, x, L):
        u = float(ch.wrap_into_box(np.array(x), L))
        assert -L < u <= L
        m = (x - u) / (2 * L)
        assert abs(m - round(m)) <= 1e-9 * max(1.0, abs(m))

    def test_free_labels_wrap(self):
        g = Grid(8, 2.0)
        labels = ch.compute_weights(ch.LabelFields(g, 3.1, g.zeros(3), g.zeros(3)))
        u_p, u_m = ch.wrap_u(labels)
        x3 = g.coords[2]
        assert np.max(np.abs(u_p - ch.wrap_into_box(x3 - 3.1, 2.0))) <= 1e-12
        assert np.max(np.abs(u_m - ch.wrap_into_box(x3 + 3.1, 2.0))) <= 1e-12


class TestWeights:
    def test_origin_weight_is_R(self):
        g = Grid(8, 4.0)
        labels = ch.LabelFields.initial(g)
        i = g.n // 2
        assert labels.w_plus[i, i, i] == pytest.approx(100.0, abs=1e-12)

    def test_sqrt_two(self):
        g = Grid(8, 100.0)
        labels = ch.LabelFields.initial(g)
        i = g.n // 2
        # x3 = -L wraps to u = L = 100
        assert labels.u_plus[i, i, 0] == pytest.approx(100.0)
        assert labels.w_plus[i, i, 0] == pytest.approx(100.0 * np.sqrt(2.0), rel=1e-14)

    def test_initial_weights_equal_bracket_x(self):
        g = Grid(8, 3.0)
        labels = ch.LabelFields.initial(g, R=50.0)
        bracket = np.sqrt(50.0**2 + np.sum(g.coords**2, axis=0))
        for sp_ in s.SPECIES:
            assert np.allclose(labels.w(sp_), bracket, rtol=1e-14)
            assert np.allclose(labels.wbar(sp_), bracket, rtol=1e-14)

    def test_lower_bounds(self, packet_run):
        _, labels, _ = packet_run[-1]
        for sp_ in s.SPECIES:
            assert labels.w(sp_).min() >= labels.R
            assert labels.wbar(sp_).min() >= labels.R
            assert np.all(labels.w(sp_) <= labels.wbar(sp_) + 2 * labels.grid.L)
            u = labels.u(sp_)
            assert u.min() > -labels.grid.L and u.max() <= labels.grid.L


class TestFreeStreaming:
    def test_labels_and_flow_maps_exact(self):
        g = Grid(8, 2.0)
        params = s.SolverParams(0.1, g.dx / 2)
        *_, (state, labels, fm) = evolve_geometry(s.ElsasserState.zero(g), params, 5.0)
        t = state.t
        assert not np.any(labels.phi_plus) and not np.any(labels.phi_minus)
        x3 = g.coords[2]
        assert np.max(np.abs(labels.u_plus - ch.wrap_into_box(x3 - t, g.L))) <= 1e-10
        assert np.max(np.abs(labels.u_minus - ch.wrap_into_box(x3 + t, g.L))) <= 1e-10
        e3 = np.array([0.0, 0.0, 1.0])[:, None, None, None]
        assert np.max(np.abs(fm.psi_plus - (fm.y + t * e3))) <= 1e-10
        assert np.max(np.abs(fm.psi_minus - (fm.y - t * e3))) <= 1e-10
        assert fm.jacobian_deviation <= 1e-12

    def test_separation_is_two_t(self):
        g = Grid(16, 8.0)
        labels = ch.compute_weights(ch.LabelFields(g, 2.0, g.zeros(3), g.zeros(3)))
        m = ch.separation_metrics(labels)
        assert m.min_abs_diff == pytest.approx(4.0, abs=1e-12)
        assert m.max_abs_diff == pytest.approx(4.0, abs=1e-12)

    def test_separation_at_zero(self):
        g = Grid(16, 8.0)
        m = ch.separation_metrics(ch.LabelFields.initial(g))
        assert m.max_abs_diff == 0.0
        assert m.min_weight_product >= 1e4


class TestPacketGeometry:
    def test_separation_bounds(self, packet_run):
        for state, labels, _ in packet_run:
            t = state.t
            if t < 0.5:
                continue
            m = ch.separation_metrics(labels)
            assert t <= m.min_abs_diff and m.max_abs_diff <= 3 * t
            assert m.min_weight_product >= ch.separation_lower_bound(labels.R, t)

    def test_sandwich(self, packet_run):
        for state, labels, _ in packet_run:
            assert state.max_speed() <= 0.5
            assert ch.label_sandwich_violations(labels) == 0

    def test_region_facts_short_times(self, packet_run):
        # the facts need the drift 7t/4 to stay below L/12
        for state, labels, _ in packet_run:
            if state.t > labels.grid.L / 21:
                break
            report = ch.label_region_report(labels)
            for sp_ in s.SPECIES:
                assert report[sp_] == {"outer": 0, "inner": 0}

    def test_region_facts_reported_late(self, packet_run):
        _, labels, _ = packet_run[-1]
        report = ch.label_region_report(labels)
        assert report["plus"]["outer"] > 0

    def test_duality_with_flow_map(self, packet_run):
        _, labels, fm = packet_run[-1]
        for sp_ in s.SPECIES:
            err = np.max(np.abs(ch.labels_at_markers(labels, fm, sp_) - fm.y))
            assert err <= 3 * labels.grid.dx
            assert err > 0

    def test_labels_move_with_perturbation(self, packet_run):
        _, labels, _ = packet_run[-1]
        assert np.max(np.abs(labels.phi_plus)) > 1e-4

    def test_translation_covariance(self):
        g = Grid(16, 4.0)
        state = s.init_wave_packet(g, 0.1, species="both")
        shift = 5
        rolled = s.ElsasserState(g, 0.0, np.roll(state.z_plus, shift, axis=-1),
                                 np.roll(state.z_minus, shift, axis=-1))
        params = s.SolverParams(0.1, g.dx / 8)
        *_, (_, a, _) = evolve_geometry(state, params, 0.5)
        *_, (_, b, _) = evolve_geometry(rolled, params, 0.5)
        for sp_ in s.SPECIES:
            xa = a.optical(sp_)[2]
            xb = b.optical(sp_)[2]
            # x_3 of the shifted run at x + shift*dx e3 equals x_3 + shift*dx
            expected = np.roll(xa, shift, axis=-1)
            expected[..., :shift] -= 2 * g.L
            assert np.max(np.abs(xb - expected - shift * g.dx)) <= 1e-9


class TestFlowMap:
    def test_initial_identity(self):
        g = Grid(16, 2.0)
        fm = ch.FlowMapState.initial(g)
        assert fm.y.shape == (3, 8, 8, 8)
        assert np.array_equal(fm.psi_plus, fm.y)

    def test_amplitude_sweep(self):
        g = Grid(16, 4.0)
        ratios = []
        for amp in (0.01, 0.03, 0.1):
            state = s.init_wave_packet(g, amp, species="both")
            params = s.SolverParams(0.25, g.dx / 8)
            fm = ch.FlowMapState.initial(g)
            nsteps = int(round(1.0 / params.dt))
            for _ in range(nsteps):
                nxt = s.step(state, params)
                fm = ch.advance_flowmap(fm, state, params.dt, nxt)
                state = nxt
            ratios.append(fm.jacobian_deviation / amp)
        assert max(ratios) <= 10.0
        assert ratios[0] == pytest.approx(ratios[1], rel=0.1)

    def test_volume_preserved(self):
        g = Grid(48, 8.0)
        state = s.init_wave_packet(g, 0.1, species="both")
        params = s.SolverParams(0.25, g.dx / 4)
        fm = ch.FlowMapState.initial(g)
        lo, hi = 1.0, 1.0
        for _ in range(int(round(5.0 / params.dt))):
            nxt = s.step(state, params)
            fm = ch.advance_flowmap(fm, state, params.dt, nxt)
            state = nxt
            lo, hi = min(lo, fm.det_min), max(hi, fm.det_max)
        assert 1 - 1e-3 <= lo and hi <= 1 + 1e-3


class TestLevelSet:
    def test_free_minus(self):
        g = Grid(16, 4.0)
        tau = 0.7
        labels = ch.compute_weights(ch.LabelFields(g, tau, g.zeros(3), g.zeros(3)))
        a = 0.5
        assert ch.level_set_x3(labels, "minus", a, 3, 5) == pytest.approx(a - tau, abs=1e-12)
        assert ch.level_set_x3(labels, "plus", a, 3, 5) == pytest.approx(a + tau, abs=1e-12)

    def test_quarter_box_at_zero(self):
        g = Grid(16, 4.0)
        labels = ch.LabelFields.initial(g)
        assert ch.level_set_x3(labels, "plus", g.L / 4, 0, 0) == pytest.approx(g.L / 4, abs=1e-12)

    def test_wraps_at_late_times(self):
        g = Grid(16, 4.0)
        labels = ch.compute_weights(ch.LabelFields(g, 6.5, g.zeros(3), g.zeros(3)))
        x3 = ch.level_set_columns(labels, "plus", 0.0).x3
        assert np.allclose(x3, 6.5 - 2 * g.L)

    def test_perturbed_residual(self, packet_run):
        _, labels, _ = packet_run[-1]
        L = labels.grid.L
        for sp_ in s.SPECIES:
            for a in np.linspace(-L / 4, L / 4, 5):
                roots = ch.level_set_columns(labels, sp_, a)
                assert np.all((roots.x3 >= -L) & (roots.x3 < L))
                res = ch.column_label_residual(labels, sp_, a, roots.x3)
                assert np.max(np.abs(res)) <= 1e-8 * L

    def test_not_monotone(self):
        g = Grid(16, 4.0)
        phi = g.zeros(3)
        phi[2] = -1.5 * np.sin(g.k0 * g.coords[2]) / g.k0
        labels = ch.compute_weights(ch.LabelFields(g, 0.0, phi, g.zeros(3)))
        with pytest.raises(NotMonotone):
            ch.level_set_columns(labels, "plus", 0.0)

    def test_interpolate_on_roots(self):
        g = Grid(16, 4.0)
        labels = ch.compute_weights(ch.LabelFields(g, 0.3, g.zeros(3), g.zeros(3)))
        roots = ch.level_set_columns(labels, "minus", 1.0)
        f = np.cos(g.k0 * g.coords[2])
        val = ch.interpolate_on_roots(f, roots)
        assert np.max(np.abs(val - np.cos(g.k0 * 0.7))) <= 1e-3


def test_region_empty():
    g = Grid(8, 1.0)
    labels = ch.LabelFields.initial(g)
    with pytest.raises(RegionEmpty):
        ch.separation_metrics(labels, region_fraction=-1.0)
