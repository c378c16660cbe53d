import logging

import numpy as np
import pytest

from ldlab.domain import (build_background, build_grid, build_layer_config,
                          sample_coefficients)
from ldlab.evolve import (Stepper, TimeSeries, cfl_dt, make_state, run,
                          step_imex, nusselt_integrand)
from ldlab.operator import eigensolve, random_band_field, weighted_grad_norm
from ldlab.pressure import FlowField
from ldlab.spectral import l2_norm, to_spectral


def problem(c0=1.0, cH=0.0, K=(1.0, 2.0), D=(1.0, 2.0), nx=8, ny=8, nz=64,
            delta=0.05, eps=0.0, eps_pins=()):
    cfg = build_layer_config(1, 1, [-0.5], K, D, c0, cH)
    grid = build_grid(cfg, nx, ny, nz, eps_values=eps_pins)
    co = sample_coefficients(cfg, grid, eps)
    bg = build_background(cfg, grid, delta)
    return cfg, grid, co, bg


class TestStep:
    def test_backward_euler_amplification(self):
        cfg, grid, co, bg = problem(c0=1.0, cH=1.0, K=(1, 1), D=(1, 1), nz=128)
        spec = eigensolve(co, grid)
        g0 = next(g for g in spec.groups if g.k2 == 0.0)
        lam = g0.lam[0]
        psi0 = np.broadcast_to(g0.w[:, 0], grid.shape).copy()
        st = make_state(psi0, grid, eps=0.0, delta=bg.delta, model="sharp")
        st1 = step_imex(st, co, bg, 0.01)
        expect = 1.0 / (1.0 + lam * 0.01)
        np.testing.assert_allclose(st1.psi, expect * psi0, rtol=1e-12, atol=1e-15)
        assert expect == pytest.approx(1.0 / (1.0 + np.pi**2 * 0.01), rel=1e-4)

    def test_zero_fixed_point(self):
        cfg, grid, co, bg = problem(c0=1.0, cH=1.0, nz=32)
        st = make_state(np.zeros(grid.shape), grid, eps=0.0, delta=bg.delta, model="sharp")
        for _ in range(3):
            st = step_imex(st, co, bg, 0.01)
        assert np.abs(st.psi).max() == 0.0

    def test_source_step_dense_oracle(self):
        # one step from zero equals  dt (I + dt A)^-1 (D phi_b'')  per mode
        cfg, grid, co, bg = problem(nx=4, ny=4, nz=48)
        dt = 5e-3
        st = make_state(np.zeros(grid.shape), grid, eps=0.0, delta=bg.delta, model="sharp")
        st1 = step_imex(st, co, bg, dt)
        g = co.D_face / grid.dcf
        nz = grid.nz
        A = np.zeros((nz, nz))
        for i in range(nz):
            A[i, i] = (g[i] + g[i + 1]) / grid.dz[i]
            if i > 0:
                A[i, i - 1] = -g[i] / grid.dz[i]
            if i < nz - 1:
                A[i, i + 1] = -g[i + 1] / grid.dz[i]
        src = co.D_center * bg.d2phi_cell_mean
        expect = dt * np.linalg.solve(np.eye(nz) + dt * A, src)
        assert np.abs(st1.psi[0, 0] - expect).max() <= 1e-12 * np.abs(expect).max()

    def test_nan_abort(self):
        # quadratic advection overflows for an absurd amplitude; the guard
        # must refuse to hand back a poisoned state
        cfg, grid, co, bg = problem(c0=1.0, nz=48)
        psi0 = random_band_field(grid, np.random.default_rng(0), 2, 2, 4, amplitude=1e160)
        st = make_state(psi0, grid, eps=0.0, delta=bg.delta, model="sharp")
        with np.errstate(over="ignore", invalid="ignore"), \
             pytest.raises(RuntimeError, match="non-finite"):
            for _ in range(5):
                st = step_imex(st, co, bg, 0.5)

    def test_energy_identity_decay(self):
        cfg, grid, co, bg = problem(c0=1.0, cH=1.0, K=(1, 3), D=(1, 2), nz=48)
        stepper = Stepper(grid, co, bg)
        psi = random_band_field(grid, np.random.default_rng(1), 3, 3, 6, amplitude=1e-4)
        st = make_state(psi, grid, eps=0.0, delta=bg.delta, model="sharp")
        for _ in range(50):
            flow = stepper.flow_of(st.psih)
            new = stepper.advance(st, flow, 1e-4)
            lhs = (l2_norm(new.psi, grid) ** 2 - l2_norm(st.psi, grid) ** 2) / 1e-4
            g2 = weighted_grad_norm(new.psi, grid, w_center=co.D_center,
                                    w_face=co.D_face) ** 2
            assert lhs <= -2.0 * g2 + 1e-8 * l2_norm(st.psi, grid) ** 2
            st = new

    def test_advection_energy_neutral(self):
        cfg, grid, co, bg = problem(c0=1.0, cH=1.0, K=(1, 4), D=(1, 2), nz=48)
        stepper = Stepper(grid, co, bg)
        psi = random_band_field(grid, np.random.default_rng(2), 3, 3, 6)
        st = make_state(psi, grid, eps=0.0, delta=bg.delta, model="sharp")
        flow = stepper.flow_of(st.psih)
        expl = stepper.explicit_terms(st.psih, flow)  # pure -advection here
        from ldlab.spectral import to_physical
        adv = to_physical(-expl, grid.nx, grid.ny)
        w = grid.dz * grid.L**2 / (grid.nx * grid.ny)
        ip = np.sum(adv * st.psi * w)
        assert abs(ip) <= 1e-12 * l2_norm(adv, grid) * l2_norm(st.psi, grid)

    def test_maximum_principle_sanity(self):
        cfg, grid, co, bg = problem(c0=1.0, cH=1.0, nz=48)
        stepper = Stepper(grid, co, bg)
        psi = random_band_field(grid, np.random.default_rng(3), 2, 2, 3, amplitude=1e-2)
        st = make_state(psi, grid, eps=0.0, delta=bg.delta, model="sharp")
        lo, hi = st.psi.min(), st.psi.max()
        for _ in range(100):
            flow = stepper.flow_of(st.psih)
            st = stepper.advance(st, flow, 1e-3)
            assert st.psi.min() >= lo - 1e-6
            assert st.psi.max() <= hi + 1e-6


class TestCfl:
    def _uniform_flow(self, grid, uz):
        modes_shape = (grid.nx, grid.ny // 2 + 1, grid.nz)
        uxh = np.zeros(modes_shape, dtype=complex)
        uyh = np.zeros(modes_shape, dtype=complex)
        uzh = np.zeros((grid.nx, grid.ny // 2 + 1, grid.nz + 1), dtype=complex)
        uzh[0, 0, 1:-1] = uz
        return FlowField(grid=grid, phat=uxh.copy(), uxhat=uxh, uyhat=uyh, uzhat=uzh)

    def test_zero_velocity_returns_dt_max(self):
        cfg, grid, co, bg = problem(nz=32)
        flow = self._uniform_flow(grid, 0.0)
        assert cfl_dt(flow, grid, dt_max=0.01) == 0.01

    def test_formula_plugin(self):
        cfg = build_layer_config(1, 1, [-0.5], [1, 1], [1, 1], 1, 0)
        grid = build_grid(cfg, 4, 1, 100)  # dz = 0.01
        flow = self._uniform_flow(grid, 2.0)
        assert cfl_dt(flow, grid, c_cfl=0.4, dt_max=1.0) == pytest.approx(0.4 * 0.01 / 2.0)

    def test_conduction_run_keeps_dt_max(self):
        cfg, grid, co, bg = problem(c0=1e-6, nz=48)
        from ldlab.experiments import conduction_state
        psi0 = conduction_state(grid, co, bg)
        res = run(cfg, grid, co, bg, psi0, 0.05, dt=1e-3, cadence=5e-3,
                  adaptive=True, dt_max=5e-3)
        assert np.all(res.series.column("dt")[1:] == 5e-3)


class TestRun:
    def test_t_end_zero_returns_initial_row(self):
        cfg, grid, co, bg = problem(nz=32)
        psi0 = random_band_field(grid, np.random.default_rng(4), 2, 2, 3)
        res = run(cfg, grid, co, bg, psi0, 0.0, dt=1e-3, cadence=1e-2)
        assert res.series.data.shape[0] == 1
        assert res.series.t[0] == 0.0
        assert res.series.column("l2")[0] == pytest.approx(l2_norm(psi0, grid))

    def test_determinism_bytes(self, tmp_path):
        cfg, grid, co, bg = problem(nz=48)
        psi0 = random_band_field(grid, np.random.default_rng(5), 2, 2, 3, amplitude=0.3)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        run(cfg, grid, co, bg, psi0, 0.1, dt=2e-3, cadence=0.01).series.to_csv(p1)
        run(cfg, grid, co, bg, psi0, 0.1, dt=2e-3, cadence=0.01).series.to_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_eps_consistency_identical_layers(self):
        cfg = build_layer_config(1, 1, [-0.5], [2, 2], [1.5, 1.5], 1, 0)
        grid = build_grid(cfg, 8, 8, 48, eps_values=[0.05])
        bg = build_background(cfg, grid, 0.05)
        psi0 = random_band_field(grid, np.random.default_rng(6), 2, 2, 3, amplitude=0.2)
        cos = sample_coefficients(cfg, grid, 0.0)
        cod = sample_coefficients(cfg, grid, 0.05)
        rs = run(cfg, grid, cos, bg, psi0, 0.1, dt=2e-3, cadence=0.01)
        rd = run(cfg, grid, cod, bg, psi0, 0.1, dt=2e-3, cadence=0.01)
        assert np.array_equal(rs.series.data, rd.series.data)
        assert np.array_equal(rs.final.psih, rd.final.psih)

    def test_sample_times_and_schedule_validation(self):
        cfg, grid, co, bg = problem(nz=32)
        psi0 = random_band_field(grid, np.random.default_rng(7), 1, 1, 2)
        res = run(cfg, grid, co, bg, psi0, 0.04, dt=1e-3, cadence=0.01,
                  sample_times=[0.0, 0.02, 0.04])
        assert set(res.states) == {0.0, 0.02, 0.04}
        assert np.allclose(res.states[0.0], res.series.column("l2")[0] * 0 + res.states[0.0])
        with pytest.raises(ValueError, match="not on the dt grid"):
            run(cfg, grid, co, bg, psi0, 0.04, dt=1e-3, cadence=0.01,
                sample_times=[0.0215])
        with pytest.raises(ValueError, match="cadence"):
            run(cfg, grid, co, bg, psi0, 0.04, dt=1e-3, cadence=0.0115)

    def test_imex2_runs_and_is_more_accurate(self):
        cfg, grid, co, bg = problem(c0=1.0, cH=1.0, K=(1, 1), D=(1, 1), nz=96)
        spec = eigensolve(co, grid)
        g0 = next(g for g in spec.groups if g.k2 == 0.0)
        lam = g0.lam[0]
        psi0 = np.broadcast_to(g0.w[:, 0], grid.shape).copy()
        T, dt = 0.1, 5e-3
        exact = np.exp(-lam * T)
        errs = {}
        for scheme in ("imex1", "imex2"):
            res = run(cfg, grid, co, bg, psi0, T, dt=dt, cadence=0.05,
                      scheme=scheme, spectrum=spec)
            errs[scheme] = abs(res.series.column("l2")[-1] - exact)
        assert errs["imex2"] < 0.2 * errs["imex1"]

    def test_nu_columns_and_divmax(self):
        cfg, grid, co, bg = problem(c0=2.0, nz=48)
        psi0 = random_band_field(grid, np.random.default_rng(8), 2, 2, 4, amplitude=0.5)
        res = run(cfg, grid, co, bg, psi0, 0.1, dt=1e-3, cadence=0.01)
        assert np.all(np.isfinite(res.series.data))
        assert res.series.column("divmax").max() <= 1e-9
        assert res.series.column("nu_avg")[0] == res.series.column("nu_inst")[0]


class TestTimeSeries:
    def test_csv_roundtrip(self, tmp_path):
        cfg, grid, co, bg = problem(nz=32)
        psi0 = random_band_field(grid, np.random.default_rng(9), 1, 1, 2)
        res = run(cfg, grid, co, bg, psi0, 0.02, dt=1e-3, cadence=5e-3)
        path = tmp_path / "s.csv"
        res.series.to_csv(path)
        back = TimeSeries.from_csv(path)
        assert np.array_equal(back.data, res.series.data)

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            TimeSeries.from_csv(path)

    def test_nusselt_integrand_frozen_fields(self):
        # u_z = psi = sin(pi z) cos(2 pi x): volume mean of the product = 1/4
        cfg = build_layer_config(1, 1, [], [1], [1], 1, 0)
        grid = build_grid(cfg, 32, 4, 256)
        x = np.arange(grid.nx) * grid.dx
        horiz = np.cos(2 * np.pi * x)[:, None, None]
        psi = np.broadcast_to(horiz * np.sin(np.pi * grid.zc), grid.shape).copy()
        uzf = np.broadcast_to(horiz * np.sin(np.pi * grid.zf), (grid.nx, grid.ny, grid.nz + 1)).copy()
        val = nusselt_integrand(psi, uzf, grid)
        assert val == pytest.approx(0.25, rel=2e-4)
