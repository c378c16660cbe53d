import numpy as np
import pytest
from scipy.linalg import eigh

from ldlab.domain import build_grid, build_layer_config, sample_coefficients
from ldlab.operator import (apply_L, appendix_probes, eigensolve, expand,
                            fractional_norm, kmethod_norm, random_band_field,
                            synthesize, vertical_tridiag, weighted_grad_norm)
from ldlab.spectral import l2_norm


def single_layer(nz=256, nx=4, ny=4):
    cfg = build_layer_config(1, 1, [], [1], [1], 1, 0)
    grid = build_grid(cfg, nx, ny, nz)
    return cfg, grid, sample_coefficients(cfg, grid, 0.0)


def two_layer(nz=128, nx=4, ny=4, K=(1.0, 1.0), D=(1.0, 4.0)):
    cfg = build_layer_config(1, 1, [-0.5], K, D, 1, 0)
    grid = build_grid(cfg, nx, ny, nz)
    return cfg, grid, sample_coefficients(cfg, grid, 0.0)


def dense_mode_matrix(coeffs, grid, k2):
    """Dense per-mode operator assembled in the test from the flux stencil."""
    nz = grid.nz
    A = np.zeros((nz, nz))
    g = coeffs.D_face / grid.dcf
    for i in range(nz):
        A[i, i] = (g[i] + g[i + 1]) / grid.dz[i] + k2 * coeffs.D_center[i]
        if i > 0:
            A[i, i - 1] = -g[i] / grid.dz[i]
        if i < nz - 1:
            A[i, i + 1] = -g[i + 1] / grid.dz[i]
    return A


class TestApplyL:
    def test_sine_eigenfunction(self):
        cfg, grid, co = single_layer()
        psi = np.broadcast_to(np.sin(np.pi * grid.zc), grid.shape).copy()
        out = apply_L(psi, co, grid)
        rel = np.abs(out - np.pi**2 * psi).max() / np.pi**2
        assert rel < 3.0 * (1.0 / grid.nz) ** 2 * np.pi**2

    def test_zero(self):
        cfg, grid, co = single_layer(nz=32)
        assert np.all(apply_L(np.zeros(grid.shape), co, grid) == 0.0)

    def test_dense_assembly_oracle(self):
        cfg, grid, co = two_layer(nz=64)
        rng = np.random.default_rng(0)
        psi = rng.normal(size=grid.shape)
        out = apply_L(psi, co, grid)
        from ldlab.spectral import to_physical, to_spectral, HorizontalModes
        modes = HorizontalModes(grid.L, grid.nx, grid.ny)
        ph = to_spectral(psi)
        ref = np.empty_like(ph)
        for ix in range(ph.shape[0]):
            for iy in range(ph.shape[1]):
                A = dense_mode_matrix(co, grid, modes.k2[ix, iy])
                ref[ix, iy] = A @ ph[ix, iy]
        ref_phys = to_physical(ref, grid.nx, grid.ny)
        assert np.abs(out - ref_phys).max() <= 1e-13 * np.abs(out).max()

    def test_adjointness(self):
        cfg, grid, co = two_layer(nz=64, K=(1, 3), D=(2, 5))
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=grid.shape), rng.normal(size=grid.shape)
        w = grid.dz * (grid.L**2 / (grid.nx * grid.ny))
        ip1 = np.sum(apply_L(a, co, grid) * b * w)
        ip2 = np.sum(a * apply_L(b, co, grid) * w)
        assert abs(ip1 - ip2) <= 1e-12 * abs(ip1)

    def test_shape_mismatch(self):
        cfg, grid, co = single_layer(nz=32)
        with pytest.raises(ValueError, match="shape"):
            apply_L(np.zeros((2, 2, 2)), co, grid)

    def test_matrix_symmetric_under_volume_weights(self):
        cfg, grid, co = two_layer(nz=48, K=(1, 2), D=(1, 7))
        A = dense_mode_matrix(co, grid, 0.0)
        M = grid.dz[:, None] * A
        assert np.abs(M - M.T).max() <= 1e-15 * np.abs(M).max()


class TestEigensolve:
    def test_single_layer_sine_spectrum(self):
        cfg, grid, co = single_layer(nz=256)
        spec = eigensolve(co, grid)
        g0 = next(g for g in spec.groups if g.k2 == 0.0)
        for n in range(1, 6):
            exact = (n * np.pi) ** 2
            assert abs(g0.lam[n - 1] - exact) / exact < 1e-3

    def test_diagonal_shift(self):
        cfg, grid, co = single_layer(nz=128)
        spec = eigensolve(co, grid)
        g0 = next(g for g in spec.groups if g.k2 == 0.0)
        k2 = 4 * np.pi**2
        gk = min((g for g in spec.groups if g.k2 > 0.0),
                 key=lambda g: abs(g.k2 - k2))
        np.testing.assert_allclose(gk.lam, g0.lam + gk.k2, rtol=1e-10)

    def test_two_layer_dense_oracle_2048(self):
        cfg = build_layer_config(1, 1, [-0.5], [1, 1], [1, 4], 1, 0)
        grid = build_grid(cfg, 1, 1, 2048)
        co = sample_coefficients(cfg, grid, 0.0)
        spec = eigensolve(co, grid, n_keep=4)
        g0 = spec.groups[0]
        A = dense_mode_matrix(co, grid, 0.0)
        S = np.sqrt(grid.dz)
        B = S[:, None] * A / S[None, :]
        lam_dense = eigh(B, eigvals_only=True, subset_by_index=(0, 3))
        assert abs(g0.lam[0] - lam_dense[0]) / lam_dense[0] < 1e-10
        np.testing.assert_allclose(g0.lam, lam_dense, rtol=1e-10)

    def test_orthonormal_and_positive(self):
        cfg, grid, co = two_layer(nz=96, K=(1, 5), D=(1, 3))
        spec = eigensolve(co, grid)
        w8 = spec.weights
        for g in spec.groups:
            gram = (g.w * w8[:, None]).T @ g.w
            assert np.abs(gram - np.eye(g.lam.size)).max() <= 1e-10
            assert g.lam[0] > 0.0
            assert np.all(np.diff(g.lam) >= -1e-12)


class TestFractionalNorm:
    def test_single_mode_closed_form(self):
        cfg, grid, co = single_layer(nz=64)
        spec = eigensolve(co, grid)
        g0 = next(g for g in spec.groups if g.k2 == 0.0)
        n = int(np.argmin(np.abs(g0.lam - 4.0)))  # nearest eigenvalue to 4
        psi = np.broadcast_to(g0.w[:, n], grid.shape).copy()
        lam = g0.lam[n]
        assert fractional_norm(psi, spec, 0.5) == pytest.approx(lam**0.25, rel=1e-12)

    def test_parseval_s0(self):
        cfg, grid, co = two_layer(nz=96)
        spec = eigensolve(co, grid)
        rng = np.random.default_rng(2)
        for _ in range(5):
            psi = random_band_field(grid, rng, 2, 2, 6, amplitude=rng.uniform(0.1, 3))
            assert fractional_norm(psi, spec, 0.0) == pytest.approx(
                l2_norm(psi, grid), rel=1e-10)

    def test_s1_matches_weighted_gradient(self):
        cfg, grid, co = two_layer(nz=96, K=(1, 2), D=(1, 4))
        spec = eigensolve(co, grid)
        psi = random_band_field(grid, np.random.default_rng(3), 2, 2, 5)
        a = fractional_norm(psi, spec, 1.0)
        b = weighted_grad_norm(psi, grid, w_center=co.D_center, w_face=co.D_face)
        assert a == pytest.approx(b, rel=1e-10)

    def test_interpolation_inequality(self):
        cfg, grid, co = two_layer(nz=64)
        spec = eigensolve(co, grid)
        rng = np.random.default_rng(4)
        s1, s2, th = 0.25, 1.5, 0.4
        s = th * s1 + (1 - th) * s2
        for _ in range(20):
            psi = random_band_field(grid, rng, 2, 2, 6)
            lhs = fractional_norm(psi, spec, s)
            rhs = fractional_norm(psi, spec, s1) ** th * fractional_norm(psi, spec, s2) ** (1 - th)
            assert lhs <= rhs * (1 + 1e-12)

    def test_spectral_monotonicity(self):
        cfg, grid, co = two_layer(nz=64)
        spec = eigensolve(co, grid)
        lam1 = spec.lambda_min()
        rng = np.random.default_rng(5)
        for s1, s2 in ((0.0, 1.0), (0.5, 0.75), (-1.0, 0.5)):
            psi = random_band_field(grid, rng, 2, 2, 6)
            lhs = fractional_norm(psi, spec, s1)
            rhs = lam1 ** ((s1 - s2) / 2) * fractional_norm(psi, spec, s2)
            assert lhs <= rhs * (1 + 1e-12)

    def test_s_range(self):
        cfg, grid, co = single_layer(nz=32)
        spec = eigensolve(co, grid)
        psi = random_band_field(grid, np.random.default_rng(0), 1, 1, 2)
        with pytest.raises(ValueError):
            fractional_norm(psi, spec, 2.5)

    def test_truncation_reported(self):
        cfg, grid, co = single_layer(nz=64)
        spec = eigensolve(co, grid, n_keep=3)
        rng = np.random.default_rng(6)
        psi = random_band_field(grid, rng, 2, 2, 30)
        with pytest.raises(ValueError, match="truncation"):
            fractional_norm(psi, spec, 0.5)

    def test_synthesize_roundtrip(self):
        cfg, grid, co = two_layer(nz=64)
        spec = eigensolve(co, grid)
        psi = random_band_field(grid, np.random.default_rng(7), 2, 2, 6)
        back = synthesize(expand(psi, spec))
        assert np.abs(back - psi).max() <= 1e-10 * np.abs(psi).max()


class TestKMethod:
    def test_single_mode_arctan_integrals(self):
        # int_0^inf lam/(1+lam t^2) dt = sqrt(lam) pi/2: lam=4 -> pi, lam=1 -> pi/2
        cfg, grid, co = single_layer(nz=512, nx=1, ny=1)
        spec = eigensolve(co, grid)
        g0 = spec.groups[0]
        for target, expect in ((4.0, np.pi), (1.0, np.pi / 2)):
            n = int(np.argmin(np.abs(g0.lam - target)))
            lam = g0.lam[n]
            psi = np.broadcast_to(g0.w[:, n], grid.shape).copy()
            km2 = kmethod_norm(psi, spec, 0.5) ** 2
            assert km2 == pytest.approx(lam**0.5 * np.pi / 2, rel=1e-12)
            # identity factor recovers the fractional norm
            assert (2 / np.pi) * np.sin(np.pi * 0.5) * km2 == pytest.approx(
                fractional_norm(psi, spec, 0.5) ** 2, rel=1e-12)
            if target == 4.0:
                assert km2 == pytest.approx(np.pi * (lam / 4.0) ** 0.5, rel=1e-12)

    def test_identity_random_fields(self):
        cfg, grid, co = two_layer(nz=48, nx=4, ny=4)
        spec = eigensolve(co, grid)
        rng = np.random.default_rng(8)
        for s in (0.55, 0.75, 0.9):
            for _ in range(5):
                psi = random_band_field(grid, rng, 2, 2, 6)
                km2 = kmethod_norm(psi, spec, s) ** 2
                fr2 = fractional_norm(psi, spec, s) ** 2
                assert (2 / np.pi) * np.sin(np.pi * s) * km2 == pytest.approx(fr2, rel=1e-10)

    def test_quadrature_path(self):
        cfg, grid, co = two_layer(nz=32, nx=4, ny=4)
        spec = eigensolve(co, grid)
        psi = random_band_field(grid, np.random.default_rng(9), 2, 2, 5)
        q = kmethod_norm(psi, spec, 0.75, method="quad")
        c = kmethod_norm(psi, spec, 0.75, method="closed")
        assert q == pytest.approx(c, rel=1e-6)

    def test_endpoints_rejected(self):
        cfg, grid, co = single_layer(nz=16, nx=2, ny=2)
        spec = eigensolve(co, grid)
        psi = np.zeros(grid.shape)
        for s in (0.0, 1.0):
            with pytest.raises(ValueError):
                kmethod_norm(psi, spec, s)


class TestAppendixProbes:
    def test_sine_poincare_ratio(self):
        cfg, grid, co = single_layer(nz=128)
        psi = np.broadcast_to(np.sin(np.pi * grid.zc), grid.shape).copy()
        rep = appendix_probes([psi], co, grid)
        assert rep.poincare_max == pytest.approx(1 / np.pi, rel=1e-3)

    def test_zero_field_skipped(self):
        cfg, grid, co = single_layer(nz=32)
        rep = appendix_probes([np.zeros(grid.shape)], co, grid)
        assert rep.n_skipped == 1 and rep.n_fields == 0

    def test_random_ensemble(self):
        cfg, grid, co = two_layer(nz=64, K=(1, 2), D=(1, 4))
        rng = np.random.default_rng(10)
        fields = [random_band_field(grid, rng, 3, 3, 8) for _ in range(100)]
        spec = eigensolve(co, grid)
        rep = appendix_probes(fields, co, grid, spec=spec)
        assert rep.poincare_max < 1.0
        assert 0 < rep.w_over_L_min <= rep.w_over_L_max < np.inf
        assert np.isfinite(rep.gn_c1) and rep.gn_c1 > 0
        assert np.isfinite(rep.gn_c2) and rep.gn_c2 > 0
        assert rep.layer_quotients and all(np.isfinite(v) for v in rep.layer_quotients.values())
        consts = rep.empirical_constants()
        assert set(consts) == {"C_u", "C_l", "C_1", "C_2"}
