"""Finite-volume discretization of the diffusion operator  psi -> -div(D grad psi)
with Dirichlet top/bottom walls and periodic horizontal directions, its
per-mode Sturm-Liouville eigendecomposition, fractional norms built on the
eigenbasis, the K-method interpolation-norm identity, and the embedding
inequality probes that produce empirical constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigh_tridiagonal

from .domain import CoefficientField, Grid
from .spectral import HorizontalModes, to_physical, to_spectral, l2_norm, lr_norm

__all__ = [
    "Spectrum",
    "FieldExpansion",
    "vertical_tridiag",
    "apply_L",
    "apply_L_modes",
    "eigensolve",
    "fractional_norm",
    "kmethod_norm",
    "grad_z_faces",
    "weighted_grad_norm",
    "appendix_probes",
    "random_band_field",
]


# ---------------------------------------------------------------------------
# discrete operator

def vertical_tridiag(coeffs: CoefficientField, grid: Grid):
    """Tridiagonal arrays (lower, diag, upper) of the vertical part of the
    operator, boundary faces carrying the Dirichlet wall condition.

    Row i:  diag[i] psi_i + lower[i] psi_{i-1} + upper[i] psi_{i+1},
    lower[0] = upper[-1] = 0.
    """
    Df, dz, dcf = coeffs.D_face, grid.dz, grid.dcf
    g = Df / dcf  # face conductances
    diag = (g[:-1] + g[1:]) / dz
    lower = np.zeros(grid.nz)
    upper = np.zeros(grid.nz)
    lower[1:] = -g[1:-1] / dz[1:]
    upper[:-1] = -g[1:-1] / dz[:-1]
    return lower, diag, upper


def symmetrized_tridiag(coeffs: CoefficientField, grid: Grid, k2: float = 0.0):
    """(d, e) of the symmetric tridiagonal similar to the per-mode operator
    under the volume weights: B = S A S^{-1}, S = diag(sqrt(dz))."""
    lower, diag, upper = vertical_tridiag(coeffs, grid)
    d = diag + k2 * coeffs.D_center
    s = np.sqrt(grid.dz)
    e = upper[:-1] * s[:-1] / s[1:]
    return d, e


def _tridiag_matvec(lower, diag, upper, v):
    """Apply the tridiagonal to v along its last axis."""
    out = diag * v
    out[..., 1:] += lower[1:] * v[..., :-1]
    out[..., :-1] += upper[:-1] * v[..., 1:]
    return out


def apply_L_modes(psih: np.ndarray, coeffs: CoefficientField, grid: Grid,
                  modes: HorizontalModes) -> np.ndarray:
    """Apply the operator in spectral space; psih shape (nx, nky, nz)."""
    lower, diag, upper = vertical_tridiag(coeffs, grid)
    out = _tridiag_matvec(lower, diag, upper, psih)
    out += modes.k2[:, :, None] * coeffs.D_center * psih
    return out


def apply_L(psi: np.ndarray, coeffs: CoefficientField, grid: Grid) -> np.ndarray:
    """Flux-form application of  -div(D grad .)  to a cell-centered field."""
    if psi.shape != grid.shape:
        raise ValueError(f"field shape {psi.shape} does not match grid {grid.shape}")
    modes = HorizontalModes(grid.L, grid.nx, grid.ny)
    return to_physical(apply_L_modes(to_spectral(psi), coeffs, grid, modes),
                       grid.nx, grid.ny)


# ---------------------------------------------------------------------------
# eigendecomposition

@dataclass(frozen=True)
class SpectrumGroup:
    """Eigenpairs shared by all horizontal modes with one |k|^2 value."""

    k2: float
    ix: np.ndarray
    iy: np.ndarray
    lam: np.ndarray        # ascending, length m
    w: np.ndarray          # (nz, m), orthonormal under weights L^2 * dz


@dataclass(frozen=True)
class Spectrum:
    """Per-horizontal-mode eigendecomposition of the diffusion operator."""

    grid: Grid
    modes: HorizontalModes
    eps: float
    groups: tuple[SpectrumGroup, ...]
    n_keep: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def weights(self) -> np.ndarray:
        """Modal quadrature weights L^2 * dz."""
        return self.grid.dz * (self.grid.L * self.grid.L)

    def lambda_min(self) -> float:
        return min(float(g.lam[0]) for g in self.groups)

    def quad_integrals(self, s: float) -> list[np.ndarray]:
        """Numerically integrated per-eigenvalue K-functor integrals,
        cached per s (adaptive quadrature on the split (0, 1/sqrt(lam)),
        (1/sqrt(lam), inf))."""
        key = ("quad", round(float(s), 12))
        if key not in self._cache:
            vals = []
            for g in self.groups:
                out = np.empty(g.lam.size)
                for i, lam in enumerate(g.lam):
                    out[i] = _kfunctor_integral_quad(float(lam), float(s))
                vals.append(out)
            self._cache[key] = vals
        return self._cache[key]


@lru_cache(maxsize=4096)
def _kfunctor_integral_quad(lam: float, s: float) -> float:
    f = lambda t: t ** (1.0 - 2.0 * s) * lam / (1.0 + t * t * lam)
    split = 1.0 / np.sqrt(lam)
    a, _ = quad(f, 0.0, split, limit=200)
    b, _ = quad(f, split, np.inf, limit=200)
    return a + b


def kfunctor_integral_closed(lam: np.ndarray, s: float) -> np.ndarray:
    """Closed form of  int_0^inf t^{1-2s} lam/(1+t^2 lam) dt  =  lam^s pi/(2 sin pi s)."""
    return lam ** s * (np.pi / (2.0 * np.sin(np.pi * s)))


def eigensolve(coeffs: CoefficientField, grid: Grid, mode_cutoff: int | None = None,
               n_keep: int | None = None) -> Spectrum:
    """Eigendecomposition per horizontal mode via symmetric tridiagonal solves.

    Modes sharing |k|^2 share one solve. mode_cutoff limits |mode index| in
    each horizontal direction; n_keep truncates the per-mode eigen count.
    """
    modes = HorizontalModes(grid.L, grid.nx, grid.ny)
    nz = grid.nz
    keep = nz if n_keep is None else min(n_keep, nz)
    s = np.sqrt(grid.dz)
    Lfac = grid.L
    groups = []
    for k2, ix, iy in modes.k2_groups:
        if mode_cutoff is not None:
            ixw = np.minimum(ix, grid.nx - ix)  # wrapped |index|
            sel = (ixw <= mode_cutoff) & (iy <= mode_cutoff)
            if not np.any(sel):
                continue
            ix, iy = ix[sel], iy[sel]
        d, e = symmetrized_tridiag(coeffs, grid, k2)
        try:
            if keep == nz:
                lam, v = eigh_tridiagonal(d, e)
            else:
                lam, v = eigh_tridiagonal(d, e, select="i", select_range=(0, keep - 1))
        except np.linalg.LinAlgError as err:  # pragma: no cover - LAPACK failure
            raise RuntimeError(f"eigensolver failed for |k|^2={k2}: {err}") from err
        if lam[0] <= 0.0:
            raise RuntimeError(f"nonpositive eigenvalue {lam[0]} for |k|^2={k2}")
        w = v / (s[:, None] * Lfac)  # orthonormal under L^2 * dz
        groups.append(SpectrumGroup(k2=k2, ix=ix, iy=iy, lam=lam, w=w))
    spec = Spectrum(grid=grid, modes=modes, eps=coeffs.eps, groups=tuple(groups), n_keep=keep)
    _validate_spectrum(spec)
    return spec


def _validate_spectrum(spec: Spectrum, tol: float = 1e-10):
    w8 = spec.weights
    for g in spec.groups[:4] + spec.groups[-1:]:
        gram = (g.w * w8[:, None]).T @ g.w
        if np.abs(gram - np.eye(g.lam.size)).max() > tol:
            raise RuntimeError(f"eigenvector orthonormality violated for |k|^2={g.k2}")
        if np.any(np.diff(g.lam) < -1e-12):
            raise RuntimeError(f"eigenvalues not ascending for |k|^2={g.k2}")


@dataclass(frozen=True)
class FieldExpansion:
    """Eigenbasis coefficients of a field, grouped like the spectrum.

    coeffs[g] has shape (n_modes_in_group, n_keep), complex; the Parseval
    weight of each mode (1 or 2 for rfft half-plane columns) is kept
    alongside so quadratic sums reproduce L^2(Omega) quantities.
    """

    spectrum: Spectrum
    coeffs: tuple[np.ndarray, ...]
    mode_weight: tuple[np.ndarray, ...]
    tail_deficit: float

    def quadratic_sum(self, factors: Sequence[np.ndarray] | None = None) -> float:
        """sum over modes of w_mode * sum_n f_n |a_n|^2 (f defaults to 1)."""
        tot = 0.0
        for gi, a in enumerate(self.coeffs):
            q = np.abs(a) ** 2
            if factors is not None:
                q = q * factors[gi]
            tot += float(np.sum(self.mode_weight[gi][:, None] * q))
        return tot

    def hs_norm(self, s: float) -> float:
        return float(np.sqrt(self.quadratic_sum([g.lam ** s for g in self.spectrum.groups])))


def expand(psi: np.ndarray, spec: Spectrum) -> FieldExpansion:
    """Project a cell-centered field onto the eigenbasis."""
    grid = spec.grid
    if psi.shape != grid.shape:
        raise ValueError(f"field shape {psi.shape} does not match grid {grid.shape}")
    psih = to_spectral(psi)
    return expand_modes(psih, spec)


def expand_modes(psih: np.ndarray, spec: Spectrum) -> FieldExpansion:
    w8 = spec.weights
    pw = spec.modes.parseval_weight
    coeffs = []
    weights = []
    mass = 0.0
    captured = 0.0
    for g in spec.groups:
        v = psih[g.ix, g.iy, :]                      # (ng, nz)
        a = v @ (g.w * w8[:, None])                  # (ng, m)
        coeffs.append(a)
        weights.append(pw[g.ix, g.iy])
        mass += float(np.sum(pw[g.ix, g.iy][:, None] * np.abs(v) ** 2 * w8))
        captured += float(np.sum(pw[g.ix, g.iy][:, None] * np.abs(a) ** 2))
    deficit = abs(mass - captured) / mass if mass > 0.0 else 0.0
    return FieldExpansion(spectrum=spec, coeffs=tuple(coeffs), mode_weight=tuple(weights),
                          tail_deficit=deficit)


def synthesize(exp: FieldExpansion) -> np.ndarray:
    """Reconstruct the cell-centered field from eigenbasis coefficients."""
    spec = exp.spectrum
    grid = spec.grid
    psih = np.zeros((spec.modes.nx, spec.modes.nky, grid.nz), dtype=complex)
    for g, a in zip(spec.groups, exp.coeffs):
        psih[g.ix, g.iy, :] = a @ g.w.T
    return to_physical(psih, grid.nx, grid.ny)


def fractional_norm(psi: np.ndarray, spec: Spectrum, s: float,
                    tail_tol: float = 1e-8) -> float:
    """Fractional operator norm  ( sum lam^s |a|^2 )^{1/2}  over the eigenbasis.

    s = 0 reproduces the discrete L^2 norm; s = 1 the sqrt(D)-weighted
    gradient norm. Raises if the truncated expansion misses more than
    tail_tol of the field's L^2 mass.
    """
    if not -2.0 <= s <= 2.0:
        raise ValueError("s must lie in [-2, 2]")
    ex = expand(psi, spec)
    if ex.tail_deficit > tail_tol:
        raise ValueError(
            f"truncation insufficient: Parseval tail deficit {ex.tail_deficit:.2e}"
        )
    return ex.hs_norm(s)


def kmethod_norm(psi: np.ndarray, spec: Spectrum, s: float, method: str = "closed") -> float:
    """Interpolation norm between the L^2 space and the gradient space via the
    K-functor; per mode the functor integral has the closed form
    lam^s pi/(2 sin pi s), and  (2/pi) sin(pi s) * norm^2  recovers the
    squared fractional norm. method="quad" integrates numerically instead.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie strictly inside (0, 1)")
    ex = expand(psi, spec)
    if method == "closed":
        factors = [kfunctor_integral_closed(g.lam, s) for g in spec.groups]
    elif method == "quad":
        factors = spec.quad_integrals(s)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.sqrt(ex.quadratic_sum(factors)))


# ---------------------------------------------------------------------------
# discrete gradient machinery

def grad_z_faces(psi: np.ndarray, grid: Grid) -> np.ndarray:
    """Vertical derivative at the nz+1 faces, Dirichlet zero wall values."""
    g = np.empty(psi.shape[:-1] + (grid.nz + 1,))
    g[..., 0] = -psi[..., 0] / grid.dcf[0]
    g[..., 1:-1] = (psi[..., :-1] - psi[..., 1:]) / grid.dcf[1:-1]
    g[..., -1] = psi[..., -1] / grid.dcf[-1]
    return g


def _horizontal_grads(psi: np.ndarray, grid: Grid):
    modes = HorizontalModes(grid.L, grid.nx, grid.ny)
    ph = to_spectral(psi)
    gx = to_physical(modes.ddx(ph), grid.nx, grid.ny)
    gy = to_physical(modes.ddy(ph), grid.nx, grid.ny)
    return gx, gy


def weighted_grad_norm(psi: np.ndarray, grid: Grid,
                       w_center: np.ndarray | None = None,
                       w_face: np.ndarray | None = None) -> float:
    """|| sqrt(w) grad psi ||_{L^2}: horizontal parts at centers with w_center,
    vertical part at faces with w_face. Defaults to unweighted gradient.
    Coincides with <L psi, psi> when fed the coefficient's D arrays."""
    wc = np.ones(grid.nz) if w_center is None else w_center
    wf = np.ones(grid.nz + 1) if w_face is None else w_face
    hx = grid.L * grid.L / (grid.nx * grid.ny)
    gx, gy = _horizontal_grads(psi, grid)
    horiz = np.sum((gx * gx + gy * gy) * wc * grid.dz) * hx
    gz = grad_z_faces(psi, grid)
    vert = np.sum(gz * gz * wf * grid.dcf) * hx
    return float(np.sqrt(horiz + vert))


def grad_z_norm(psi: np.ndarray, grid: Grid) -> float:
    gz = grad_z_faces(psi, grid)
    hx = grid.L * grid.L / (grid.nx * grid.ny)
    return float(np.sqrt(np.sum(gz * gz * grid.dcf) * hx))


def lr_grad_norm(psi: np.ndarray, grid: Grid, r: float) -> float:
    """Cell-quadrature L^r norm of |grad psi| with face z-derivatives
    averaged back to centers."""
    gx, gy = _horizontal_grads(psi, grid)
    gz = grad_z_faces(psi, grid)
    gzc = 0.5 * (gz[..., :-1] + gz[..., 1:])
    mag = np.sqrt(gx * gx + gy * gy + gzc * gzc)
    return lr_norm(mag, grid, r)


# ---------------------------------------------------------------------------
# inequality probes and empirical constants

def random_band_field(grid: Grid, rng: np.random.Generator, kx_max: int = 2,
                      ky_max: int = 2, n_max: int = 6, amplitude: float = 1.0) -> np.ndarray:
    """Band-limited random field vanishing at both walls: a superposition of
    horizontal Fourier modes times low vertical sine profiles."""
    x = np.arange(grid.nx) * grid.dx
    y = np.arange(grid.ny) * grid.dy
    X, Y = np.meshgrid(x, y, indexing="ij")
    out = np.zeros(grid.shape)
    kxs = range(0, min(kx_max, max(grid.nx // 3, 0)) + 1)
    kys = range(0, min(ky_max, max(grid.ny // 3, 0)) + 1)
    for m in kxs:
        for n in kys:
            for p in range(1, n_max + 1):
                c, ph = rng.normal(), rng.uniform(0, 2 * np.pi)
                horiz = np.cos(2 * np.pi * (m * X + n * Y) / grid.L + ph)
                vert = np.sin(p * np.pi * grid.zc / grid.H)
                out += c * horiz[:, :, None] * vert
    nrm = l2_norm(out, grid)
    return out * (amplitude / nrm) if nrm > 0 else out


@dataclass
class ProbeReport:
    """Empirical ratio report for the embedding inequalities."""

    n_fields: int
    n_skipped: int
    poincare_max: float
    poincare_ratios: np.ndarray
    w_over_L_max: float
    w_over_L_min: float
    gn_c1: float
    gn_c2: float
    r: float
    layer_quotients: dict[int, float] | None = None

    def empirical_constants(self) -> dict[str, float]:
        return {"C_u": self.w_over_L_max, "C_l": self.w_over_L_min,
                "C_1": self.gn_c1, "C_2": self.gn_c2}


def _w_norm(psi: np.ndarray, coeffs: CoefficientField, grid: Grid) -> float:
    """Discrete surrogate of the second-order weighted space norm:
    ||psi||_{H^1}^2 + ||dx psi||_{H^1}^2 + ||dy psi||_{H^1}^2 + ||D dz psi||_{H^1}^2,
    interior faces carrying the vertical derivatives of derived fields."""
    hx = grid.L * grid.L / (grid.nx * grid.ny)

    def h1sq(f: np.ndarray) -> float:
        gx, gy = _horizontal_grads(f, grid)
        dzc = grid.dcf[1:-1]
        gz = (f[..., :-1] - f[..., 1:]) / dzc
        zc_w = dzc
        val = np.sum((f * f + gx * gx + gy * gy) * grid.dz) * hx
        val += np.sum(gz * gz * zc_w) * hx
        return float(val)

    gx, gy = _horizontal_grads(psi, grid)
    h = coeffs.D_face * grad_z_faces(psi, grid)  # D dz psi at faces
    hgx, hgy = _horizontal_grads(h, grid)
    dh = (h[..., :-1] - h[..., 1:]) / grid.dz  # cell-centered z-derivative
    hterm = np.sum((h * h + hgx * hgx + hgy * hgy) * grid.dcf) * hx \
        + np.sum(dh * dh * grid.dz) * hx
    base = l2_norm(psi, grid) ** 2 + weighted_grad_norm(psi, grid) ** 2
    return float(np.sqrt(base + h1sq(gx) + h1sq(gy) + hterm))


def _layer_slobodeckij_quotient(psi: np.ndarray, grid: Grid, edges: np.ndarray,
                                s: float, hs_plus1: float) -> dict[int, float]:
    """Per-layer ratio of a vertical Sobolev-Slobodeckij surrogate of order
    1+s (gradient plus z-only Slobodeckij seminorm of the z-derivative,
    column-summed) over the fractional operator norm of order 1+s."""
    out = {}
    gz = grad_z_faces(psi, grid)
    zf = grid.zf
    hx = grid.L * grid.L / (grid.nx * grid.ny)
    for j in range(len(edges) - 1):
        hi, lo = edges[j], edges[j + 1]
        sel = np.where((zf <= hi + 1e-14) & (zf >= lo - 1e-14))[0]
        if sel.size < 3:
            continue
        z = zf[sel]
        g = gz[..., sel]
        dzpair = np.abs(z[:, None] - z[None, :])
        np.fill_diagonal(dzpair, 1.0)
        wpair = np.outer(grid.dcf[sel], grid.dcf[sel])
        diff2 = (g[..., :, None] - g[..., None, :]) ** 2
        semi = np.sum(diff2 * (wpair / dzpair ** (1.0 + 2.0 * s))) * hx
        gradsq = np.sum(g * g * grid.dcf[sel]) * hx
        out[j + 1] = float(np.sqrt(gradsq + semi) / hs_plus1) if hs_plus1 > 0 else np.inf
    return out


def appendix_probes(fields: Sequence[np.ndarray], coeffs: CoefficientField, grid: Grid,
                    r: float = 4.0, spec: Spectrum | None = None,
                    s: float = 0.75) -> ProbeReport:
    """Evaluate the embedding-inequality ratios on an ensemble of wall-vanishing
    fields:

    (i)  ||psi|| / (H ||dz psi||)           -- must stay strictly below 1,
    (ii) W-surrogate norm / ||L psi||       -- finite; sup/inf recorded,
    (iii) ||psi||_{L^r} / (||psi||^{3/r-1/2} ||grad psi||^{3/2-3/r})  and the
         gradient analogue with the W norm -- finite; sup recorded.

    Zero fields are skipped. If a spectrum is supplied, per-layer quotients of
    a vertical Slobodeckij surrogate of order 1+s over the fractional norm are
    recorded for the last field.
    """
    poin, wol, c1s, c2s = [], [], [], []
    skipped = 0
    last = None
    for psi in fields:
        nrm = l2_norm(psi, grid)
        if nrm == 0.0:
            skipped += 1
            continue
        last = psi
        gz = grad_z_norm(psi, grid)
        poin.append(nrm / (grid.H * gz))
        lpsi = apply_L(psi, coeffs, grid)
        wnorm = _w_norm(psi, coeffs, grid)
        wol.append(wnorm / l2_norm(lpsi, grid))
        gn = weighted_grad_norm(psi, grid)
        c1s.append(lr_norm(psi, grid, r) / (nrm ** (3.0 / r - 0.5) * gn ** (1.5 - 3.0 / r)))
        c2s.append(lr_grad_norm(psi, grid, r)
                   / (gn ** (3.0 / r - 0.5) * wnorm ** (1.5 - 3.0 / r)))
    quotients = None
    if spec is not None and last is not None:
        hs1 = fractional_norm(last, spec, 1.0 + s)
        lay_edges = _layer_edges_from_grid(grid, coeffs)
        quotients = _layer_slobodeckij_quotient(last, grid, lay_edges, s, hs1)
    poin = np.asarray(poin)
    return ProbeReport(
        n_fields=len(poin), n_skipped=skipped,
        poincare_max=float(poin.max()) if poin.size else 0.0,
        poincare_ratios=poin,
        w_over_L_max=float(np.max(wol)) if wol else 0.0,
        w_over_L_min=float(np.min(wol)) if wol else 0.0,
        gn_c1=float(np.max(c1s)) if c1s else 0.0,
        gn_c2=float(np.max(c2s)) if c2s else 0.0,
        r=r, layer_quotients=quotients,
    )


def _layer_edges_from_grid(grid: Grid, coeffs: CoefficientField) -> np.ndarray:
    """Recover layer edges from jumps of the sharp center profile (falls back
    to the whole slab when the profile is constant)."""
    edges = [0.0]
    Dc = coeffs.D_center
    tr = coeffs.transition_cell
    for i in range(1, grid.nz):
        if Dc[i] != Dc[i - 1] and not (tr[i] or tr[i - 1]):
            edges.append(float(grid.zf[i]))
    edges.append(-grid.H)
    return np.array(edges)
