"""Layered slab geometry, material coefficient profiles, and the background
concentration profile with its derivative bounds.

Conventions: the slab is (0, L)^2 x (-H, 0), periodic horizontally. Layers
are numbered top-down: layer j occupies (z_j, z_{j-1}) with z_0 = 0 and
z_l = -H, so K[0]/D[0] belong to the topmost layer. Vertical cell faces are
stored strictly decreasing from 0 to -H; cell i sits between faces i and i+1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "LayerConfig",
    "Grid",
    "CoefficientField",
    "BackgroundProfile",
    "build_layer_config",
    "build_grid",
    "sample_coefficients",
    "build_background",
    "choose_delta",
]

FloatArray = np.ndarray


@dataclass(frozen=True)
class LayerConfig:
    """Validated slab geometry plus per-layer permeability/diffusivity."""

    L: float
    H: float
    interfaces: tuple[float, ...]  # z_1 > z_2 > ... > z_{l-1}, all in (-H, 0)
    K: tuple[float, ...]           # per layer, top-down; length l
    D: tuple[float, ...]
    c_top: float
    c_bottom: float

    @property
    def n_layers(self) -> int:
        return len(self.K)

    @property
    def c_delta(self) -> float:
        return abs(self.c_top - self.c_bottom)

    @property
    def c_jump(self) -> float:
        """Signed top-minus-bottom concentration difference."""
        return self.c_top - self.c_bottom

    @property
    def K_min(self) -> float:
        return min(self.K)

    @property
    def K_max(self) -> float:
        return max(self.K)

    @property
    def D_min(self) -> float:
        return min(self.D)

    @property
    def D_max(self) -> float:
        return max(self.D)

    @property
    def min_layer_thickness(self) -> float:
        zs = (0.0,) + self.interfaces + (-self.H,)
        return min(zs[j] - zs[j + 1] for j in range(len(zs) - 1))

    def layer_edges(self) -> np.ndarray:
        """Layer boundaries including the walls, decreasing from 0 to -H."""
        return np.array((0.0,) + self.interfaces + (-self.H,))

    def layer_value_at(self, prop: Sequence[float], z: float) -> float:
        """Piecewise-constant layer value at height z (sharp profile)."""
        edges = self.layer_edges()
        for j in range(self.n_layers):
            if edges[j + 1] < z <= edges[j] or (j == self.n_layers - 1 and z <= edges[j]):
                return float(prop[j])
        return float(prop[0])


def build_layer_config(L, H, interfaces, K_list, D_list, c0, cH) -> LayerConfig:
    """Validate and freeze a layered-slab configuration.

    Raises ValueError naming the offending index for non-monotone interfaces,
    non-positive coefficients, or list-length mismatches.
    """
    L = float(L)
    H = float(H)
    if L <= 0.0 or H <= 0.0:
        raise ValueError(f"domain lengths must be positive, got L={L}, H={H}")
    interfaces = tuple(float(z) for z in interfaces)
    K_list = tuple(float(k) for k in K_list)
    D_list = tuple(float(d) for d in D_list)
    l = len(interfaces) + 1
    if len(K_list) != l or len(D_list) != l:
        raise ValueError(
            f"length mismatch: {len(interfaces)} interfaces imply {l} layers, "
            f"got {len(K_list)} K values and {len(D_list)} D values"
        )
    prev = 0.0
    for j, z in enumerate(interfaces, start=1):
        if not (-H < z < 0.0):
            raise ValueError(f"interface {j} at z={z} is not interior to (-{H}, 0)")
        if z >= prev:
            raise ValueError(f"non-monotone interfaces at index {j}: z_{j}={z} >= z_{j-1}={prev}")
        prev = z
    for j, k in enumerate(K_list, start=1):
        if k <= 0.0:
            raise ValueError(f"non-positive coefficient at layer {j}: K={k}")
    for j, d in enumerate(D_list, start=1):
        if d <= 0.0:
            raise ValueError(f"non-positive coefficient at layer {j}: D={d}")
    return LayerConfig(L=L, H=H, interfaces=interfaces, K=K_list, D=D_list,
                       c_top=float(c0), c_bottom=float(cH))


@dataclass(frozen=True)
class Grid:
    """Collocation grid: uniform periodic horizontal, nonuniform vertical faces.

    zf holds the nz+1 cell-face heights, strictly decreasing from 0 to -H.
    Derived arrays: zc cell centers, dz cell heights, dcf the nz+1
    center-to-center distances used by face gradients (half cells at walls).
    """

    L: float
    H: float
    nx: int
    ny: int
    zf: np.ndarray
    zc: np.ndarray = field(init=False, repr=False)
    dz: np.ndarray = field(init=False, repr=False)
    dcf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        zf = np.asarray(self.zf, dtype=np.float64)
        if zf[0] != 0.0 or abs(zf[-1] + self.H) > 1e-13 * max(1.0, self.H):
            raise ValueError("faces must run from 0 to -H")
        if not np.all(np.diff(zf) < 0.0):
            raise ValueError("faces must be strictly decreasing")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("horizontal counts must be >= 1")
        object.__setattr__(self, "zf", zf)
        zc = 0.5 * (zf[:-1] + zf[1:])
        dz = zf[:-1] - zf[1:]
        dcf = np.empty(zf.size)
        dcf[0] = zf[0] - zc[0]
        dcf[1:-1] = zc[:-1] - zc[1:]
        dcf[-1] = zc[-1] - zf[-1]
        object.__setattr__(self, "zc", zc)
        object.__setattr__(self, "dz", dz)
        object.__setattr__(self, "dcf", dcf)

    @property
    def nz(self) -> int:
        return self.zf.size - 1

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def dy(self) -> float:
        return self.L / self.ny

    @property
    def cell_volume_weights(self) -> np.ndarray:
        """Quadrature weight of one vertical column cell: dz * dx * dy."""
        return self.dz * (self.dx * self.dy)

    def has_face_at(self, z: float, tol: float = 1e-12) -> bool:
        return bool(np.any(np.abs(self.zf - z) <= tol * max(1.0, self.H)))


def _segment_counts(lengths: np.ndarray, nz: int, minimum: int) -> np.ndarray:
    """Allocate nz cells over segments proportionally (largest remainder),
    honoring a per-segment minimum. Deterministic."""
    nseg = lengths.size
    if nz < minimum * nseg:
        raise ValueError(f"nz={nz} too small for {nseg} segments with min {minimum} cells each")
    total = float(lengths.sum())
    raw = lengths / total * nz
    counts = np.maximum(np.floor(raw).astype(int), minimum)
    # largest-remainder adjustment to hit nz exactly
    while counts.sum() > nz:
        over = np.where(counts > minimum)[0]
        j = over[np.argmin((raw - counts)[over])]
        counts[j] -= 1
    rem = raw - counts
    while counts.sum() < nz:
        j = int(np.argmax(rem))
        counts[j] += 1
        rem[j] = -np.inf
    return counts


def build_grid(cfg: LayerConfig, nx: int, ny: int, nz: int, *,
               eps_values: Sequence[float] = (),
               extra_breakpoints: Sequence[float] = (),
               strip_width: float = 0.0,
               strip_cells: int = 0,
               min_segment_cells: int = 2) -> Grid:
    """Build a grid whose vertical faces are pinned to every interface z_j,
    to z_j +- eps for each requested transition half-width, and optionally to
    the two wall strips of width strip_width (each refined to >= strip_cells).

    Faces are uniform within each pinned segment.
    """
    bps = {0.0, -cfg.H}
    for z in cfg.interfaces:
        bps.add(z)
        for eps in eps_values:
            if eps > 0.0:
                bps.add(z - eps)
                bps.add(z + eps)
    for z in extra_breakpoints:
        bps.add(float(z))
    if strip_width > 0.0:
        bps.add(-strip_width)
        bps.add(-cfg.H + strip_width)
    pts = np.array(sorted(bps, reverse=True))
    if pts[0] != 0.0 or pts[-1] != -cfg.H or np.any(pts <= -cfg.H - 1e-15) or np.any(pts > 1e-15):
        raise ValueError("breakpoints must lie inside [-H, 0]")
    lengths = pts[:-1] - pts[1:]
    if np.any(lengths <= 0.0):
        raise ValueError("coincident breakpoints")
    counts = _segment_counts(lengths, nz, min_segment_cells)
    if strip_width > 0.0 and strip_cells > 0:
        for a, b in ((0.0, -strip_width), (-cfg.H + strip_width, -cfg.H)):
            need = strip_cells
            inside = np.where((pts[:-1] <= a + 1e-15) & (pts[1:] >= b - 1e-15))[0]
            have = counts[inside].sum()
            if have < need:
                deficit = need - have
                donors = np.argsort(-counts)
                for j in donors:
                    if j in inside:
                        continue
                    give = min(deficit, counts[j] - min_segment_cells)
                    if give > 0:
                        counts[j] -= give
                        counts[inside[np.argmax(lengths[inside])]] += give
                        deficit -= give
                    if deficit == 0:
                        break
    faces = [np.linspace(pts[i], pts[i + 1], counts[i] + 1)[:-1] for i in range(lengths.size)]
    zf = np.concatenate(faces + [np.array([-cfg.H])])
    return Grid(L=cfg.L, H=cfg.H, nx=nx, ny=ny, zf=zf)


@dataclass(frozen=True)
class CoefficientField:
    """K and D sampled at cell centers and faces for transition half-width eps.

    eps = 0 is the sharp profile: piecewise constant per layer with
    harmonic-mean values on interface faces (exact two-material flux).
    eps > 0 ramps linearly between the plateau below (at z_j - eps) and the
    plateau above (at z_j + eps); at z_j the value is the plateau average.
    """

    eps: float
    K_center: np.ndarray
    K_face: np.ndarray
    D_center: np.ndarray
    D_face: np.ndarray
    transition_cell: np.ndarray  # bool, cell lies inside a ramp

    @property
    def is_sharp(self) -> bool:
        return self.eps == 0.0


def _ramp_profile(values: Sequence[float], edges: np.ndarray, eps: float, z: np.ndarray) -> np.ndarray:
    """Continuous piecewise-linear profile: plateaus with 2*eps-wide ramps."""
    out = np.empty_like(z, dtype=np.float64)
    nlay = len(values)
    out[:] = values[0]
    for j in range(1, nlay):
        zj = edges[j]
        lo, hi = values[j], values[j - 1]  # below / above the interface
        below = z <= zj - eps
        out[below] = lo
        ramp = (z > zj - eps) & (z < zj + eps)
        if np.any(ramp):
            out[ramp] = lo + (z[ramp] - (zj - eps)) * (hi - lo) / (2.0 * eps)
        mid = np.abs(z - zj) <= 1e-14
        out[mid] = 0.5 * (lo + hi)
    return out


def _sharp_centers(values: Sequence[float], edges: np.ndarray, zc: np.ndarray) -> np.ndarray:
    out = np.empty_like(zc)
    for i, z in enumerate(zc):
        j = int(np.searchsorted(-edges, -z, side="left")) - 1
        j = min(max(j, 0), len(values) - 1)
        out[i] = values[j]
    return out


def _harmonic(a: float, b: float) -> float:
    if a == b:
        return a  # keeps identical-layer runs bitwise equal to the sharp path
    return 2.0 * a * b / (a + b)


def sample_coefficients(cfg: LayerConfig, grid: Grid, eps: float) -> CoefficientField:
    """Sample K and D on the grid for the given transition half-width.

    Requires eps = 0 or 2*eps below the thinnest layer, and grid faces
    aligned with every z_j (and z_j +- eps when eps > 0).
    """
    eps = float(eps)
    if eps < 0.0:
        raise ValueError("eps must be >= 0")
    if eps > 0.0 and 2.0 * eps >= cfg.min_layer_thickness:
        raise ValueError(
            f"eps={eps} too large: transition width 2*eps must be below the "
            f"thinnest layer ({cfg.min_layer_thickness})"
        )
    required = list(cfg.interfaces)
    if eps > 0.0:
        required += [z - eps for z in cfg.interfaces] + [z + eps for z in cfg.interfaces]
    for z in required:
        if not grid.has_face_at(z):
            raise ValueError(f"misaligned grid: no face at z={z}")

    edges = cfg.layer_edges()
    trans = np.zeros(grid.nz, dtype=bool)
    if eps == 0.0:
        Kc = _sharp_centers(cfg.K, edges, grid.zc)
        Dc = _sharp_centers(cfg.D, edges, grid.zc)
        Kf = np.empty(grid.nz + 1)
        Df = np.empty(grid.nz + 1)
        Kf[0], Kf[-1] = Kc[0], Kc[-1]
        Df[0], Df[-1] = Dc[0], Dc[-1]
        for f in range(1, grid.nz):
            Kf[f] = _harmonic(Kc[f - 1], Kc[f])
            Df[f] = _harmonic(Dc[f - 1], Dc[f])
    else:
        Kc = _ramp_profile(cfg.K, edges, eps, grid.zc)
        Dc = _ramp_profile(cfg.D, edges, eps, grid.zc)
        Kf = _ramp_profile(cfg.K, edges, eps, grid.zf)
        Df = _ramp_profile(cfg.D, edges, eps, grid.zf)
        for z in cfg.interfaces:
            trans |= (grid.zc > z - eps) & (grid.zc < z + eps)
    lo, hi = cfg.K_min, cfg.K_max
    if Kc.min() < lo - 1e-14 or Kc.max() > hi + 1e-14:
        raise AssertionError("sampled K escapes the layer extremes")
    return CoefficientField(eps=eps, K_center=Kc, K_face=Kf, D_center=Dc, D_face=Df,
                            transition_cell=trans)


@dataclass(frozen=True)
class BackgroundProfile:
    """Vertical background concentration profile, constant in the interior
    with C^1 piecewise-quadratic transitions inside the two wall strips of
    width delta.

    The construction is extremal: |phi'| attains c_delta/delta at each strip
    midpoint and |phi''| equals 2*c_delta/delta^2 inside the strips (with a
    sign flip at the midpoint), the tightest profile meeting both bounds.
    Cell means of phi' and phi'' are exact (differences of antiderivatives).
    """

    delta: float
    c_delta: float
    phi_center: np.ndarray
    phi_face: np.ndarray
    dphi_center: np.ndarray
    dphi_face: np.ndarray
    d2phi_center: np.ndarray
    dphi_cell_mean: np.ndarray
    d2phi_cell_mean: np.ndarray


def _phi_eval(z: np.ndarray, H: float, delta: float, c0: float, cH: float):
    """Pointwise phi, phi', phi'' of the bang-bang background profile."""
    m = 0.5 * (c0 + cH)
    a_top = c0 - m          # signed half-jump carried by the top strip
    a_bot = m - cH
    kappa_t = 4.0 * a_top / delta**2   # |phi''| = 2 c_delta / delta^2 when |a| = c_delta/2
    kappa_b = 4.0 * a_bot / delta**2
    phi = np.full_like(z, m, dtype=np.float64)
    dphi = np.zeros_like(phi)
    d2phi = np.zeros_like(phi)

    t = z >= -delta
    if np.any(t):
        s = z[t] + delta  # s in [0, delta], wall at s = delta
        lower = s <= 0.5 * delta
        sv = np.where(lower, s, delta - s)
        phi_half = m + 0.5 * kappa_t * sv**2
        phi[t] = np.where(lower, phi_half, c0 - 0.5 * kappa_t * sv**2)
        dphi[t] = kappa_t * sv
        d2phi[t] = np.where(lower, kappa_t, -kappa_t)

    b = z <= -H + delta
    if np.any(b):
        s = z[b] - (-H)  # s in [0, delta], wall at s = 0
        upper = s >= 0.5 * delta
        sv = np.where(upper, delta - s, s)
        phi[b] = np.where(upper, m - 0.5 * kappa_b * sv**2, cH + 0.5 * kappa_b * sv**2)
        dphi[b] = kappa_b * sv
        d2phi[b] = np.where(upper, -kappa_b, kappa_b)
    return phi, dphi, d2phi


def build_background(cfg: LayerConfig, grid: Grid, delta: float) -> BackgroundProfile:
    """Construct the background profile for strip width delta.

    delta must be positive and small enough that the strips stay clear of the
    first and last interface (so D * phi' crosses no coefficient jump).
    """
    delta = float(delta)
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    limit = 0.5 * cfg.H
    if cfg.interfaces:
        limit = min(limit, abs(cfg.interfaces[0]), cfg.H - abs(cfg.interfaces[-1]))
    if delta >= limit:
        raise ValueError(
            f"delta={delta} reaches an interface or the slab midline (limit {limit})"
        )
    c0, cH = cfg.c_top, cfg.c_bottom
    phi_c, dphi_c, d2phi_c = _phi_eval(grid.zc, cfg.H, delta, c0, cH)
    phi_f, dphi_f, _ = _phi_eval(grid.zf, cfg.H, delta, c0, cH)
    # exact cell means via the fundamental theorem of calculus
    dphi_mean = (phi_f[:-1] - phi_f[1:]) / grid.dz
    d2phi_mean = (dphi_f[:-1] - dphi_f[1:]) / grid.dz
    return BackgroundProfile(
        delta=delta, c_delta=cfg.c_delta,
        phi_center=phi_c, phi_face=phi_f,
        dphi_center=dphi_c, dphi_face=dphi_f,
        d2phi_center=d2phi_c,
        dphi_cell_mean=dphi_mean, d2phi_cell_mean=d2phi_mean,
    )


def geometric_delta_cap(cfg: LayerConfig) -> float:
    """Largest admissible strip width: strictly inside the wall-adjacent
    layers and below the slab midline."""
    limit = 0.5 * cfg.H
    if cfg.interfaces:
        limit = min(limit, abs(cfg.interfaces[0]), cfg.H - abs(cfg.interfaces[-1]))
    return 0.999 * limit


def choose_delta(cfg: LayerConfig, r: float, Cp: float) -> dict:
    """Strip width from the explicit a-priori formulas.

    Returns a dict with delta, the two ingredients delta1(r) and delta2, and
    the geometric cap. With c_delta = 0 the formulas are vacuous and the
    geometric cap is returned with a note.
    """
    if r <= 2.0:
        raise ValueError("r must exceed 2")
    if Cp <= 0.0:
        raise ValueError("Cp must be positive")
    cap = geometric_delta_cap(cfg)
    c = cfg.c_delta
    if c == 0.0:
        return {"delta": cap, "delta1": np.inf, "delta2": np.inf,
                "geometric_cap": cap, "note": "formulas vacuous: c_delta = 0"}
    d_min, k_max = cfg.D_min, cfg.K_max
    delta1 = (((r - 1.0) / r**2) * d_min
              / (c * cfg.H ** (2.0 / r) * k_max * (1.0 + Cp))) ** (r / (r - 2.0))
    delta2 = cfg.K_min * d_min / (32.0 * k_max**2 * c)
    return {"delta": min(delta1, delta2, cap), "delta1": delta1, "delta2": delta2,
            "geometric_cap": cap, "note": ""}
