"""TOML run configuration.

Documented keys (see README for the full schema):

  [domain]      L, H
  [layers]      interfaces, K, D
  [bc]          c_top, c_bottom
  [diffuse]     epsilon                       # 0 => sharp model
  [background]  delta, auto, r, cp            # auto = true derives delta from
                                              # the explicit formulas; cp is a
                                              # number or "estimate"
  [grid]        nx, ny, nz, strip_cells, min_segment_cells, extra_breakpoints,
                pin_eps                       # extra transition widths whose
                                              # ramp edges get grid faces
  [time]        dt, t_end, cadence, scheme, adaptive, cfl, dt_max
  [init]        kind ("random"|"zero"|"conduction"), seed, amplitude,
                kx_max, ky_max, n_max         # amplitude = target H^s norm
  [norms]       s
  [output]      snapshot_times
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .domain import (BackgroundProfile, CoefficientField, Grid, LayerConfig,
                     build_background, build_grid, build_layer_config,
                     choose_delta, sample_coefficients)
from .pressure import pressure_constant_estimate

__all__ = ["RunConfig", "load_config", "ProblemSetup", "build_problem", "make_initial_field"]


@dataclass
class RunConfig:
    L: float = 1.0
    H: float = 1.0
    interfaces: list = field(default_factory=list)
    K: list = field(default_factory=lambda: [1.0])
    D: list = field(default_factory=lambda: [1.0])
    c_top: float = 1.0
    c_bottom: float = 0.0
    epsilon: float = 0.0
    delta: float = 0.05
    auto_delta: bool = False
    delta_r: float = 4.0
    cp: object = "estimate"
    nx: int = 32
    ny: int = 1
    nz: int = 256
    strip_cells: int = 0
    min_segment_cells: int = 2
    extra_breakpoints: list = field(default_factory=list)
    pin_eps: list = field(default_factory=list)
    dt: float = 1e-3
    t_end: float = 1.0
    cadence: float = 0.02
    scheme: str = "imex1"
    adaptive: bool = False
    cfl: float = 0.4
    dt_max: float = 0.01
    init_kind: str = "random"
    seed: int = 1234
    amplitude: float = 1.0
    kx_max: int = 2
    ky_max: int = 2
    n_max: int = 6
    s: float = 0.75
    snapshot_times: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)


def load_config(path) -> RunConfig:
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    rc = RunConfig()
    dom = raw.get("domain", {})
    rc.L = float(dom.get("L", rc.L))
    rc.H = float(dom.get("H", rc.H))
    lay = raw.get("layers", {})
    rc.interfaces = list(lay.get("interfaces", rc.interfaces))
    rc.K = list(lay.get("K", rc.K))
    rc.D = list(lay.get("D", rc.D))
    bc = raw.get("bc", {})
    rc.c_top = float(bc.get("c_top", rc.c_top))
    rc.c_bottom = float(bc.get("c_bottom", rc.c_bottom))
    rc.epsilon = float(raw.get("diffuse", {}).get("epsilon", rc.epsilon))
    bg = raw.get("background", {})
    rc.delta = float(bg.get("delta", rc.delta))
    rc.auto_delta = bool(bg.get("auto", rc.auto_delta))
    rc.delta_r = float(bg.get("r", rc.delta_r))
    rc.cp = bg.get("cp", rc.cp)
    gr = raw.get("grid", {})
    rc.nx = int(gr.get("nx", rc.nx))
    rc.ny = int(gr.get("ny", rc.ny))
    rc.nz = int(gr.get("nz", rc.nz))
    rc.strip_cells = int(gr.get("strip_cells", rc.strip_cells))
    rc.min_segment_cells = int(gr.get("min_segment_cells", rc.min_segment_cells))
    rc.extra_breakpoints = list(gr.get("extra_breakpoints", rc.extra_breakpoints))
    rc.pin_eps = list(gr.get("pin_eps", rc.pin_eps))
    tm = raw.get("time", {})
    rc.dt = float(tm.get("dt", rc.dt))
    rc.t_end = float(tm.get("t_end", rc.t_end))
    rc.cadence = float(tm.get("cadence", rc.cadence))
    rc.scheme = str(tm.get("scheme", rc.scheme))
    rc.adaptive = bool(tm.get("adaptive", rc.adaptive))
    rc.cfl = float(tm.get("cfl", rc.cfl))
    rc.dt_max = float(tm.get("dt_max", rc.dt_max))
    ini = raw.get("init", {})
    rc.init_kind = str(ini.get("kind", rc.init_kind))
    rc.seed = int(ini.get("seed", rc.seed))
    rc.amplitude = float(ini.get("amplitude", rc.amplitude))
    rc.kx_max = int(ini.get("kx_max", rc.kx_max))
    rc.ky_max = int(ini.get("ky_max", rc.ky_max))
    rc.n_max = int(ini.get("n_max", rc.n_max))
    rc.s = float(raw.get("norms", {}).get("s", rc.s))
    rc.snapshot_times = list(raw.get("output", {}).get("snapshot_times", rc.snapshot_times))
    return rc


@dataclass
class ProblemSetup:
    """Assembled domain objects for one model (one transition width)."""

    cfg: LayerConfig
    grid: Grid
    coeffs: CoefficientField
    background: BackgroundProfile
    delta_info: dict
    cp: float
    cp_provenance: str


def resolve_delta(rc: RunConfig, cfg: LayerConfig, grid: Grid,
                  coeffs: CoefficientField) -> tuple[float, dict, float, str]:
    """Strip width plus its provenance; with [background].auto the explicit
    formulas are evaluated using the configured or estimated Cp."""
    if rc.auto_delta:
        if rc.cp == "estimate":
            cp = pressure_constant_estimate(coeffs, grid)["Cp"]
            prov = "estimate"
        else:
            cp = float(rc.cp)
            prov = "user"
        info = choose_delta(cfg, rc.delta_r, cp)
        return info["delta"], info, cp, prov
    cp = float(rc.cp) if rc.cp != "estimate" else 1.0
    prov = "user" if rc.cp != "estimate" else "default"
    info = {"delta": rc.delta, "delta1": np.nan, "delta2": np.nan,
            "geometric_cap": np.nan, "note": "manual delta"}
    return rc.delta, info, cp, prov


def build_problem(rc: RunConfig, eps: float | None = None,
                  grid: Grid | None = None) -> ProblemSetup:
    """Construct the layered slab, grid, coefficient samples, and background
    from a run configuration. eps overrides [diffuse].epsilon; a prebuilt
    common grid may be supplied for lockstep sweeps.

    With [background].auto and strip refinement requested, the grid is built
    twice: a preliminary grid supports the Cp estimate feeding the strip
    width, and the final grid pins and refines the resulting wall strips.
    """
    cfg = build_layer_config(rc.L, rc.H, rc.interfaces, rc.K, rc.D, rc.c_top, rc.c_bottom)
    eps_val = rc.epsilon if eps is None else float(eps)
    pin = sorted({eps_val, *map(float, rc.pin_eps)} - {0.0})

    def grid_with(strip_w: float, strip_cells: int) -> Grid:
        return build_grid(cfg, rc.nx, rc.ny, rc.nz, eps_values=pin,
                          extra_breakpoints=rc.extra_breakpoints,
                          strip_width=strip_w, strip_cells=strip_cells,
                          min_segment_cells=rc.min_segment_cells)

    if grid is not None:
        coeffs = sample_coefficients(cfg, grid, eps_val)
        delta, info, cp, prov = resolve_delta(rc, cfg, grid, coeffs)
    elif rc.auto_delta and rc.strip_cells > 0:
        prelim = grid_with(0.0, 0)
        delta, info, cp, prov = resolve_delta(rc, cfg, prelim,
                                              sample_coefficients(cfg, prelim, eps_val))
        grid = grid_with(delta, rc.strip_cells)
        coeffs = sample_coefficients(cfg, grid, eps_val)
    else:
        strip_w = rc.delta if rc.strip_cells > 0 else 0.0
        grid = grid_with(strip_w, rc.strip_cells)
        coeffs = sample_coefficients(cfg, grid, eps_val)
        delta, info, cp, prov = resolve_delta(rc, cfg, grid, coeffs)
    background = build_background(cfg, grid, delta)
    return ProblemSetup(cfg=cfg, grid=grid, coeffs=coeffs, background=background,
                        delta_info=info, cp=cp, cp_provenance=prov)


def make_initial_field(rc: RunConfig, setup: ProblemSetup, spectrum,
                       seed: int | None = None) -> np.ndarray:
    """Initial data per [init]: band-limited random field scaled to the target
    fractional norm, the conduction equilibrium, or zero."""
    from .experiments import conduction_state
    from .operator import fractional_norm, random_band_field

    kind = rc.init_kind
    if kind == "zero":
        return np.zeros(setup.grid.shape)
    if kind == "conduction":
        return conduction_state(setup.grid, setup.coeffs, setup.background)
    if kind != "random":
        raise ValueError(f"unknown init kind {rc.init_kind!r}")
    rng = np.random.default_rng(rc.seed if seed is None else seed)
    psi = random_band_field(setup.grid, rng, rc.kx_max, rc.ky_max, rc.n_max)
    hs = fractional_norm(psi, spectrum, rc.s)
    return psi * (rc.amplitude / hs)
