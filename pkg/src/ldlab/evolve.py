"""Time integration of the homogenized concentration field.

The transport equation  dpsi/dt + div(u psi) + phi_b' u_z - div(D grad psi)
= D phi_b''  is advanced with an IMEX scheme: implicit diffusion (backward
Euler reference; Crank-Nicolson / AB2 optional), explicit advection in
divergence form built from the divergence-free face fluxes (two-thirds-rule
dealiasing), explicit background coupling and source.

The state is carried in the horizontal spectral representation; per-mode
implicit solves share one stacked banded Cholesky factorization per dt.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .domain import BackgroundProfile, CoefficientField, Grid, LayerConfig, sample_coefficients
from .operator import (Spectrum, apply_L_modes, eigensolve, expand_modes,
                       vertical_tridiag, weighted_grad_norm)
from .pressure import FlowField, PressureSolver, divergence_modes
from .spectral import HorizontalModes, l2_norm, lr_norm, to_physical, to_spectral

logger = logging.getLogger(__name__)

__all__ = ["SimState", "TimeSeries", "Stepper", "step_imex", "cfl_dt", "run", "RunResult"]

CSV_HEADER = "t,l2,lr,grad,hs,nu_inst,nu_avg,divmax,dt"


@dataclass
class SimState:
    """Homogenized concentration field and run metadata at one instant."""

    t: float
    psih: np.ndarray           # spectral (nx, nky, nz)
    grid: Grid
    eps: float
    delta: float
    model: str                 # "sharp" | "diffuse"
    step: int = 0

    @property
    def psi(self) -> np.ndarray:
        return to_physical(self.psih, self.grid.nx, self.grid.ny)

    def check_finite(self):
        if not np.all(np.isfinite(self.psih)):
            raise RuntimeError(f"non-finite state at step {self.step}, t={self.t}")


@dataclass
class TimeSeries:
    """Diagnostic rows, one per output instant.

    Columns: t, the L^2 / L^r / sqrt(D)-gradient / fractional norms of psi,
    the instantaneous volume-averaged vertical flux and its running time
    average, the max divergence residual, and the step size.
    """

    data: np.ndarray           # (n_rows, 9)
    attrs: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, CSV_HEADER.split(",").index(name)]

    def to_csv(self, path):
        with open(path, "w", newline="\n") as f:
            f.write(CSV_HEADER + "\n")
            for row in self.data:
                f.write(",".join("%.17g" % v for v in row) + "\n")

    @classmethod
    def from_csv(cls, path, attrs: dict | None = None) -> "TimeSeries":
        with open(path) as f:
            header = f.readline().strip()
            if header != CSV_HEADER:
                raise ValueError(f"unexpected series header {header!r}")
            rows = [list(map(float, line.split(","))) for line in f if line.strip()]
        data = np.asarray(rows, dtype=np.float64).reshape(-1, 9)
        if np.any(np.diff(data[:, 0]) <= 0.0):
            raise ValueError("row times must be strictly increasing")
        return cls(data=data, attrs=dict(attrs or {}))


def nusselt_integrand(psi: np.ndarray, uz_faces: np.ndarray, grid: Grid) -> float:
    """(1/|Omega|) int u_z psi, with the face velocity averaged to centers."""
    uzc = 0.5 * (uz_faces[..., :-1] + uz_faces[..., 1:])
    return float(np.sum(uzc * psi * grid.dz) / (grid.nx * grid.ny * grid.H))


class Stepper:
    """IMEX integrator bound to one coefficient field and background."""

    def __init__(self, grid: Grid, coeffs: CoefficientField, background: BackgroundProfile,
                 scheme: str = "imex1"):
        if scheme not in ("imex1", "imex2"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.grid = grid
        self.coeffs = coeffs
        self.background = background
        self.scheme = scheme
        self.modes = HorizontalModes(grid.L, grid.nx, grid.ny)
        self.psolver = PressureSolver(coeffs, grid, self.modes)
        self._tri = vertical_tridiag(coeffs, grid)
        self._sz = np.sqrt(grid.dz)
        self._factors: dict[tuple[float, float], np.ndarray] = {}
        self._source = np.zeros((self.modes.nx, self.modes.nky, grid.nz), dtype=complex)
        self._source[0, 0, :] = coeffs.D_center * background.d2phi_cell_mean
        self._prev_explicit: np.ndarray | None = None

    def flow_of(self, psih: np.ndarray) -> FlowField:
        return self.psolver.velocity(psih)

    # -- implicit solve machinery

    def _factor(self, dt: float, theta: float) -> np.ndarray:
        key = (dt, theta)
        if key not in self._factors:
            lower, diag, upper = self._tri
            nz = self.grid.nz
            s = self._sz
            e_sym = (upper[:-1] * s[:-1] / s[1:]) * (theta * dt)
            k2flat = self.modes.k2.ravel()
            dstack = 1.0 + theta * dt * (diag[None, :] + k2flat[:, None] * self.coeffs.D_center)
            supblk = np.concatenate([e_sym, [0.0]])
            nblk = k2flat.size
            sup = np.zeros(nblk * nz)
            sup[1:] = np.tile(supblk, nblk)[: nblk * nz - 1]
            self._factors[key] = cholesky_banded(np.vstack([sup, dstack.ravel()]), check_finite=False)
            if len(self._factors) > 8:
                self._factors.pop(next(iter(self._factors)))
        return self._factors[key]

    def _implicit_solve(self, rhs: np.ndarray, dt: float, theta: float) -> np.ndarray:
        chol = self._factor(dt, theta)
        shp = rhs.shape
        b = (rhs.reshape(-1, self.grid.nz) * self._sz).ravel()
        x = cho_solve_banded((chol, False), b, check_finite=False)
        return (x.reshape(-1, self.grid.nz) / self._sz).reshape(shp)

    # -- explicit terms

    def explicit_terms(self, psih: np.ndarray, flow: FlowField,
                       psi_phys: np.ndarray | None = None) -> np.ndarray:
        """-div(u psi) - phi_b' u_z + D phi_b''  in spectral space."""
        g, m = self.grid, self.modes
        psi = to_physical(psih, g.nx, g.ny) if psi_phys is None else psi_phys
        psif = np.zeros(psi.shape[:-1] + (g.nz + 1,))
        psif[..., 1:-1] = 0.5 * (psi[..., :-1] + psi[..., 1:])
        fxh = m.dealias(to_spectral(flow.ux * psi))
        fyh = m.dealias(to_spectral(flow.uy * psi))
        fzh = m.dealias(to_spectral(flow.uz * psif))
        adv = m.ddx(fxh) + m.ddy(fyh)
        adv += (fzh[..., :-1] - fzh[..., 1:]) / g.dz
        uzc_h = 0.5 * (flow.uzhat[..., :-1] + flow.uzhat[..., 1:])
        coupling = self.background.dphi_cell_mean * uzc_h
        return -adv - coupling + self._source

    def advance(self, state: SimState, flow: FlowField, dt: float,
                new_t: float | None = None, psi_phys: np.ndarray | None = None) -> SimState:
        """One IMEX step using a flow field already computed for this state."""
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        expl = self.explicit_terms(state.psih, flow, psi_phys=psi_phys)
        if self.scheme == "imex1" or self._prev_explicit is None:
            rhs = state.psih + dt * expl
            theta = 1.0
        else:
            rhs = state.psih - 0.5 * dt * apply_L_modes(state.psih, self.coeffs,
                                                        self.grid, self.modes)
            rhs += dt * (1.5 * expl - 0.5 * self._prev_explicit)
            theta = 0.5
        psih_new = self._implicit_solve(rhs, dt, theta)
        psih_new *= self.modes.dealias_mask
        if self.scheme == "imex2":
            self._prev_explicit = expl
        t_new = state.t + dt if new_t is None else new_t
        return replace(state, t=t_new, psih=psih_new, step=state.step + 1)


def step_imex(state: SimState, coeffs: CoefficientField, background: BackgroundProfile,
              dt: float, scheme: str = "imex1") -> SimState:
    """Single IMEX step (one-shot helper; run() amortizes the factorizations)."""
    stepper = Stepper(state.grid, coeffs, background, scheme=scheme)
    flow = stepper.flow_of(state.psih)
    new = stepper.advance(state, flow, dt)
    new.check_finite()
    return new


def cfl_dt(flow: FlowField, grid: Grid, c_cfl: float = 0.4, dt_max: float = 0.01) -> float:
    """Advective step bound  c_cfl * min(dx/|ux|, dy/|uy|, dz/|uz|), capped."""
    mx, my, _ = flow.max_speed()
    rate = 0.0
    if mx > 0.0:
        rate = max(rate, mx / grid.dx)
    if my > 0.0:
        rate = max(rate, my / grid.dy)
    uzc = np.abs(flow.uz_center)
    if uzc.size and uzc.max() > 0.0:
        rate = max(rate, float((uzc / grid.dz).max()))
    if rate == 0.0:
        return dt_max
    return min(c_cfl / rate, dt_max)


def make_state(psi0: np.ndarray, grid: Grid, *, eps: float, delta: float,
               model: str, dealias: bool = True) -> SimState:
    modes = HorizontalModes(grid.L, grid.nx, grid.ny)
    psih = to_spectral(np.asarray(psi0, dtype=np.float64))
    if dealias:
        kept = psih * modes.dealias_mask
        lost = float(np.abs(psih - kept).max())
        if lost > 1e-12 * max(float(np.abs(psih).max()), 1e-300):
            logger.warning("initial state carried dealias-band energy %.3e; projected", lost)
        psih = kept
    return SimState(t=0.0, psih=psih, grid=grid, eps=eps, delta=delta, model=model)


@dataclass
class RunResult:
    series: TimeSeries
    states: dict[float, np.ndarray]     # requested sample times -> physical psi
    final: SimState


def run(cfg: LayerConfig, grid: Grid, coeffs: CoefficientField,
        background: BackgroundProfile, psi0: np.ndarray, t_end: float, *,
        dt: float, cadence: float, scheme: str = "imex1",
        s_norm: float = 0.75, spectrum: Spectrum | None = None,
        adaptive: bool = False, c_cfl: float = 0.4, dt_max: float | None = None,
        sample_times: Sequence[float] = (),
        on_snapshot: Callable[[SimState], None] | None = None,
        snapshot_times: Sequence[float] = ()) -> RunResult:
    """Advance from psi0 to t_end, emitting diagnostic rows every `cadence`.

    Fixed-dt runs keep t = n*dt exactly so paired sweeps share their time
    grids bitwise. Fractional norms are taken in the eigenbasis of the sharp
    operator (identified across transition widths); pass `spectrum` to reuse
    one decomposition across runs. Reruns with identical inputs reproduce the
    series bitwise: every reduction is a fixed-order numpy sum.
    """
    model = "sharp" if coeffs.is_sharp else "diffuse"
    state = make_state(psi0, grid, eps=coeffs.eps, delta=background.delta, model=model)
    stepper = Stepper(grid, coeffs, background, scheme=scheme)
    if spectrum is None:
        spectrum = eigensolve(sample_coefficients(cfg, grid, 0.0), grid)
    r_norm = 6.0 / (3.0 - 2.0 * s_norm)
    dt_max = dt if dt_max is None else dt_max

    every = max(int(round(cadence / dt)), 1)
    if abs(every * dt - cadence) > 1e-9 * max(cadence, dt):
        raise ValueError(f"cadence {cadence} is not a multiple of dt {dt}")
    if adaptive:
        n_steps = None
    else:
        n_steps = int(round(t_end / dt))
        if abs(n_steps * dt - t_end) > 1e-9 * max(t_end, dt):
            raise ValueError(f"t_end {t_end} is not a multiple of dt {dt}")

    def on_grid(ts: Sequence[float]) -> dict[int, float]:
        out = {}
        for tval in ts:
            nn = int(round(tval / dt))
            if abs(nn * dt - tval) > 1e-9 * max(tval, dt):
                raise ValueError(f"time {tval} not on the dt grid")
            out[nn] = float(tval)
        return out

    sample_set = on_grid(sample_times) if not adaptive else {}
    snap_set = on_grid(snapshot_times) if not adaptive else {}

    rows = []
    states: dict[float, np.ndarray] = {}
    nu_integral = 0.0
    nu_prev = 0.0
    dt_prev = 0.0
    warned_cfl = False
    n = 0
    while True:
        flow = stepper.flow_of(state.psih)
        psi = state.psi
        nu = nusselt_integrand(psi, flow.uz, grid)
        if n > 0:
            nu_integral += 0.5 * (nu_prev + nu) * dt_prev
        done = (n_steps is not None and n >= n_steps) or \
               (adaptive and state.t >= t_end - 1e-12)
        if n % every == 0 or done:
            l2 = l2_norm(psi, grid)
            lr = lr_norm(psi, grid, r_norm)
            grad = weighted_grad_norm(psi, grid, w_center=coeffs.D_center,
                                      w_face=coeffs.D_face)
            hs = expand_modes(state.psih, spectrum).hs_norm(s_norm)
            divmax = float(np.abs(to_physical(divergence_modes(flow, stepper.modes),
                                              grid.nx, grid.ny)).max())
            nu_avg = nu_integral / state.t if state.t > 0.0 else nu
            row = (state.t, l2, lr, grad, hs, nu, nu_avg, divmax, dt_prev if n else dt)
            if not all(np.isfinite(row)):
                raise RuntimeError(f"non-finite diagnostics at step {state.step}")
            rows.append(row)
        if n in sample_set:
            states[sample_set[n]] = psi
        if n in snap_set and on_snapshot is not None:
            on_snapshot(state)
        if done:
            break
        if adaptive:
            step_dt = min(cfl_dt(flow, grid, c_cfl, dt_max), t_end - state.t)
            state = stepper.advance(state, flow, step_dt, psi_phys=psi)
        else:
            step_dt = dt
            if n % every == 0 and not warned_cfl:
                bound = cfl_dt(flow, grid, c_cfl, np.inf)
                if step_dt > bound:
                    logger.warning("fixed dt=%g exceeds the advective bound %g at t=%g",
                                   step_dt, bound, state.t)
                    warned_cfl = True
            state = stepper.advance(state, flow, dt, new_t=(n + 1) * dt, psi_phys=psi)
        nu_prev = nu
        dt_prev = step_dt
        n += 1
        if n % every == 0:
            state.check_finite()

    data = np.asarray(rows, dtype=np.float64)
    attrs = {"model": model, "eps": coeffs.eps, "delta": background.delta,
             "s": s_norm, "r": r_norm, "dt": dt, "scheme": scheme,
             "grid": list(grid.shape), "L": grid.L, "H": grid.H}
    return RunResult(series=TimeSeries(data=data, attrs=attrs), states=states, final=state)
