"""Horizontal Fourier bookkeeping shared by the operator, pressure, and
time-stepping modules.

Fields are real arrays of shape (nx, ny, nz-or-nz+1); spectral counterparts
use a half-plane rfft layout of shape (nx, ny//2 + 1, ...) with forward
normalization, so Parseval reads  mean_xy |f|^2 = sum_k w_k |fhat_k|^2
with w_k = 2 for interior ky columns and 1 for ky = 0 (and ny/2 when even).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .domain import Grid

__all__ = ["HorizontalModes", "to_spectral", "to_physical"]


def to_spectral(f: np.ndarray) -> np.ndarray:
    if f.shape[1] == 1:  # quasi-2D: the y transform is the identity
        return np.fft.fft(f, axis=0, norm="forward")
    return np.fft.rfft2(f, axes=(0, 1), norm="forward")


def to_physical(fh: np.ndarray, nx: int, ny: int) -> np.ndarray:
    if ny == 1:
        return np.ascontiguousarray(np.fft.ifft(fh, axis=0, norm="forward").real)
    return np.fft.irfft2(fh, s=(nx, ny), axes=(0, 1), norm="forward")


@dataclass(frozen=True)
class HorizontalModes:
    """Wavenumbers, Parseval weights, dealias mask, and |k|^2 grouping."""

    L: float
    nx: int
    ny: int

    @cached_property
    def kx(self) -> np.ndarray:
        return 2.0 * np.pi / self.L * np.fft.fftfreq(self.nx, d=1.0 / self.nx)

    @cached_property
    def ky(self) -> np.ndarray:
        return 2.0 * np.pi / self.L * np.fft.rfftfreq(self.ny, d=1.0 / self.ny)

    @cached_property
    def nky(self) -> int:
        return self.ny // 2 + 1

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 per mode, shape (nx, nky)."""
        return self.kx[:, None] ** 2 + self.ky[None, :] ** 2

    @cached_property
    def parseval_weight(self) -> np.ndarray:
        """Multiplicity of each half-plane column, shape (nx, nky)."""
        w = np.full(self.nky, 2.0)
        w[0] = 1.0
        if self.ny % 2 == 0 and self.nky > 1:
            w[-1] = 1.0
        return np.broadcast_to(w[None, :], (self.nx, self.nky)).copy()

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds-rule mask, shape (nx, nky, 1); True = keep."""
        ix = np.abs(np.fft.fftfreq(self.nx, d=1.0 / self.nx))
        iy = np.abs(np.fft.rfftfreq(self.ny, d=1.0 / self.ny))
        mx = ix <= self.nx // 3 if self.nx > 1 else np.ones(1, bool)
        my = iy <= self.ny // 3 if self.ny > 1 else np.ones(1, bool)
        return (mx[:, None] & my[None, :])[:, :, None]

    @cached_property
    def k2_groups(self) -> list[tuple[float, np.ndarray, np.ndarray]]:
        """Distinct |k|^2 values with the (ix, iy) index arrays sharing each.

        Deterministic order: ascending |k|^2.
        """
        flat = self.k2.ravel()
        order = np.argsort(flat, kind="stable")
        groups: list[tuple[float, list[int]]] = []
        for idx in order:
            v = flat[idx]
            if groups and abs(groups[-1][0] - v) <= 1e-12 * max(1.0, v):
                groups[-1][1].append(idx)
            else:
                groups.append((float(v), [idx]))
        out = []
        for v, idxs in groups:
            ii = np.asarray(idxs)
            out.append((v, ii // self.nky, ii % self.nky))
        return out

    def dealias(self, fh: np.ndarray) -> np.ndarray:
        return fh * self.dealias_mask

    def ddx(self, fh: np.ndarray) -> np.ndarray:
        return 1j * self.kx[:, None, None] * fh

    def ddy(self, fh: np.ndarray) -> np.ndarray:
        return 1j * self.ky[None, :, None] * fh


def l2_norm(psi: np.ndarray, grid: Grid) -> float:
    """Discrete L^2(Omega) norm of a cell-centered field."""
    w = grid.dz * (grid.L * grid.L / (grid.nx * grid.ny))
    return float(np.sqrt(np.sum(psi * psi * w)))

def lr_norm(psi: np.ndarray, grid: Grid, r: float) -> float:
    """Cell-quadrature L^r(Omega) norm."""
    w = grid.dz * (grid.L * grid.L / (grid.nx * grid.ny))
    return float(np.sum(np.abs(psi) ** r * w) ** (1.0 / r))


def volume_mean(psi: np.ndarray, grid: Grid) -> float:
    w = grid.dz * (grid.L * grid.L / (grid.nx * grid.ny))
    return float(np.sum(psi * w) / (grid.L * grid.L * grid.H))
