"""Figure rendering from the simulation lab's documented file schemas.

Inputs:
  decay        series.csv (header t,l2,lr,grad,hs,nu_inst,nu_avg,divmax,dt)
               plus the constants-ledger JSON for the bound overlay
  convergence  sweep_report.json  (eps, sample_times, l2sq_err, fits)
  nusselt      nusselt report JSON (per_eps running averages)
  spectrum     eigs.csv (header kx,ky,n,lambda)
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("decay", "convergence", "nusselt", "spectrum")
SERIES_HEADER = ["t", "l2", "lr", "grad", "hs", "nu_inst", "nu_avg", "divmax", "dt"]

plt.rcParams["svg.hashsalt"] = "ldfigs"
plt.rcParams["figure.figsize"] = (6.4, 4.2)


@dataclass
class FigureSpec:
    """One figure request: input paths, kind, axis options, output target."""

    kind: str
    inputs: list
    out: str
    ledger: str | None = None
    logy: bool = True
    title: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r} (expected one of {KINDS})")
        for p in list(self.inputs) + ([self.ledger] if self.ledger else []):
            if not Path(p).exists():
                raise FileNotFoundError(f"input {p} does not exist")


def _read_series(path) -> dict:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise ValueError(f"schema mismatch in {path}: header {header}")
        rows = [list(map(float, r)) for r in reader if r]
    if not rows:
        raise ValueError(f"no rows in {path}")
    arr = np.asarray(rows)
    return {name: arr[:, j] for j, name in enumerate(SERIES_HEADER)}


def _read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _savefig(fig, out):
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(out, metadata=_no_date_metadata(out.suffix))
    except OSError as err:
        raise OSError(f"cannot write figure to {out}: {err}") from err
    finally:
        plt.close(fig)
    return out


def _no_date_metadata(suffix: str) -> dict | None:
    if suffix == ".svg":
        return {"Date": None}
    if suffix == ".pdf":
        return {"CreationDate": None}
    return None


def _fig_decay(spec: FigureSpec):
    series = _read_series(spec.inputs[0])
    fig, ax = plt.subplots()
    t = series["t"]
    ax.plot(t, series["l2"] ** 2, label=r"$\|\psi\|_{L^2}^2$", color="C0")
    if spec.ledger:
        led = _read_json(spec.ledger)
        rate = led["l2_rate"]
        floor = led["M1"] / rate
        rhs = series["l2"][0] ** 2 * np.exp(-rate * t) + floor * (1 - np.exp(-rate * t))
        ax.plot(t, rhs, "--", color="C3", label="explicit bound")
    if spec.logy:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("squared norm")
    ax.legend(loc="best")
    ax.set_title(spec.title or "norm decay vs explicit bound")
    return fig


def _fig_convergence(spec: FigureSpec):
    rep = _read_json(spec.inputs[0])
    eps = np.asarray(rep["eps"], dtype=float)
    fig, ax = plt.subplots()
    for j, ts in enumerate(rep["sample_times"]):
        errs = np.asarray([rep["l2sq_err"][str(e) if str(e) in rep["l2sq_err"]
                           else repr(e)][j] for e in eps])
        ax.loglog(eps, errs, "o-", label=f"t={ts:g}")
    fit = rep["fits"][-1]
    pref = fit["prefactor"]
    ax.loglog(eps, pref * eps ** (1.0 / 6.0), "k--", label=r"$\epsilon^{1/6}$ reference")
    ax.annotate(f"slope={fit['exponent']:.3f} (ref 1/6)",
                xy=(0.05, 0.05), xycoords="axes fraction")
    ax.set_xlabel(r"transition half-width $\epsilon$")
    ax.set_ylabel(r"$\|\psi-\psi^\epsilon\|_{L^2}^2$")
    ax.legend(loc="best")
    ax.set_title(spec.title or "trajectory error vs transition width")
    return fig


def _fig_nusselt(spec: FigureSpec):
    rep = _read_json(spec.inputs[0])
    fig, ax = plt.subplots()
    keys = sorted(rep["per_eps"], key=float)
    for k in keys:
        entry = rep["per_eps"][k]
        label = "sharp" if float(k) == 0.0 else f"eps={float(k):g}"
        ax.plot(entry["running_t"], entry["running"],
                label=f"{label} (Nu={entry['nu']:.4g})")
    ax.set_xlabel("T")
    ax.set_ylabel("running Nu")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(spec.title or "Nusselt running averages")
    return fig


def _fig_spectrum(spec: FigureSpec):
    path = spec.inputs[0]
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["kx", "ky", "n", "lambda"]:
            raise ValueError(f"schema mismatch in {path}: header {header}")
        rows = [(int(r[0]), int(r[1]), int(r[2]), float(r[3])) for r in reader if r]
    if not rows:
        raise ValueError(f"no rows in {path}")
    fig, ax = plt.subplots()
    modes = sorted({(kx, ky) for kx, ky, _, _ in rows},
                   key=lambda m: m[0] ** 2 + m[1] ** 2)
    for kx, ky in modes[: spec.options.get("max_modes", 6)]:
        pts = sorted((n, lam) for kkx, kky, n, lam in rows
                     if (kkx, kky) == (kx, ky))
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], "o-",
                    markersize=3, label=f"({kx},{ky})")
    ax.set_xlabel("eigenvalue index n")
    ax.set_ylabel(r"$\lambda$")
    ax.legend(loc="best", fontsize=8, title="(kx, ky)")
    ax.set_title(spec.title or "per-mode eigenvalues")
    return fig


_RENDERERS = {"decay": _fig_decay, "convergence": _fig_convergence,
              "nusselt": _fig_nusselt, "spectrum": _fig_spectrum}


def render(spec: FigureSpec):
    """Render one figure; returns the written path."""
    fig = _RENDERERS[spec.kind](spec)
    return _savefig(fig, spec.out)
