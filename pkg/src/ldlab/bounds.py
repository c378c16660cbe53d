"""Explicit a-priori constants of the layered model and the trajectory
inequality checks they feed.

Every constant is evaluated by direct formula from the configuration
extremes (min/max of K and D over layers), the background strip width delta,
the exponent r, the pressure constant Cp, and the embedding constants. The
gradient absorbing radius involves exp(M3 + M4 * (...)), which routinely
overflows float64 for contrasted layers, so it is carried in log space
alongside the (possibly infinite) plain value; comparisons use the log form.

Checks compare measured series rows to the decay/absorbing formulas with a
relative slack (default 1e-2) absorbing discretization error; both the raw
and slack-adjusted verdicts are reported.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import LayerConfig
from .evolve import TimeSeries

__all__ = [
    "BoundLedger",
    "young_cs",
    "compute_constants",
    "check_decay",
    "check_absorbing",
    "check_integrated_dissipation",
    "CheckReport",
    "verify_series",
]

TOL_REL = 1e-2


def young_cs(r: float) -> float:
    """Constant of the Young split  a*x^{1+3/r} <= x^2/4 + C_s a^{2r/(r-3)}."""
    p = 2.0 * r / (r + 3.0)
    q = 2.0 * r / (r - 3.0)
    return (p / 4.0) ** (-q / p) / q


@dataclass
class BoundLedger:
    """Explicit constants with their formula inputs echoed for audit."""

    r: float
    s: float
    delta: float
    delta1: float
    delta2: float
    Cp: float
    cp_provenance: str
    M0: float
    M1: float
    M2: float
    M3: float
    M4: float
    M5: float            # may be inf in float64; log_M5 is always finite
    log_M5: float
    l2_rate: float       # min D / H^2
    lr_rate: float       # 2 (r-1) min D / (r H^2)
    l2_ball_sq: float    # M1 H^2 / min D + 1
    lr_ball_r: float     # r M0 H^2 / (2 (r-1) min D) + 1
    dissipation_window: float  # M1 H^2 / min D + 1 + M1
    T0_coeff: float      # r H^2 / (2 (r-1) min D)
    T1_coeff: float      # H^2 / min D
    embedding: dict
    inputs: dict
    delta_valid: bool    # delta <= min(delta1, delta2)

    def T0(self, psi0_lr: float) -> float:
        return self.T0_coeff * math.log(psi0_lr ** self.r + 1.0)

    def T1(self, psi0_l2: float) -> float:
        return self.T1_coeff * math.log(psi0_l2 ** 2 + 1.0)

    def l2_rhs(self, t: np.ndarray, psi0_l2: float) -> np.ndarray:
        decay = np.exp(-self.l2_rate * t)
        floor = self.M1 / self.l2_rate
        return psi0_l2 ** 2 * decay + floor * (1.0 - decay)

    def lr_rhs(self, t: np.ndarray, psi0_lr: float) -> np.ndarray:
        decay = np.exp(-self.lr_rate * t)
        floor = self.M0 / self.lr_rate
        return psi0_lr ** self.r * decay + floor * (1.0 - decay)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundLedger":
        return cls(**d)


def compute_constants(cfg: LayerConfig, delta: float, r: float, Cp: float,
                      embedding: dict | None = None, s: float | None = None,
                      cp_provenance: str = "user") -> BoundLedger:
    """Evaluate every explicit constant for the given configuration.

    r must lie in (3, 6): the gradient-bound exponent 2r/(r-3) blows up at
    r = 3 and the estimates hold for r = 6/(3-2s) with s in (1/2, 1).
    Embedding constants default to {C_u, C_1, C_2} = 1 with provenance
    "default" and the analytic Young constant C_s; production callers pass
    the empirical suprema from the inequality probes.
    """
    if not 3.0 < r < 6.0:
        raise ValueError(
            f"r={r} rejected: the gradient-bound exponent 2r/(r-3) requires "
            "r in (3, 6), i.e. s in (1/2, 1) with r = 6/(3-2s)"
        )
    if delta <= 0.0 or Cp <= 0.0:
        raise ValueError("delta and Cp must be positive")
    emb = {"C_u": 1.0, "C_1": 1.0, "C_2": 1.0, "C_s": young_cs(r),
           "provenance": "default+analytic-C_s"}
    if embedding:
        emb.update(embedding)
    s = s if s is not None else 3.0 / 2.0 - 3.0 / r

    c = cfg.c_delta
    L, H = cfg.L, cfg.H
    dmin, dmax = cfg.D_min, cfg.D_max
    kmin, kmax = cfg.K_min, cfg.K_max

    delta1 = (((r - 1.0) / r**2) * dmin / (c * H ** (2.0 / r) * kmax * (1.0 + Cp))) ** (r / (r - 2.0)) \
        if c > 0 else math.inf
    delta2 = kmin * dmin / (32.0 * kmax**2 * c) if c > 0 else math.inf

    M0 = (8.0 * r * c * L ** (2.0 / r) * delta ** (-1.0 / r) * dmax) ** r / (r * dmin ** (r - 1.0))
    M1 = 8.0 * c**2 * L**2 / delta * dmax**2 / dmin
    M2 = 32.0 * c**2 * L**2 * delta ** (-3.0) * dmax**2
    M3 = 32.0 * kmax**4 * c**2 / (kmin**2 * dmin)
    M4 = 2.0 * emb["C_s"] * ((1.0 + Cp) * emb["C_2"] * emb["C_u"] ** (3.0 / r) * kmax) \
        ** (2.0 * r / (r - 3.0)) / dmin

    l2_rate = dmin / H**2
    lr_rate = 2.0 * (r - 1.0) * dmin / (r * H**2)
    lr_ball = r * M0 * H**2 / (2.0 * (r - 1.0) * dmin) + 1.0
    l2_ball = M1 * H**2 / dmin + 1.0
    prefactor = M2 + M1 * H**2 / dmin + 1.0 + M1
    exponent = M3 + M4 * (r * M0 * H**2 / (2.0 * (r - 1.0) * dmin) + 1.0) ** (2.0 / (r - 3.0))
    log_M5 = math.log(prefactor) + exponent
    M5 = math.exp(log_M5) if log_M5 < 700.0 else math.inf

    ledger = BoundLedger(
        r=r, s=s, delta=delta, delta1=delta1, delta2=delta2,
        Cp=Cp, cp_provenance=cp_provenance,
        M0=M0, M1=M1, M2=M2, M3=M3, M4=M4, M5=M5, log_M5=log_M5,
        l2_rate=l2_rate, lr_rate=lr_rate,
        l2_ball_sq=l2_ball, lr_ball_r=lr_ball,
        dissipation_window=M1 * H**2 / dmin + 1.0 + M1,
        T0_coeff=r * H**2 / (2.0 * (r - 1.0) * dmin),
        T1_coeff=H**2 / dmin,
        embedding=emb,
        inputs={"c_delta": c, "L": L, "H": H, "D_min": dmin, "D_max": dmax,
                "K_min": kmin, "K_max": kmax},
        delta_valid=bool(delta <= min(delta1, delta2)),
    )
    for name in ("M0", "M1", "M2", "M3", "M4", "log_M5"):
        v = getattr(ledger, name)
        if not (v > 0.0 and math.isfinite(v)):
            raise ValueError(f"ledger entry {name}={v} is not positive and finite")
    return ledger


@dataclass
class CheckReport:
    name: str
    passed: bool            # with the relative slack
    passed_raw: bool        # without slack
    min_margin: float
    min_margin_t: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _series_matches(series: TimeSeries, ledger: BoundLedger):
    a = series.attrs
    if a.get("delta") is not None and not np.isclose(a["delta"], ledger.delta, rtol=1e-12):
        raise ValueError(f"series delta {a['delta']} does not match ledger delta {ledger.delta}")
    if a.get("r") is not None and not np.isclose(a["r"], ledger.r, rtol=1e-12):
        raise ValueError(f"series r {a['r']} does not match ledger r {ledger.r}")


def check_decay(series: TimeSeries, ledger: BoundLedger, kind: str,
                tol_rel: float = TOL_REL) -> CheckReport:
    """Per-row margin of the exponential decay bound, kind = "L2" or "Lr".

    Margin = bound - measured (on the squared / r-th power scale); pass iff
    the minimum margin stays above -tol_rel * bound.
    """
    _series_matches(series, ledger)
    t = series.t
    if kind == "L2":
        measured = series.column("l2") ** 2
        rhs = ledger.l2_rhs(t, series.column("l2")[0])
    elif kind == "Lr":
        measured = series.column("lr") ** ledger.r
        rhs = ledger.lr_rhs(t, series.column("lr")[0])
    else:
        raise ValueError(f"unknown decay kind {kind!r}")
    margin = rhs - measured
    rel = margin / np.maximum(rhs, 1e-300)
    i = int(np.argmin(rel))
    viol = np.where(rel < -tol_rel)[0]
    return CheckReport(
        name=f"decay_{kind}",
        passed=bool(viol.size == 0),
        passed_raw=bool(np.all(margin >= 0.0)),
        min_margin=float(margin[i]),
        min_margin_t=float(t[i]),
        details={"rows": int(t.size), "tol_rel": tol_rel,
                 "first_violation_t": float(t[viol[0]]) if viol.size else None},
    )


def _entry_and_stay(t: np.ndarray, measured: np.ndarray, radius: float,
                    deadline: float, tol_rel: float):
    inside = measured <= radius * (1.0 + tol_rel)
    entry = None
    for i in range(t.size):
        if inside[i:].all():
            entry = float(t[i])
            break
    ok = entry is not None and entry <= deadline + 1e-12
    return entry, ok


def check_absorbing(series: TimeSeries, ledger: BoundLedger,
                    tol_rel: float = TOL_REL) -> CheckReport:
    """Entry into the absorbing balls by the predicted deadlines, without
    later exit: L^2 ball by T1, L^r ball by T0, and the gradient ball (log
    compare) for t >= max(T0, T1) + 1. A run shorter than the deadline is
    reported, not failed."""
    _series_matches(series, ledger)
    t = series.t
    l2sq = series.column("l2") ** 2
    lrr = series.column("lr") ** ledger.r
    T1 = ledger.T1(series.column("l2")[0])
    T0 = ledger.T0(series.column("lr")[0])
    horizon = float(t[-1])
    details: dict = {"T0": T0, "T1": T1, "horizon": horizon}

    entry2, ok2 = _entry_and_stay(t, l2sq, ledger.l2_ball_sq, T1, tol_rel)
    entryr, okr = _entry_and_stay(t, lrr, ledger.lr_ball_r, T0, tol_rel)
    details["l2_entry"] = entry2
    details["lr_entry"] = entryr
    too_short = horizon < max(T0, T1)
    details["too_short"] = too_short

    grad_ok = True
    tg = max(T0, T1) + 1.0
    if horizon >= tg:
        sel = t >= tg
        grad_sq = series.column("grad")[sel] ** 2
        with np.errstate(divide="ignore"):
            log_meas = np.log(np.maximum(grad_sq, 1e-300))
        grad_ok = bool(np.all(log_meas <= ledger.log_M5 + math.log1p(tol_rel)))
        details["grad_checked_rows"] = int(sel.sum())
    else:
        details["grad_checked_rows"] = 0

    passed = bool((ok2 and okr and grad_ok) or too_short)
    return CheckReport(
        name="absorbing",
        passed=passed,
        passed_raw=passed,
        min_margin=float(ledger.l2_ball_sq - l2sq.max()),
        min_margin_t=float(t[int(np.argmax(l2sq))]),
        details=details,
    )


def check_integrated_dissipation(series: TimeSeries, ledger: BoundLedger,
                                 tol_rel: float = TOL_REL) -> CheckReport:
    """Sliding unit-window trapezoid integrals of the squared gradient norm
    against the dissipation bound, for windows starting after T1."""
    _series_matches(series, ledger)
    t = series.t
    rows_per_unit = (t.size - 1) / max(t[-1] - t[0], 1e-300)
    if rows_per_unit < 20.0:
        raise ValueError(f"insufficient cadence: {rows_per_unit:.1f} rows per unit time < 20")
    T1 = ledger.T1(series.column("l2")[0])
    g2 = series.column("grad") ** 2
    bound = ledger.dissipation_window
    margins = []
    times = []
    for i in range(t.size):
        if t[i] < T1:
            continue
        j = int(np.searchsorted(t, t[i] + 1.0))
        if j >= t.size:
            break
        sel = slice(i, j + 1)
        integral = float(np.trapezoid(g2[sel], t[sel]))
        margins.append(bound - integral)
        times.append(t[i])
    if not margins:
        return CheckReport(name="integrated_dissipation", passed=True, passed_raw=True,
                           min_margin=math.inf, min_margin_t=math.nan,
                           details={"windows": 0, "note": "run too short for any window"})
    margins = np.asarray(margins)
    i = int(np.argmin(margins))
    return CheckReport(
        name="integrated_dissipation",
        passed=bool(margins[i] >= -tol_rel * bound),
        passed_raw=bool(margins[i] >= 0.0),
        min_margin=float(margins[i]),
        min_margin_t=float(times[i]),
        details={"windows": len(margins), "bound": bound},
    )


def verify_series(series: TimeSeries, ledger: BoundLedger,
                  tol_rel: float = TOL_REL) -> list[CheckReport]:
    """All applicable trajectory checks for one series."""
    reports = [
        check_decay(series, ledger, "L2", tol_rel),
        check_decay(series, ledger, "Lr", tol_rel),
        check_absorbing(series, ledger, tol_rel),
    ]
    try:
        reports.append(check_integrated_dissipation(series, ledger, tol_rel))
    except ValueError as err:
        reports.append(CheckReport(name="integrated_dissipation", passed=True,
                                   passed_raw=True, min_margin=math.nan,
                                   min_margin_t=math.nan,
                                   details={"skipped": str(err)}))
    return reports
