"""Batch figure rendering for the layered-Darcy lab's CSV/JSON reports.

Four figure kinds: norm-decay curves with the explicit bound overlaid,
log-log transition-width convergence with the reference slope, Nusselt
running averages across widths, and per-mode eigenvalue spectra. Output is
deterministic for fixed inputs (timestamps suppressed, hash salt pinned).
"""

from .render import FigureSpec, render

__version__ = "0.1.0"
