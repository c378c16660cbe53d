"""Command-line interface.

Subcommands:
  run        --config F.toml --out DIR
  sweep-eps  --config F.toml --eps 0.04,0.02,0.01 --times 1,5,10 --out DIR
  nusselt    --series S.csv --window 20,50
  compare    --a DIR1 --b DIR2 --norm hs:0.75
  verify     --series S.csv --ledger L.json [--out R.json]
  constants  --config F.toml [--json] [--out L.json]
  eigs       --config F.toml --out eigs.csv [--nmodes N]

Worker-slot count for sweeps comes from the LD_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _parse_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_run(args) -> int:
    from .config import load_config
    from .experiments import run_to_dir

    rc = load_config(args.config)
    result = run_to_dir(rc, args.out)
    print(f"wrote {Path(args.out) / 'series.csv'} ({result.series.data.shape[0]} rows, "
          f"t_end={result.final.t:g})")
    return 0


def cmd_sweep_eps(args) -> int:
    from .config import load_config
    from .experiments import sweep_epsilon

    rc = load_config(args.config)
    report = sweep_epsilon(rc, _parse_floats(args.eps), _parse_floats(args.times),
                           outdir=args.out)
    for fit in report.fits:
        print(f"t={fit['t']:g}: exponent={fit['exponent']:.3f} "
              f"prefactor={fit['prefactor']:.3e} shape_ok={fit['shape_ok']}")
    print(f"monotone_ok={report.monotone_ok} lockstep_ok={report.lockstep_ok}")
    return 0


def cmd_nusselt(args) -> int:
    from . import io as ldio
    from .evolve import TimeSeries
    from .experiments import nusselt

    series = TimeSeries.from_csv(args.series)
    window = _parse_floats(args.window)
    stats = nusselt(series, (window[0], window[1]))
    if args.out:
        ldio.write_json(args.out, stats)
    print(json.dumps({k: v for k, v in stats.items() if k not in ("running", "running_t")},
                     indent=1))
    return 0


def cmd_compare(args) -> int:
    from . import io as ldio
    from .experiments import hausdorff_semidistance
    from .operator import eigensolve, expand
    from .domain import sample_coefficients

    norm = args.norm
    if not norm.startswith("hs:"):
        raise SystemExit(f"unknown norm spec {norm!r} (expected hs:<s>)")
    s = float(norm.split(":", 1)[1])

    def load_dir(d):
        snapdir = Path(d) / "snapshots" if (Path(d) / "snapshots").is_dir() else Path(d)
        names = sorted(p.stem for p in snapdir.glob("*.json"))
        if not names:
            raise SystemExit(f"no snapshots under {d}")
        fields = []
        head = None
        for n in names:
            psi, head = ldio.read_snapshot(snapdir, n)
            fields.append(psi)
        return fields, head

    fa, head = load_dir(args.a)
    fb, _ = load_dir(args.b)
    grid = ldio.snapshot_grid(head)
    cfg = ldio.snapshot_layer_config(head)
    spec = eigensolve(sample_coefficients(cfg, grid, 0.0), grid)
    ea = [expand(f, spec) for f in fa]
    eb = [expand(f, spec) for f in fb]
    d = hausdorff_semidistance(ea, eb, s)
    print(f"dist = {d:.6e}")
    return 0


def cmd_verify(args) -> int:
    from . import io as ldio
    from .bounds import BoundLedger, verify_series
    from .evolve import TimeSeries

    meta = Path(args.series).with_name("meta.json")
    attrs = {}
    if meta.exists():
        attrs = ldio.read_json(meta).get("series_attrs", {})
    series = TimeSeries.from_csv(args.series, attrs=attrs)
    ledger = BoundLedger.from_dict(ldio.read_json(args.ledger))
    reports = verify_series(series, ledger)
    payload = {"checks": [r.to_dict() for r in reports],
               "all_passed": all(r.passed for r in reports)}
    if args.out:
        ldio.write_json(args.out, payload)
    for r in reports:
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'} "
              f"(min margin {r.min_margin:.3e} at t={r.min_margin_t:g})")
    return 0 if payload["all_passed"] else 1


def cmd_constants(args) -> int:
    from . import io as ldio
    from .bounds import compute_constants
    from .config import build_problem, load_config
    from .pressure import pressure_constant_estimate

    rc = load_config(args.config)
    setup = build_problem(rc)
    cp, prov = setup.cp, setup.cp_provenance
    if rc.cp == "estimate" and prov == "default":
        cp = pressure_constant_estimate(setup.coeffs, setup.grid)["Cp"]
        prov = "estimate"
    r = 6.0 / (3.0 - 2.0 * rc.s)
    ledger = compute_constants(setup.cfg, setup.background.delta, r, cp,
                               s=rc.s, cp_provenance=prov)
    d = ledger.to_dict()
    if args.json:
        print(json.dumps(d, indent=1, default=str))
    else:
        for k in ("r", "s", "delta", "delta1", "delta2", "Cp", "M0", "M1", "M2",
                  "M3", "M4", "M5", "log_M5", "l2_ball_sq", "lr_ball_r",
                  "dissipation_window", "delta_valid"):
            print(f"{k:20s} {d[k]}")
    if args.out:
        ldio.write_json(args.out, d)
    return 0


def cmd_eigs(args) -> int:
    from . import io as ldio
    from .config import build_problem, load_config
    from .domain import Grid
    from .operator import eigensolve

    rc = load_config(args.config)
    setup = build_problem(rc)
    spec = eigensolve(setup.coeffs, setup.grid, n_keep=args.nmodes)
    with open(args.out, "w", newline="\n") as f:
        f.write("kx,ky,n,lambda\n")
        for g in spec.groups:
            for ix, iy in zip(g.ix, g.iy):
                kx = ix if ix <= setup.grid.nx // 2 else ix - setup.grid.nx
                for n, lam in enumerate(g.lam):
                    f.write(f"{kx},{iy},{n},{lam:.17g}\n")
    if args.vectors:
        col = Grid(L=setup.grid.L, H=setup.grid.H, nx=1, ny=1, zf=setup.grid.zf)
        for g in spec.groups:
            ix, iy = int(g.ix[0]), int(g.iy[0])
            kx = ix if ix <= setup.grid.nx // 2 else ix - setup.grid.nx
            for n in range(g.lam.size):
                ldio.write_snapshot(args.vectors, f"eig_kx{kx}_ky{iy}_n{n}",
                                    g.w[:, n].reshape(1, 1, -1), col,
                                    cfg=setup.cfg, kx=kx, ky=iy, n=n,
                                    eigenvalue=float(g.lam[n]), kind="eigenvector")
        print(f"wrote eigenvector snapshots under {args.vectors}")
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ldlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute one configured simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-eps", help="transition-width convergence sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--eps", required=True, help="comma-separated widths")
    p.add_argument("--times", required=True, help="comma-separated sample times")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep_eps)

    p = sub.add_parser("nusselt", help="windowed transport average from a series CSV")
    p.add_argument("--series", required=True)
    p.add_argument("--window", required=True, help="a,b")
    p.add_argument("--out", default=None, help="also write the full stats JSON here")
    p.set_defaults(func=cmd_nusselt)

    p = sub.add_parser("compare", help="Hausdorff semidistance between snapshot sets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--norm", default="hs:0.75")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="check a series CSV against a ledger JSON")
    p.add_argument("--series", required=True)
    p.add_argument("--ledger", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("constants", help="print the explicit-constant ledger")
    p.add_argument("--config", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("eigs", help="dump per-mode eigenvalues as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nmodes", type=int, default=None)
    p.add_argument("--vectors", default=None,
                   help="also dump eigenvector profiles as snapshots here")
    p.set_defaults(func=cmd_eigs)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
