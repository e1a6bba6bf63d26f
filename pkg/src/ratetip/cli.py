"""Command-line front end.

    ratetip <subcommand> [--config PATH] [--out DIR] [flags]

Subcommands write their artifacts into ``--out`` (atomically) and print a short
machine-readable summary to stdout.  Exit status: 0 success, 1 bad input,
2 assumption gate failed, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys as _sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .canard import SingularCanard, canard_family, detect_composites
from .config import RunConfig, load_config
from .desing import find_folded_singularities, estimate_critical_rate
from .errors import RateTipError, SchemaError
from .flow import integrate_full
from .geometry import check_assumptions, manifold_y, slice_manifold
from .output import atomic_write, csv_text, pretty_table, records_text, scan_svg
from .scan import GridSpec, classify_grid, empirical_critical_rate, extract_bands

SUBCOMMANDS = ("manifold", "singularities", "critical-rate", "trajectory", "canards", "scan", "reproduce")

SINGULARITY_FIELDS = ("x_star", "tau_star", "lambda_star", "re_xi1", "im_xi1", "re_xi2", "im_xi2", "kind", "b_sign")
RATE_FIELDS = ("epsilon_c_singular", "epsilon_c_empirical", "E_delta", "order_exponent", "per_delta")
BAND_FIELDS = ("transect", "band", "verdict", "x_lo", "x_hi", "width")
CANARD_FIELDS = ("id", "kind", "branch", "seed", "section_tau", "dwell", "verdict", "x_star", "tau_star",
                 "lambda_star", "segments", "file")
SUMMARY_FIELDS = ("figure", "epsilon", "delta", "forcing", "n_cells", "tracked", "destabilized", "exhausted",
                  "bands", "destabilized_bands", "narrow_tracked", "canards", "composites")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are input errors
        self.print_usage(_sys.stderr)
        raise SchemaError(f"{self.prog}: {message}")


def _grid_pair(text: str) -> tuple[int, int]:
    try:
        nx, nl = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected NX,NL (two integers)") from None
    if nx < 1 or nl < 1:
        raise argparse.ArgumentTypeError("grid sizes must be positive")
    return nx, nl


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="YAML or JSON run configuration (defaults built in)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    p.add_argument("--workers", type=int, metavar="N", help="worker threads for batch integration")
    p.add_argument("--epsilon", type=float, help="override forcing.epsilon")
    p.add_argument("--delta", type=float, help="override system.delta")
    p.add_argument("--grid", type=_grid_pair, metavar="NX,NL", help="override grid resolution")
    p.add_argument("--transect", type=float, metavar="LAMBDA", help="lambda of the band / canard section")
    p.add_argument("--side", choices=("sa", "sr"), help="branch the grid is placed on")
    p.add_argument("--comoving", action="store_true", help="trajectory output in (x, y + lambda, lambda)")
    p.add_argument("--svg", action="store_true", help="also write an SVG raster of the scan")
    p.add_argument("--pretty", action="store_true", help="print human-readable tables as well")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ratetip", description="Rate-induced instability analysis of forced fast-slow systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "manifold": "critical manifold slices as CSV (lambda, x, y, stability, is_fold, is_equilibrium)",
        "singularities": "folded singularities as line records",
        "critical-rate": "singular critical rate, and empirical rates for critical_rate.deltas",
        "trajectory": "one full-system trajectory as CSV with a verdict footer",
        "canards": "singular, maximal and composite canards, one CSV per canard",
        "scan": "verdict grid as CSV, optional SVG, bands on --transect",
        "reproduce": "pinned reproduction recipes (grid, bands, canards, SVG)",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        _common(p)
        if name == "reproduce":
            p.add_argument("figure", choices=sorted(RECIPES), help="recipe name")
    return parser


# -- configuration ----------------------------------------------------------------


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.epsilon is not None:
        cfg = cfg.with_epsilon(args.epsilon)
    if args.delta is not None:
        cfg = cfg.with_delta(args.delta)
    if args.out is not None:
        cfg.out_dir = Path(args.out)
    if args.workers is not None:
        if args.workers < 1:
            raise SchemaError("--workers must be positive")
        cfg.workers = args.workers
    if args.transect is not None:
        cfg.transect = args.transect
    if args.svg:
        cfg.svg = True
    if cfg.grid is not None and (args.grid or args.side):
        nx, nl = args.grid or (cfg.grid.n_x, cfg.grid.n_lam)
        cfg.grid = replace(cfg.grid, n_x=nx, n_lam=nl, side=args.side or cfg.grid.side)
    elif cfg.grid is None and (args.grid or args.side):
        cfg.grid = default_grid(cfg, args.side or "sa")
        if args.grid:
            cfg.grid = replace(cfg.grid, n_x=args.grid[0], n_lam=args.grid[1])
    return cfg


def default_grid(cfg: RunConfig, side: str = "sa") -> GridSpec:
    """Grid over S^a (or just right of the fold on S^r) spanning the forcing range."""
    lo, hi = cfg.forcing.lambda_min, cfg.forcing.lambda_max
    pad = 0.02 * (hi - lo) if hi > lo else 0.1
    lam_lo, lam_hi = (lo + pad, hi - pad) if hi > lo else (lo - pad, hi + pad)
    sl = slice_manifold(cfg.system, 0.5 * (lam_lo + lam_hi), check=False)
    x_f = sl.folds[0].x_F if sl.folds else 0.0
    if side == "sr":
        return GridSpec(x_f + 0.01, x_f + 1.0, 200, lam_lo, lam_hi, 200, "sr")
    return GridSpec(x_f - 2.0, x_f - 0.01, 200, lam_lo, lam_hi, 200, "sa")


def gate(cfg: RunConfig) -> None:
    lo, hi = cfg.forcing.lambda_min, cfg.forcing.lambda_max
    check_assumptions(cfg.system, lo, hi)


def section_lambda(cfg: RunConfig) -> float | None:
    return cfg.canards["section_lambda"] if cfg.canards["section_lambda"] is not None else cfg.transect


def _tau(cfg: RunConfig, lam: float | None) -> float | None:
    return None if lam is None else float(cfg.forcing.inverse(lam))


def _emit(text: str) -> None:
    _sys.stdout.write(text)


# -- subcommands ------------------------------------------------------------------


def cmd_manifold(cfg: RunConfig, args) -> None:
    m = cfg.manifold
    rows = []
    for lam in m["lambdas"]:
        sl = slice_manifold(cfg.system, lam, (m["x_lo"], m["x_hi"]), m["n_samples"])
        pts = [(float(x), float(y), b.stability, False, False) for b in sl.branches for x, y in zip(b.x, b.y)]
        pts += [(fp.x_F, fp.y_F, "fold", True, False) for fp in sl.folds]
        if sl.equilibrium is not None:
            pts.append((sl.equilibrium[0], sl.equilibrium[1], "attracting", False, True))
        pts.sort(key=lambda r: (r[0], r[4]))
        rows += [(float(lam),) + p for p in pts]
    path = atomic_write(cfg.out_dir / "manifold.csv",
                        csv_text(("lambda", "x", "y", "stability", "is_fold", "is_equilibrium"), rows))
    _emit(f"{path}\n")


def _singularity_records(cfg: RunConfig) -> list[dict]:
    return [s.as_record() for s in find_folded_singularities(cfg.system, cfg.forcing)]


def cmd_singularities(cfg: RunConfig, args) -> None:
    recs = _singularity_records(cfg)
    text = records_text("folded-singularity", SINGULARITY_FIELDS, recs)
    atomic_write(cfg.out_dir / "singularities.jsonl", text)
    _emit(pretty_table(SINGULARITY_FIELDS, recs) if args.pretty else text)


def cmd_critical_rate(cfg: RunConfig, args) -> None:
    c = cfg.critical_rate
    if c["deltas"]:
        spec = cfg.grid or default_grid(cfg)
        report = empirical_critical_rate(cfg.system, cfg.forcing, c["deltas"], (c["eps_lo"], c["eps_hi"]), spec,
                                         cfg.integrator, transect=cfg.transect, tol=c["tol"],
                                         rel_tol=c["rel_tol"], workers=cfg.workers)
    else:
        report = estimate_critical_rate(cfg.system, cfg.forcing)
    rec = report.as_record()
    rec["per_delta"] = {repr(d): e for d, e in report.per_delta.items()}
    text = records_text("critical-rate", RATE_FIELDS, [rec])
    atomic_write(cfg.out_dir / "critical_rate.jsonl", text)
    _emit(pretty_table(RATE_FIELDS[:4], [rec]) if args.pretty else text)


def cmd_trajectory(cfg: RunConfig, args) -> None:
    t = cfg.trajectory
    tau0 = t["tau0"]
    if tau0 is None and t["lambda0"] is not None:
        tau0 = float(cfg.forcing.inverse(t["lambda0"]))
    if tau0 is None:
        lo = cfg.forcing.tau_domain[0]
        tau0 = lo if math.isfinite(lo) else float(cfg.forcing.scan_window()[0])
    lam0 = float(cfg.forcing.value(tau0))
    y0 = t["y0"] if t["y0"] is not None else float(manifold_y(cfg.system, t["x0"], lam0))
    traj = integrate_full(cfg.system, cfg.forcing, (t["x0"], y0, tau0), cfg.integrator,
                          max_samples=t["max_samples"])
    samples = traj.comoving() if args.comoving else traj.samples
    cols = ("t_like", "x", "y_comoving" if args.comoving else "y", "lambda")
    footer = {"verdict": f"{traj.verdict} event_time={float(traj.event_time)!r}"
                         f" itinerary={[int(v) for v in traj.itinerary]} dwell={float(traj.dwell)!r}"}
    path = atomic_write(cfg.out_dir / "trajectory.csv", csv_text(cols, samples.tolist(), footer=footer))
    _emit(f"{path} {traj.verdict}\n")


def _singular_rows(cfg: RunConfig, c: SingularCanard):
    lam = c.lam
    y = manifold_y(cfg.system, c.x, lam)
    return np.column_stack([c.tau, c.x, y, lam])


def canard_artifacts(cfg: RunConfig, out: Path, *, composites_from=None) -> tuple[list[dict], list]:
    """Compute the canard family and write one CSV per canard plus an index."""
    tau_sec = _tau(cfg, section_lambda(cfg))
    fam = canard_family(cfg.system, cfg.forcing, cfg.integrator, section_tau=tau_sec,
                        secondary=cfg.canards["secondary"], workers=cfg.workers)
    comps = []
    if composites_from is not None:
        comps = detect_composites(composites_from, fam.maximal, fam.singular, cfg.canards["tube"],
                                  narrow=cfg.canards["narrow"])
    index = []
    k = 0
    for c in fam.singular:
        s = c.singularity
        head = {"kind": f"singular-{c.branch}", "x_star": s.x_star, "tau_star": s.tau_star,
                "lambda_star": s.lambda_star, "singularity_kind": s.kind}
        name = f"canard_{k:02d}_singular_{c.branch}.csv"
        atomic_write(out / name, csv_text(("tau", "x", "y", "lambda"), _singular_rows(cfg, c).tolist(), head))
        index.append({"id": k, "kind": head["kind"], "branch": c.branch, "x_star": s.x_star,
                      "tau_star": s.tau_star, "lambda_star": s.lambda_star, "file": name})
        k += 1
    for m in fam.maximal + comps:
        head = m.header()
        path = np.asarray(m.path)
        rows = np.column_stack([path, cfg.forcing.value(path[:, 0])])
        name = f"canard_{k:02d}_{m.kind}.csv"
        atomic_write(out / name, csv_text(("tau", "x", "y", "lambda"), rows.tolist(), head))
        index.append({"id": k, "kind": m.kind, "branch": m.singular.branch if m.singular else None,
                      "seed": m.seed_parameter, "section_tau": m.section_tau, "dwell": m.dwell_s_r,
                      "verdict": m.verdict, "x_star": head.get("x_star"), "tau_star": head.get("tau_star"),
                      "lambda_star": head.get("lambda_star"), "segments": head.get("segments"), "file": name})
        k += 1
    for branch, why in fam.failures.items():
        index.append({"id": None, "kind": "unresolved", "branch": branch, "segments": why})
    atomic_write(out / "canards.jsonl", records_text("canard", CANARD_FIELDS, index))
    return index, fam.singular


def _bands(cfg: RunConfig, grid, transect: float, x_range=None, min_samples: int = 241):
    bs = extract_bands(grid, transect, x_range=x_range, min_samples=min_samples, workers=cfg.workers)
    recs = [{"transect": transect, **r} for r in bs.rows()]
    return bs, recs


def _probe_grid(cfg: RunConfig, spec: GridSpec):
    """A 2x2 classification used only as a carrier for band extraction settings."""
    return classify_grid(cfg.system, cfg.forcing, replace(spec, n_x=2, n_lam=2), cfg.integrator, workers=cfg.workers)


def cmd_canards(cfg: RunConfig, args) -> None:
    bs = None
    if cfg.transect is not None:
        spec = cfg.grid or default_grid(cfg)
        bs, recs = _bands(cfg, _probe_grid(cfg, spec), cfg.transect)
        atomic_write(cfg.out_dir / "bands.jsonl", records_text("band", BAND_FIELDS, recs))
    index, _ = canard_artifacts(cfg, cfg.out_dir, composites_from=bs)
    _emit(pretty_table(CANARD_FIELDS[:7], index) if args.pretty else records_text("canard", CANARD_FIELDS, index))


def _polylines(singular: Sequence[SingularCanard]):
    return [(f"{c.singularity.kind}/{c.branch}", list(zip(c.x, c.lam))) for c in singular]


def run_scan(cfg: RunConfig, out: Path, *, transect_range=None, min_samples: int = 241,
             canards: bool = False) -> dict:
    """Grid classification plus optional bands and canards; returns a summary record."""
    spec = cfg.grid or default_grid(cfg)
    grid = classify_grid(cfg.system, cfg.forcing, spec, cfg.integrator, workers=cfg.workers)
    atomic_write(out / "scan.csv", csv_text(("lambda", "x", "verdict"), grid.rows(),
                                            {"epsilon": cfg.forcing.epsilon, "delta": cfg.system.delta,
                                             "side": spec.side, "unreliable": grid.unreliable}))
    summary = {"epsilon": cfg.forcing.epsilon, "delta": cfg.system.delta, "forcing": cfg.forcing.kind,
               "n_cells": int(grid.codes.size), "tracked": grid.fraction("tracked"),
               "destabilized": grid.fraction("destabilized"), "exhausted": grid.fraction("exhausted")}
    bs = None
    if cfg.transect is not None:
        bs, recs = _bands(cfg, grid, cfg.transect, transect_range, min_samples)
        atomic_write(out / "bands.jsonl", records_text("band", BAND_FIELDS, recs))
        summary.update(bands=len(bs.bands), destabilized_bands=bs.count("destabilized"),
                       narrow_tracked=len(bs.narrow_tracked(cfg.canards["narrow"])))
    singular = None
    if canards:
        index, singular = canard_artifacts(cfg, out / "canards", composites_from=bs)
        summary.update(canards=sum(1 for r in index if r["kind"] not in ("composite", "unresolved")),
                       composites=sum(1 for r in index if r["kind"] == "composite"))
    if cfg.svg:
        if singular is None:
            singular = [c for s in find_folded_singularities(cfg.system, cfg.forcing)
                        for c in _safe_singular(s)]
        atomic_write(out / "scan.svg", scan_svg(grid.x, grid.lam, grid.verdicts, _polylines(singular)))
    return summary


def _safe_singular(s):
    from .canard import singular_canards
    from .errors import DegeneracyError
    try:
        return singular_canards(s)
    except DegeneracyError:
        return []


def cmd_scan(cfg: RunConfig, args) -> None:
    summary = run_scan(cfg, cfg.out_dir)
    fields = tuple(f for f in SUMMARY_FIELDS if f in summary)
    _emit(pretty_table(fields, [summary]) if args.pretty else records_text("scan-summary", fields, [summary]))


# -- reproduction recipes ----------------------------------------------------------

LOGISTIC = {"kind": "logistic-tanh", "lambda_max": 2.5}
EXPONENTIAL = {"kind": "exponential-approach", "lambda_max": 2.5}
LOGISTIC_GRID = GridSpec(-1.5, 0.49, 200, -2.4, 2.4, 200)
EXPONENTIAL_GRID = GridSpec(-1.5, 0.49, 200, 0.05, 2.4, 200)
TRACK_GRID = GridSpec(-0.25, 0.25, 100, -2.4, 2.4, 100)
BAND_TRANSECT = -0.7
BAND_RANGE = (-1.5, 0.4999)


def _recipe(forcing: dict, epsilon: float, grid: GridSpec, transect: float | None = None,
            canards: bool = False) -> dict:
    return {"forcing": forcing, "epsilon": epsilon, "grid": grid, "transect": transect, "canards": canards}


RECIPES: dict[str, dict] = {
    "fig2a": _recipe(LOGISTIC, 0.06, TRACK_GRID),
    "fig3a": _recipe(LOGISTIC, 0.201, LOGISTIC_GRID, BAND_TRANSECT),
    "fig3b": _recipe(LOGISTIC, 0.212, LOGISTIC_GRID, BAND_TRANSECT),
    "fig3c": _recipe(LOGISTIC, 0.216, LOGISTIC_GRID, BAND_TRANSECT),
    "fig3d": _recipe(LOGISTIC, 0.270, LOGISTIC_GRID, BAND_TRANSECT),
    "fig4": _recipe(LOGISTIC, 0.204, LOGISTIC_GRID, BAND_TRANSECT, canards=True),
    "fig5a": _recipe(EXPONENTIAL, 0.25, EXPONENTIAL_GRID),
    "fig5b": _recipe(EXPONENTIAL, 1.0, EXPONENTIAL_GRID),
}


def recipe_config(name: str, base: RunConfig) -> RunConfig:
    r = RECIPES[name]
    from .model import ForcingProfile

    forcing = ForcingProfile(r["forcing"]["kind"], r["forcing"]["lambda_max"], r["epsilon"])
    return replace(base, system=base.system.with_delta(0.01), forcing=forcing, grid=r["grid"],
                   transect=r["transect"], svg=True)


def cmd_reproduce(cfg: RunConfig, args) -> None:
    name = args.figure
    rc = recipe_config(name, cfg)
    gate(rc)
    if args.grid:
        rc.grid = replace(rc.grid, n_x=args.grid[0], n_lam=args.grid[1])
    if args.epsilon is not None:
        rc = rc.with_epsilon(args.epsilon)
    out = cfg.out_dir / name
    summary = run_scan(rc, out, transect_range=BAND_RANGE, min_samples=2001, canards=RECIPES[name]["canards"])
    summary = {"figure": name, **summary}
    fields = tuple(f for f in SUMMARY_FIELDS if f in summary)
    text = records_text("reproduce-summary", fields, [summary])
    atomic_write(out / "summary.jsonl", text)
    _emit(pretty_table(fields, [summary]) if args.pretty else text)


COMMANDS: dict[str, Callable] = {
    "manifold": cmd_manifold,
    "singularities": cmd_singularities,
    "critical-rate": cmd_critical_rate,
    "trajectory": cmd_trajectory,
    "canards": cmd_canards,
    "scan": cmd_scan,
    "reproduce": cmd_reproduce,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run the subcommand and return the exit status."""
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        gate(cfg)
        COMMANDS[args.command](cfg, args)
    except RateTipError as exc:
        _sys.stderr.write(f"ratetip: error: {exc}\n")
        return exc.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        _sys.stderr.write(f"ratetip: numerical failure: {exc}\n")
        return 3
    return 0


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
