#!/usr/bin/env python3
"""
GRW Geodesic Toolkit

Command-line front end for geodesic connectedness, connecting geodesics,
conjugate points and Morse data of generalized Robertson-Walker
spacetimes -dtau^2 + f(tau)^2 g on I x F.

Features:
- classify: conditions A/B/C/R at both extremes with the connectedness verdict
- relate / connect: causal relation and the full list of connecting geodesics
- conjugate / morse: conjugate points per geodesic and truncated Morse relations
- sweep: initial-value cross-check of the connection solver
- table1: extendibility cells at both extremes
- static: the dual static metric on a one-dimensional fiber
- JSON reports, CSV samples and SVG charts

Usage:
    python grw_geodesics.py classify --config configs/de_sitter.yaml
    python grw_geodesics.py connect --config configs/minkowski.yaml --p0 0,0 --p1 2,1 --format svg
    python grw_geodesics.py sweep --config configs/de_sitter.yaml --p0 0,0,0,1 --p1=1,0,0,-1 --seed 7
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from conjugate_points import (conjugate_points, covering_premise, morse_polynomials, non_escape,
                              spectral_flow, sturm_solve)
from connectedness_conditions import classify_all, curvature_check, extendibility_cell
from fiber_geometry import fiber_from_config
from geodesic_connector import (NOTE_BASE, GeodesicConnector, SpacetimePoint, causal_uniqueness,
                                default_L_max, static_dual)
from grw_errors import ConfigError, GRWError, PreconditionError
from report_output import build_report, emit_plot, write_csv, write_json
from shooting_oracle import confirm_spec, default_sweep_grid, match_specs, sweep_oracle
from solver_settings import OUTPUT_FORMATS, RunConfig, load_run_config, parse_extended
from warp_function import ENDS, warp_from_config

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

SUBCOMMANDS = ("classify", "relate", "connect", "conjugate", "morse", "sweep", "table1", "static")
POINT_SUBCOMMANDS = ("relate", "connect", "conjugate", "morse", "sweep", "static")


class GRWRunner:
    """Runs one subcommand against a loaded configuration and writes its report files"""

    def __init__(self, config: RunConfig, out_dir: Optional[str] = None, fmt: Optional[str] = None,
                 seed: Optional[int] = None, timings: bool = False):
        self.config = config
        self.settings = config.settings
        self.w = warp_from_config(config.spacetime, config.base_dir)
        self.F = fiber_from_config(config.fiber)
        self.out_dir = Path(out_dir if out_dir is not None else config.output.get("path", "."))
        self.fmt = fmt or config.output.get("format", "json")
        if self.fmt not in OUTPUT_FORMATS:
            raise ConfigError(f"Unknown output format: {self.fmt}")
        self.rng = np.random.default_rng(seed) if seed is not None else None
        self.timings = timings
        self.connector = GeodesicConnector(self.w, self.F, self.settings)

        self.stats = {
            'subcommand': None,
            'files_written': 0,
            'geodesics': 0,
            'verdict': None,
            'strip_verdict': None,
            'elapsed': 0.0,
        }

    # -- points ------------------------------------------------------------------

    def points(self, args) -> Tuple[SpacetimePoint, SpacetimePoint]:
        if not getattr(args, "p0", None) or not getattr(args, "p1", None):
            raise ConfigError("this subcommand needs --p0 and --p1 (tau,x1,...,xk)")
        z0 = SpacetimePoint.parse(args.p0, self.F)
        z1 = SpacetimePoint.parse(args.p1, self.F)
        self.w.check_point(z0.tau)
        self.w.check_point(z1.tau)
        return z0, z1

    # -- subcommands -----------------------------------------------------------

    def classify(self, args) -> Dict:
        queries = [parse_extended(v) for v in args.query.split(",")] if args.query else []
        report = classify_all(self.w, self.F, self.settings, query_points=queries,
                              witness=not args.no_witness)
        self.stats['verdict'] = report.verdict
        result = report.to_dict()
        if args.strip:
            lo, hi = (parse_extended(v) for v in args.strip.split(","))
            result["curvature"] = curvature_check(self.w, (lo, hi), self.settings).to_dict()
            # the strip as a spacetime of its own, witness included
            strip = classify_all(self.w.restrict(lo, hi), self.F, self.settings,
                                 witness=not args.no_witness)
            self.stats['strip_verdict'] = strip.verdict
            result["strip"] = strip.to_dict()
        result["non_escape"] = non_escape(self.w, self.settings)
        return result

    def relate(self, args) -> Dict:
        z0, z1 = self.points(args)
        relation = self.connector.relate(z0, z1)
        result = {"z0": z0.to_list(), "z1": z1.to_list(), "relation": relation.to_dict()}
        if self.F.strongly_convex and relation.causal:
            result["uniqueness"] = causal_uniqueness(self.w, self.F, z0, z1, self.settings)
        return result

    def connect(self, args) -> Tuple[Dict, Dict]:
        z0, z1 = self.points(args)
        specs = self.connector.connect(z0, z1)
        result = self.connector.connection_report(z0, z1, specs)
        self.stats['geodesics'] = len(specs)
        outputs: Dict = {}
        if self.fmt in ("csv", "svg") and specs:
            curves = self.connector.curves(specs, z0, z1, samples=args.samples)
            result["curves"] = [c.to_dict() for c in curves]
            outputs["curves"] = curves
        return result, outputs

    def conjugate(self, args) -> Dict:
        z0, z1 = self.points(args)
        specs = self.connector.connect(z0, z1)
        self.stats['geodesics'] = len(specs)
        entries = []
        for spec in specs:
            entry = {"geodesic": spec.to_dict(),
                     "conjugate": conjugate_points(self.w, self.F, spec, self.settings).to_dict()}
            if spec.note == NOTE_BASE:
                lo, hi = sorted((spec.tau0, spec.tau1))
                taus = np.linspace(lo, hi, args.flow_points + 1)[1:]
                entry["spectral_flow"] = [[t, lam] for t, lam in spectral_flow(self.w, lo, taus, self.settings)]
            entries.append(entry)
        lo, hi = sorted((z0.tau, z1.tau))
        sturm = sturm_solve(self.w, lo, hi, self.settings) if hi > lo else None
        return {
            "z0": z0.to_list(),
            "z1": z1.to_list(),
            "geodesics": entries,
            "sturm_zero": sturm,
            "covering": covering_premise(self.w, self.F, self.settings),
        }

    def morse(self, args) -> Dict:
        z0, z1 = self.points(args)
        report = morse_polynomials(self.w, self.F, z0, z1, self.settings)
        self.stats['geodesics'] = report.specs
        return {"z0": z0.to_list(), "z1": z1.to_list(), "morse": report.to_dict()}

    def sweep(self, args) -> Tuple[Dict, Dict]:
        z0, z1 = self.points(args)
        L_max = default_L_max(self.w, self.F, z0, z1, self.settings)
        lengths = [g.length for g in self.F.geodesic_lengths(z0.x, z1.x, L_max) if not g.is_constant]
        if not lengths:
            raise PreconditionError("the sweep needs distinct fiber points")
        K_values = default_sweep_grid(self.w, z0.tau, args.points, self.settings, rng=self.rng)
        report = sweep_oracle(self.w, z0.tau, z1.tau, K_values, lengths, tol=args.tol,
                              workers=self.settings.workers)

        specs = self.connector.connect(z0, z1)
        self.stats['geodesics'] = len(specs)
        spec_K: Dict[float, List[float]] = {}
        for spec in specs:
            if spec.K is not None:
                spec_K.setdefault(spec.L, []).append(spec.K)
        confirmed = [{"L": s.L, "K": s.K,
                      "residual": confirm_spec(self.w, s.tau0, s.tau1, s.D, s.epsilon, s.L, s.c)}
                     for s in specs if s.K is not None]
        result = {
            "z0": z0.to_list(),
            "z1": z1.to_list(),
            "sweep": report.to_dict(),
            "lengths": lengths,
            "matching": match_specs(report, spec_K, self.settings.n_max),
            "confirmed": confirmed,
        }
        return result, {"sweep": report}

    def table1(self, args) -> Dict:
        return {e: extendibility_cell(self.w, e, self.settings).to_dict() for e in ENDS}

    def static(self, args) -> Dict:
        z0, z1 = self.points(args)
        return static_dual(self.w, self.F, z0, z1, self.settings)

    # -- output ------------------------------------------------------------------

    def _write_extras(self, subcommand: str, outputs: Dict):
        if self.fmt == "csv":
            if "curves" in outputs:
                curves = outputs["curves"]
                width = max(len(row) for c in curves for row in c.rows()) - 3
                header = ["curve", "t", "tau", "r"] + [f"x{k + 1}" for k in range(width)]
                rows = [[j] + row for j, c in enumerate(curves) for row in c.rows()]
                write_csv(header, rows, self.out_dir / f"{subcommand}.csv")
                self.stats['files_written'] += 1
            elif "sweep" in outputs:
                write_csv(["K", "L", "tau", "residual", "bounces"], outputs["sweep"].rows(),
                          self.out_dir / f"{subcommand}.csv")
                self.stats['files_written'] += 1
            else:
                logger.warning(f"{subcommand} has no CSV output; only the JSON report was written")
        elif self.fmt == "svg":
            if "curves" in outputs:
                emit_plot("profile", outputs["curves"], self.out_dir / f"{subcommand}.svg")
                self.stats['files_written'] += 1
            elif "sweep" in outputs:
                emit_plot("sweep", outputs["sweep"], self.out_dir / f"{subcommand}.svg")
                self.stats['files_written'] += 1
            else:
                logger.warning(f"{subcommand} has no chart; only the JSON report was written")

    def run(self, subcommand: str, args) -> Path:
        if subcommand not in SUBCOMMANDS:
            raise ConfigError(f"Unknown subcommand: {subcommand}")
        self.stats['subcommand'] = subcommand
        logger.info(f"Running {subcommand} on {self.w!r} x {self.F!r}")
        start = time.perf_counter()
        outcome = getattr(self, subcommand)(args)
        result, outputs = outcome if isinstance(outcome, tuple) else (outcome, {})
        self.stats['elapsed'] = time.perf_counter() - start

        timings = {"total_seconds": self.stats['elapsed']} if self.timings else None
        report = build_report(subcommand, self.config.to_dict(), result, timings)
        path = write_json(report, self.out_dir / f"{subcommand}.json")
        self.stats['files_written'] += 1
        self._write_extras(subcommand, outputs)
        return path

    def print_summary(self):
        logger.info("=" * 50)
        logger.info("RUN SUMMARY")
        logger.info("=" * 50)
        logger.info(f"Subcommand: {self.stats['subcommand']}")
        if self.stats['verdict'] is not None:
            logger.info(f"Connectedness verdict: {self.stats['verdict']}")
        if self.stats['strip_verdict'] is not None:
            logger.info(f"Strip verdict: {self.stats['strip_verdict']}")
        if self.stats['subcommand'] in POINT_SUBCOMMANDS:
            logger.info(f"Connecting geodesics: {self.stats['geodesics']}")
        logger.info(f"Files written: {self.stats['files_written']}")
        logger.info(f"Elapsed: {self.stats['elapsed']:.3f} s")
        if self.stats['subcommand'] == "connect":
            self.connector.print_summary()


def run(subcommand: str, config: RunConfig, args) -> int:
    """Dispatch one subcommand; 0 on a computed result, 2 on configuration or precondition errors."""
    try:
        runner = GRWRunner(config, out_dir=getattr(args, "out", None), fmt=getattr(args, "format", None),
                           seed=getattr(args, "seed", None), timings=getattr(args, "timings", False))
        runner.run(subcommand, args)
        runner.print_summary()
        return 0
    except GRWError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Geodesic connectedness and connecting geodesics of GRW spacetimes",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python grw_geodesics.py classify --config configs/de_sitter.yaml           # Conditions and verdict
  python grw_geodesics.py relate --config configs/minkowski.yaml --p0 0,0 --p1 2,1
  python grw_geodesics.py connect --config configs/strip.yaml --p0=-0.5,0 --p1 0.5,0.3 --format csv
  python grw_geodesics.py table1 --config configs/de_sitter.yaml             # Extendibility cells

Points are written tau,x1,...,xk; use --p0=... when the value starts with '-'.
        """
    )
    parser.add_argument('subcommand', choices=SUBCOMMANDS, help='What to compute')
    parser.add_argument('--config', required=True, help='Path to the YAML run configuration')
    parser.add_argument('--out', default=None, help='Output directory (default: output.path of the config)')
    parser.add_argument('--format', choices=OUTPUT_FORMATS, default=None,
                        help='json, or json plus CSV samples / an SVG chart (default: output.format)')
    parser.add_argument('--p0', default=None, help='First point tau,x1,...,xk')
    parser.add_argument('--p1', default=None, help='Second point tau,x1,...,xk')
    parser.add_argument('--seed', type=int, default=None, help='Seed for the jittered sweep grid')
    parser.add_argument('--strip', default=None, help='classify: strip lo,hi for the curvature criterion and its own verdict')
    parser.add_argument('--query', default=None, help='classify: base points tau,... tested first for R')
    parser.add_argument('--no-witness', action='store_true', help='classify: skip the witness search')
    parser.add_argument('--samples', type=int, default=200, help='connect: samples per curve (default: 200)')
    parser.add_argument('--points', type=int, default=400, help='sweep: number of K samples (default: 400)')
    parser.add_argument('--tol', type=float, default=1e-6, help='sweep: hit tolerance (default: 1e-6)')
    parser.add_argument('--flow-points', type=int, default=8,
                        help='conjugate: grid size of the spectral flow on base geodesics (default: 8)')
    parser.add_argument('--timings', action='store_true', help='Include wall-clock timings in the report')
    parser.add_argument('--verbose', action='store_true', help='Enable verbose logging')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        config = load_run_config(args.config)
        return run(args.subcommand, config, args)

    except GRWError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2
    except KeyboardInterrupt:
        logger.info("Process interrupted by user")
        return 1


if __name__ == "__main__":
    sys.exit(main())
