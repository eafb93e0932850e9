"""Command-line front end for adaptive capacity runs.

Exit codes: 0 on success, 1 for configuration or input errors, 2 when a
solve fails numerically.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .driver import AdaptiveError, RunConfig, run_adaptive
from .estimator import ZZ_WEIGHTS
from .io import export_vtk, history_rows, load_off, write_history
from .mesh import MeshError, StarParams

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

log = logging.getLogger("bemcap")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _optional_float(text):
    if text.lower() == "none":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'none', got {text!r}") from None


def build_parser():
    p = _Parser(prog="bemcap", description="Adaptive BEM computation of the electrostatic capacity "
                                          "of a closed polyhedral surface.")
    p.add_argument("--geometry", default="cube",
                   help="cube, fichera, star or off:<path> (default: cube)")
    p.add_argument("--theta", type=float, default=0.5, help="Doerfler bulk parameter in (0, 1]")
    p.add_argument("--estimator", choices=("zz", "residual"), default="zz")
    p.add_argument("--precond", choices=("operator", "diagonal", "none"), default="operator")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3,
                   help="GMRES stops when the energy increment is below lambda * eta")
    p.add_argument("--max-elements", type=int, default=1000,
                   help="stop after the first level with more elements than this")
    p.add_argument("--order", type=int, default=4, help="Gauss order of the singular quadrature")
    p.add_argument("--reference", type=_optional_float, default=None,
                   help="reference capacity for the capacity_error column, or 'none'")
    p.add_argument("--csv", default=None, help="history CSV path (default: standard output)")
    p.add_argument("--vtk-dir", default=None,
                   help="directory for mesh_<level>.vtk indicator exports, or 'none'")
    p.add_argument("--cond", action="store_true", help="record dense condition numbers")
    p.add_argument("--refine-edges", choices=("reference", "all"), default="reference",
                   help="edges flagged on marked triangles before the closure")
    p.add_argument("--zz-weight", choices=ZZ_WEIGHTS, default="circumradius",
                   help="element size weighting the ZZ indicators")
    star = p.add_argument_group("star prism")
    star.add_argument("--star-points", type=int, default=StarParams.points)
    star.add_argument("--star-outer", type=float, default=StarParams.outer)
    star.add_argument("--star-inner", type=float, default=StarParams.inner)
    star.add_argument("--star-half-thickness", type=float, default=StarParams.half_thickness)
    p.add_argument("-v", "--verbose", action="store_true", help="log every level")
    return p


def _geometry(name):
    if name.startswith("off:"):
        path = name[4:]
        if not path:
            raise ConfigError("off: needs a file path")
        try:
            return load_off(path, reference_edges="longest")
        except OSError as exc:
            raise ConfigError(f"cannot read OFF file {path}: {exc.strerror or exc}") from None
        except MeshError as exc:
            raise ConfigError(str(exc)) from None
    if name in ("cube", "fichera", "star"):
        return name
    raise ConfigError(f"unknown geometry {name!r}; expected cube, fichera, star or off:<path>")


def config_from_args(args) -> RunConfig:
    star = StarParams(args.star_points, args.star_outer, args.star_inner, args.star_half_thickness)
    return RunConfig(geometry=_geometry(args.geometry), theta=args.theta, estimator=args.estimator,
                     precond=args.precond, lam=args.lam, max_elements=args.max_elements,
                     order=args.order, reference=args.reference, cond=args.cond, star=star,
                     zz_weight=args.zz_weight, refine_edges=args.refine_edges)


def _emit(records, path):
    if path is None:
        csv.writer(sys.stdout, lineterminator="\n").writerows(history_rows(records))
    else:
        write_history(records, path)


def run_command(argv=None) -> int:
    """Parse ``argv``, run the adaptive loop and write its outputs; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        config = config_from_args(args)
        vtk_dir = None if args.vtk_dir in (None, "none") else args.vtk_dir
        if vtk_dir is not None:
            os.makedirs(vtk_dir, exist_ok=True)
        if config.order < 1:
            raise ConfigError(f"order must be at least 1, got {config.order}")
        mesh = config.initial_mesh()
        config.check(mesh)
    except (ConfigError, MeshError, ValueError, OSError) as exc:
        print(f"bemcap: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    def on_level(rec, level):
        if vtk_dir is not None:
            export_vtk(level.mesh, level.indicators, os.path.join(vtk_dir, f"mesh_{rec.level}.vtk"))

    try:
        result = run_adaptive(config, on_level=on_level)
    except AdaptiveError as exc:
        print(f"bemcap: numerical failure: {exc}", file=sys.stderr)
        if exc.records:
            _emit(exc.records, args.csv)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"bemcap: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(result.records, args.csv)
    return EXIT_OK


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
