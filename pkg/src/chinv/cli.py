"""Command-line front end.

Every subcommand prints one JSON document (to stdout, or to --json) that
echoes the resolved configuration. Exit codes: 0 success, 1 usage error,
2 computation error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cpoly import ComplexPoly, format_complex, parse_coeffs, parse_complex
from .field import (
    all_separatrices,
    as_window,
    curves_to_csv,
    curves_to_svg,
    inflection_curve,
    root_box,
)
from .invariant import (
    auto_window,
    certify_invariant,
    mask_distance,
    minimal_set_grid,
    oracle_set,
    read_pgm,
    write_pgm,
)
from .julia import chaos_game, containment, inverse_orbit, write_density_pgm
from .operator import build, classify, cjson, report_to_json
from .trails import track_trail, traces_to_csv

COCHLEOID = ("-1,1", "0,0,1")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _window(text):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed window {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("window needs re0,re1,im0,im1")
    try:
        return as_window(vals)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _resolution(text):
    try:
        parts = [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed resolution {text!r}") from None
    if len(parts) not in (1, 2) or min(parts) < 1:
        raise argparse.ArgumentTypeError("resolution is n or nx,ny with positive entries")
    return parts[0] if len(parts) == 1 else tuple(parts)


def _complex(text):
    try:
        return parse_complex(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _coeffs(text):
    try:
        return parse_coeffs(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text}")
        return v
    return conv


def _add_op(p, required=True):
    p.add_argument("--p", type=_coeffs, required=required, help="P coefficients, ascending, comma separated")
    p.add_argument("--q", type=_coeffs, required=required, help="Q coefficients, ascending, comma separated")


def _add_grid(p, res=400):
    p.add_argument("--window", type=_window, help="re0,re1,im0,im1 (default: automatic)")
    p.add_argument("--res", type=_resolution, default=res, help="n or nx,ny")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=_positive(int), help="cap on worker threads")
    common.add_argument("--json", dest="json_out", help="write the JSON report here instead of stdout")

    ap = _Parser(prog="chinv", description="Hutchinson invariant sets of T = Q d/dz + P")
    ap.add_argument("--version", action="version", version=f"chinv {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("classify", parents=[common], help="existence decisions and regularity class")
    _add_op(p)

    p = sub.add_parser("trail", parents=[common], help="track the trail of u")
    _add_op(p)
    p.add_argument("--u", type=_complex, required=True)
    p.add_argument("--t-max", type=_positive(float), default=1e6)
    p.add_argument("--steps", type=_positive(int), default=512)
    p.add_argument("--out", help="CSV of sampled traces")

    p = sub.add_parser("minimal-set", parents=[common], help="raster of the minimal invariant set")
    _add_op(p)
    _add_grid(p)
    p.add_argument("--order", choices=("jacobi", "shuffled"), default="jacobi")
    p.add_argument("--no-supersample", action="store_true")
    p.add_argument("--separatrices", action="store_true", help="pre-seed with separatrices")
    p.add_argument("--out", help="PGM mask (sidecar JSON written alongside)")

    p = sub.add_parser("certify", parents=[common], help="check a mask for invariance")
    _add_op(p)
    p.add_argument("--mask", required=True)
    p.add_argument("--method", choices=("auto", "boundary_rays", "complement_rays"), default="auto")
    p.add_argument("--slack", type=int, default=1)

    for name, hlp in (("separatrix", "separatrices from every pole"),
                      ("inflection", "zero set of Im R'")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        _add_op(p)
        _add_grid(p)
        p.add_argument("--out", help="CSV, or SVG when the name ends in .svg")

    p = sub.add_parser("julia", parents=[common], help="Julia set of z + tR(z) by inverse iteration")
    _add_op(p)
    p.add_argument("--t", type=_positive(float), required=True)
    p.add_argument("--u0", type=_complex)
    _add_cloud(p)

    p = sub.add_parser("chaos", parents=[common], help="random iteration over t >= t-min")
    _add_op(p)
    p.add_argument("--t-min", type=float, default=1.0)
    p.add_argument("--u0", type=_complex)
    _add_cloud(p)

    p = sub.add_parser("oracle-compare", parents=[common], help="distance between a mask and an oracle set")
    _add_op(p, required=False)
    p.add_argument("--name", required=True,
                   choices=("cochleoid", "disk", "halfplane", "cone_complement", "interval"))
    p.add_argument("--mask", required=True)
    p.add_argument("--radius", type=float)
    p.add_argument("--center", type=_complex)
    p.add_argument("--level", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--apex", type=_complex)
    p.add_argument("--axis", type=float)
    p.add_argument("--opening", type=float)
    return ap


def _add_cloud(p):
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--chains", type=_positive(int), default=1000)
    p.add_argument("--out", help="CSV of points")
    p.add_argument("--density", help="PGM of log-scaled hit counts")
    p.add_argument("--mask", help="report containment against this PGM mask")
    p.add_argument("--dilation", type=int, default=2)
    _add_grid(p, res=400)


def _glue_values(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Join value options to their argument so negative literals such as
    '-0.25,1.25,...' are not mistaken for flags."""
    takes = set()
    stack = [parser]
    while stack:
        ps = stack.pop()
        for a in ps._actions:
            if isinstance(a, argparse._SubParsersAction):
                stack.extend(a.choices.values())
            elif a.option_strings and a.nargs is None and not isinstance(
                    a, (argparse._StoreConstAction, argparse._VersionAction, argparse._HelpAction)):
                takes.update(a.option_strings)
    out = []
    it = iter(argv)
    for tok in it:
        if tok in takes:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def _config(args) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if isinstance(v, list):
            v = [format_complex(c) for c in v]
        elif isinstance(v, complex):
            v = format_complex(v)
        elif hasattr(v, "_fields"):
            v = [float(x) for x in v]
        elif isinstance(v, tuple):
            v = list(v)
        cfg[k] = v
    return cfg


def _operator(args):
    if args.p is None or args.q is None:
        raise UsageError("--p and --q are required")
    return build(ComplexPoly(args.p), ComplexPoly(args.q))


def _resolve_window(args, op):
    if args.window is None:
        args.window = auto_window(op)
    return args.window


def _curves(args, cs):
    if args.out:
        text = curves_to_svg(cs) if args.out.endswith(".svg") else curves_to_csv(cs)
        Path(args.out).write_text(text)
    return {"curves": len(cs), "tags": list(cs.tags), "stop_reasons": list(cs.stop_reasons),
            "vertices": int(sum(len(pl) for pl in cs.polylines))}


def cmd_classify(args):
    return report_to_json(classify(_operator(args)))


def cmd_trail(args):
    op = _operator(args)
    traces = track_trail(op, args.u, args.t_max, base_steps=args.steps)
    if args.out:
        Path(args.out).write_text(traces_to_csv(traces))
    def tag(pair):
        kind, val = pair
        return [kind, cjson(val) if isinstance(val, complex) else val]
    return {"traces": [{"origin": tag(tr.origin), "terminus": tag(tr.terminus),
                        "end": cjson(tr.z[-1]), "samples": len(tr.t)} for tr in traces]}


def cmd_minimal_set(args):
    op = _operator(args)
    w = _resolve_window(args, op)
    mask = minimal_set_grid(op, w, args.res, supersample=not args.no_supersample,
                            separatrices=args.separatrices, order=args.order, seed=args.seed,
                            threads=args.threads)
    if args.out:
        write_pgm(mask, args.out)
    return {"nx": mask.nx, "ny": mask.ny, "cells": int(mask.cells.sum()),
            "sweeps": mask.meta.get("sweeps"), "whole_plane": bool(mask.meta.get("whole_plane", False))}


def cmd_certify(args):
    op = _operator(args)
    rep = certify_invariant(op, read_pgm(args.mask), method=args.method, slack=args.slack)
    return {"passed": rep.passed, "method": rep.method, "violations": [{"z": cjson(z), "t": t} for z, t in rep.violations],
            "boundary_cells_checked": rep.boundary_cells_checked,
            "zeros_inside": rep.zeros_inside, "zeros_interior": rep.zeros_interior}


def cmd_separatrix(args):
    op = _operator(args)
    return _curves(args, all_separatrices(op, window=_resolve_window(args, op)))


def cmd_inflection(args):
    op = _operator(args)
    return _curves(args, inflection_curve(op, _resolve_window(args, op), args.res))


def _cloud_outputs(args, op, cloud):
    out = {"points": len(cloud), "stagnated_chains": cloud.stagnated_chains}
    if args.out:
        Path(args.out).write_text(cloud.to_csv())
    if args.density:
        if args.window is None:
            args.window = root_box(op)
        write_density_pgm(cloud, args.window, args.res, args.density)
    if args.mask:
        out["containment"] = containment(cloud, read_pgm(args.mask), args.dilation)
    return out


def cmd_julia(args):
    op = _operator(args)
    u0 = args.u0 if args.u0 is not None else op.pq_roots()[0]
    args.u0 = complex(u0)
    cloud = inverse_orbit(op, args.t, args.u0, args.n, seed=args.seed, burn_in=args.burn_in,
                          chains=args.chains)
    return _cloud_outputs(args, op, cloud)


def cmd_chaos(args):
    op = _operator(args)
    cloud = chaos_game(op, args.t_min, args.n, seed=args.seed, u0=args.u0, burn_in=args.burn_in,
                       chains=args.chains)
    return _cloud_outputs(args, op, cloud)


def cmd_oracle_compare(args):
    if args.name == "cochleoid" and args.p is None and args.q is None:
        args.p, args.q = parse_coeffs(COCHLEOID[0]), parse_coeffs(COCHLEOID[1])
    op = _operator(args)
    mask = read_pgm(args.mask)
    keys = ("radius", "center", "level", "theta", "apex", "axis", "opening")
    params = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    try:
        ref = oracle_set(op, args.name, mask.window, (mask.nx, mask.ny), **params)
    except KeyError as e:
        raise UsageError(f"oracle {args.name} needs --{e.args[0]}") from None
    return mask_distance(mask, ref)


COMMANDS = {
    "classify": cmd_classify,
    "trail": cmd_trail,
    "minimal-set": cmd_minimal_set,
    "certify": cmd_certify,
    "separatrix": cmd_separatrix,
    "inflection": cmd_inflection,
    "julia": cmd_julia,
    "chaos": cmd_chaos,
    "oracle-compare": cmd_oracle_compare,
}


def _set_threads(n):
    if n is None:
        return
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _clean(x):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_glue_values(parser, argv))
        _set_threads(args.threads)
        result = COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:   # --help, --version
        return int(e.code or 0)
    except Exception as e:   # noqa: BLE001 -- every computation failure maps to exit 2
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    doc = _clean({"command": args.command, "config": _config(args), "result": result})
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.json_out:
        Path(args.json_out).write_text(text + "\n")
    else:
        print(text)
    return 0


def main() -> None:
    sys.exit(run())
