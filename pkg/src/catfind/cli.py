"""Command-line interface: classify, find, trace, census, render.

Exit codes: 0 success, 1 runtime failure, 2 usage or parse error,
3 the given point is not a critical point.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .detkit import BGStack
from .locate import AugmentedSystem, CatastrophePoint, LocateError, NewtonConfig, NotCriticalError, \
    classify_point, find_catastrophe
from .oracle import SearchBox, census_csv, census_json, read_census_csv, region_census
from .parser import ParseError
from .problem import ProblemSpec, load_problem, parse_assignment, to_number
from .render import Marker, Series, branch_svg, census_svg
from .trace import StepControl, branch_csv, continue_branch, events_json, read_branch_csv

__all__ = ["main", "build_parser", "write_atomic"]

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NOT_CRITICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def write_atomic(path: str | Path, text: str) -> None:
    """Write via a temporary file in the target directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _names(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _floats(text: str, count: int | None = None) -> list[float]:
    try:
        vals = [float(to_number(t)) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if count is not None and len(vals) != count:
        raise UsageError(f"expected {count} comma-separated numbers, got {len(vals)}")
    return vals


def _assignment(text: str) -> dict:
    try:
        return parse_assignment(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fixed(spec: ProblemSpec, args) -> dict:
    values = spec.default_values()
    for item in args.fix or []:
        values.update(_assignment(item))
    unknown = set(values) - set(spec.parameters)
    if unknown:
        raise UsageError(f"--fix names undeclared parameter(s): {sorted(unknown)}")
    return values


def _tolerances(spec: ProblemSpec, args) -> dict:
    return {
        "eps_b": args.eps_b if args.eps_b is not None else spec.tol("eps_b"),
        "eps_g": args.eps_g if args.eps_g is not None else spec.tol("eps_g"),
        "residual": spec.tol("residual"),
    }


def _report(command: str, spec: ProblemSpec, options: dict, tolerances: dict, results, started: float) -> dict:
    return {
        "tool": "catfind",
        "version": __version__,
        "command": command,
        "problem": {"name": spec.name, "digest": spec.digest()},
        "options": options,
        "tolerances": tolerances,
        "results": results,
        "timing": {"seconds": round(time.perf_counter() - started, 6)},
    }


def _emit(args, report: dict, table: str | None = None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        write_atomic(args.out, text)
    if args.format == "csv" and table is not None:
        sys.stdout.write(table)
    elif not args.out:
        sys.stdout.write(text)


def _threads(n: int) -> int:
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def _load(args):
    try:
        spec = load_problem(args.problem)
        return spec, spec.field()
    except ParseError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid problem file: {exc}") from None


def _b_table(cp: CatastrophePoint) -> str:
    lines = ["kind,index,value,scale"]
    lines += [f"B,{i + 1},{v!r},{s!r}" for i, (v, s) in enumerate(cp.B_values)]
    lines += [f"G,{k or '-'},{v!r},{s!r}" for k, (v, s) in cp.G_report.items()]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands

def cmd_classify(args) -> int:
    started = time.perf_counter()
    spec, fld = _load(args)
    point = spec.default_values()
    point.update(_assignment(args.point))
    missing = [s for s in spec.variables + spec.parameters if s not in point]
    if missing:
        raise UsageError(f"--point must assign every variable and parameter; missing {missing}")
    tol = _tolerances(spec, args)
    cp = classify_point(fld, point, r_max=args.r_max, free_params=_names(args.free),
                        eps_b=tol["eps_b"], eps_g=tol["eps_g"])
    options = {"point": {k: float(v) for k, v in sorted(point.items())}, "r_max": args.r_max,
               "free": _names(args.free)}
    _emit(args, _report("classify", spec, options, tol, cp.to_dict(), started), _b_table(cp))
    return EXIT_OK


def cmd_find(args) -> int:
    started = time.perf_counter()
    spec, fld = _load(args)
    r = args.codim
    if r < 1:
        raise UsageError("--codim must be at least 1")
    if r > fld.p:
        raise UsageError(f"--codim {r} exceeds the parameter count: a codimension-r search needs p >= r "
                         f"(problem has p = {fld.p})")
    free = _names(args.free) or fld.param_names[:r]
    if len(free) != r:
        raise UsageError(f"--free must name exactly {r} parameters")
    fixed = _fixed(spec, args)
    unknowns = fld.var_names + free
    base = {k: v for k, v in fixed.items() if k in free}
    if args.seed:
        seeds = [dict(base, **_assignment(s)) for s in args.seed]
    elif args.multistart is not None or not spec.seeds:
        try:
            seeds = spec.multistart(unknowns, args.multistart or 5, base)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        seeds = [dict(base, **s) for s in spec.seed_values()]
    for s in seeds:
        lacking = [u for u in unknowns if u not in s]
        if lacking:
            raise UsageError(f"seed {s} lacks starting values for {lacking}")
    tol = _tolerances(spec, args)
    cfg = NewtonConfig(residual_tol=tol["residual"])
    found = find_catastrophe(fld, r, free, {k: v for k, v in fixed.items() if k not in free}, seeds, cfg,
                             eps_b=tol["eps_b"], eps_g=tol["eps_g"], threads=_threads(args.threads))
    results = {"points": [p.to_dict() for p in found], "seeds": len(seeds), "failed_seeds": len(found.failures)}
    options = {"codim": r, "free": free, "fixed": {k: float(v) for k, v in sorted(fixed.items()) if k not in free},
               "multistart": args.multistart, "seeds": [{k: float(v) for k, v in sorted(s.items())} for s in seeds]
               if args.seed else None}
    header = unknowns + ["label", "full", "residual"]
    rows = [",".join(header)]
    for p in found:
        rows.append(",".join([repr(float(p.point[u])) for u in unknowns] + [p.label, str(p.full).lower(),
                                                                           repr(p.residual_norm)]))
    _emit(args, _report("find", spec, options, tol, results, started), "\n".join(rows) + "\n")
    return EXIT_OK if found else EXIT_FAIL


def _start_point(text: str, spec: ProblemSpec) -> dict:
    path = Path(text)
    if path.suffix == ".json" and path.exists():
        data = json.loads(path.read_text())
        res = data.get("results", data)
        pts = res.get("points") if isinstance(res, dict) else None
        if pts:
            return dict(pts[0]["point"])
        if isinstance(res, dict) and "point" in res:
            return dict(res["point"])
        raise UsageError(f"{text} holds no point")
    return _assignment(text)


def cmd_trace(args) -> int:
    started = time.perf_counter()
    spec, fld = _load(args)
    r = args.codim
    if r < 1:
        raise UsageError("--codim must be at least 1")
    if r + 1 > fld.p:
        raise UsageError(f"continuing a codimension-{r} set needs p >= r + 1 = {r + 1} parameters "
                         f"(problem has p = {fld.p})")
    free = _names(args.free) or fld.param_names[: r + 1]
    if len(free) != r + 1:
        raise UsageError(f"--free must name exactly r + 1 = {r + 1} parameters")
    fixed = _fixed(spec, args)
    start = dict(fixed)
    start.update(_start_point(args.from_, spec))
    lacking = [u for u in fld.var_names + free if u not in start]
    if lacking:
        raise UsageError(f"start point lacks {lacking}")
    bounds = {}
    for item in args.bound or []:
        name, _, rng = item.partition("=")
        lo, hi = _floats(rng.replace(":", ","), 2)
        bounds[name.strip()] = (lo, hi)
    if args.steps < 0:
        raise UsageError("--steps must be non-negative")
    h0 = args.step
    ctrl = StepControl(h0=h0, h_min=min(1e-6, h0), h_max=max(args.h_max, h0), max_samples=args.steps + 1,
                       residual_tol=spec.tol("residual"), bounds=bounds or None)
    tol = _tolerances(spec, args)
    sys_ = AugmentedSystem(fld, r, free, {k: v for k, v in fixed.items() if k not in free}, BGStack(fld))
    orientation = args.orientation
    if args.toward:
        name, _, sign = args.toward.partition(":")
        if name not in sys_.unknowns:
            raise UsageError(f"--toward names {name!r}, not an unknown of the system")
        vec = np.zeros(sys_.n_unknowns)
        vec[sys_.unknowns.index(name)] = -1.0 if sign.strip() == "-" else 1.0
        orientation = vec
    branch = continue_branch(sys_, start, orientation, ctrl, events=args.events == "on",
                             eps_b=tol["eps_b"], eps_g=tol["eps_g"])
    table = branch_csv(branch)
    if args.csv:
        write_atomic(args.csv, table)
        write_atomic(str(args.csv) + ".events.json", events_json(branch) + "\n")
    results = {"samples": len(branch.samples), "stop_reason": branch.stop_reason,
               "stats": {k: (float(v) if isinstance(v, float) else v) for k, v in branch.stats.items()},
               "events": json.loads(events_json(branch)), "csv": str(args.csv) if args.csv else None,
               "start": {k: float(v) for k, v in sorted(branch.samples[0].point.items())}}
    options = {"codim": r, "free": free, "steps": args.steps, "step": h0, "h_max": args.h_max,
               "events": args.events, "orientation": args.toward or args.orientation,
               "bounds": {k: list(v) for k, v in sorted(bounds.items())}}
    _emit(args, _report("trace", spec, options, tol, results, started), table)
    return EXIT_OK


def cmd_census(args) -> int:
    started = time.perf_counter()
    spec, fld = _load(args)
    plane = _names(args.plane)
    if not plane or len(plane) != 2:
        raise UsageError("--plane needs two parameter names, e.g. alpha,beta")
    box = _floats(args.box, 4)
    grid = [int(g) for g in args.grid.split(",")]
    if len(grid) == 1:
        grid *= 2
    if args.search:
        sb = _floats(args.search, 2 * fld.n)
        bounds = tuple(zip(sb[::2], sb[1::2]))
    else:
        missing = [v for v in fld.var_names if v not in spec.boxes]
        if missing:
            raise UsageError(f"no --search box and the problem declares no box for {missing}")
        bounds = tuple(spec.box(v) for v in fld.var_names)
    try:
        res = [int(v) for v in args.resolution.split(",")]
        search = SearchBox(bounds, res[0] if len(res) == 1 else tuple(res))
        fixed = _fixed(spec, args)
        census = region_census(fld, (plane[0], plane[1]), fixed, ((box[0], box[1]), (box[2], box[3])),
                               (grid[0], grid[1]), search)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    table = census_csv(census)
    if args.csv:
        write_atomic(args.csv, table)
        write_atomic(str(args.csv) + ".json", census_json(census) + "\n")
    values, freq = np.unique(census.counts, return_counts=True)
    results = {"meta": census.meta, "histogram": {str(int(v)): int(c) for v, c in zip(values, freq)},
               "counts": census.counts.tolist(), "csv": str(args.csv) if args.csv else None}
    options = {"plane": plane, "box": box, "grid": grid, "search": [list(b) for b in bounds],
               "resolution": search.resolution if isinstance(search.resolution, int) else list(search.resolution)}
    _emit(args, _report("census", spec, options, {"residual": 1e-9}, results, started), table)
    return EXIT_OK


def cmd_render(args) -> int:
    texts = []
    for path in args.inputs:
        try:
            texts.append((path, Path(path).read_text()))
        except OSError as exc:
            raise UsageError(str(exc)) from None
    first = texts[0][1].splitlines()[0] if texts[0][1].strip() else ""
    try:
        if "\\" in first.split(",")[0]:
            if len(texts) != 1:
                raise UsageError("render one census CSV at a time")
            plane, rows, cols, counts = read_census_csv(texts[0][1])
            svg = census_svg(rows, cols, counts, plane[0], plane[1], args.title or "")
        else:
            series, markers = [], []
            axes = _names(args.axes)
            for path, text in texts:
                header, data = read_branch_csv(text)
                if axes is None:
                    axes = header[:2]
                if len(axes) != 2 or any(a not in header for a in axes):
                    raise UsageError(f"--axes must name two columns of {path}: {header}")
                ia, ib = header.index(axes[0]), header.index(axes[1])
                series.append(Series(Path(path).stem, data[:, ia], data[:, ib]))
            for ev_path in args.events or []:
                for ev in json.loads(Path(ev_path).read_text()):
                    pt = ev.get("point")
                    if pt and axes[0] in pt and axes[1] in pt:
                        markers.append(Marker(ev.get("label", "event"), float(pt[axes[0]]), float(pt[axes[1]])))
            svg = branch_svg(series, markers, axes[0] if axes else "", axes[1] if axes else "", args.title or "")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_atomic(args.out, svg)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="catfind", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"catfind {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, tolerances=True):
        p.add_argument("problem", help="problem JSON file or built-in problem name")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", help="write the JSON report here (atomically)")
        p.add_argument("--threads", type=int, default=1, help="worker threads, 0 = one per CPU")
        p.add_argument("--fix", action="append", metavar="NAME=VALUE,...", help="override parameter defaults")
        if tolerances:
            p.add_argument("--eps-b", type=float, dest="eps_b")
            p.add_argument("--eps-g", type=float, dest="eps_g")

    p = sub.add_parser("classify", help="codimension, label and fullness of a critical point")
    common(p)
    p.add_argument("--point", required=True, help="assignment such as 'x=0, y=1, alpha=0'")
    p.add_argument("--free", help="parameters for the fullness determinants (default: first r)")
    p.add_argument("--r-max", type=int, default=8, dest="r_max")
    p.set_defaults(run=cmd_classify)

    p = sub.add_parser("find", help="solve F = B_1 = .. = B_r = 0")
    common(p)
    p.add_argument("--codim", type=int, required=True)
    p.add_argument("--free", help="comma-separated free parameters (default: first r)")
    p.add_argument("--seed", action="append", help="starting assignment; repeatable")
    p.add_argument("--multistart", type=int, nargs="?", const=5, default=None,
                   help="grid of seeds over the problem boxes, N per axis (default 5)")
    p.set_defaults(run=cmd_find)

    p = sub.add_parser("trace", help="continue a codimension-r set in r+1 free parameters")
    common(p)
    p.add_argument("--codim", type=int, required=True)
    p.add_argument("--free", help="comma-separated r+1 free parameters (default: first r+1)")
    p.add_argument("--from", dest="from_", required=True, help="start assignment or a find/classify report")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--h-max", type=float, default=0.25, dest="h_max")
    p.add_argument("--events", choices=("on", "off"), default="on")
    p.add_argument("--orientation", type=int, choices=(-1, 1), default=1,
                   help="initial heading: sign of the last free parameter's rate")
    p.add_argument("--toward", help="initial heading NAME:+ or NAME:- along one unknown")
    p.add_argument("--bound", action="append", help="stop when NAME leaves lo:hi; repeatable")
    p.add_argument("--csv", help="branch CSV path; events go to <csv>.events.json")
    p.set_defaults(run=cmd_trace)

    p = sub.add_parser("census", help="critical-point counts over a parameter plane")
    common(p, tolerances=False)
    p.add_argument("--plane", required=True, help="two parameters, e.g. alpha,beta")
    p.add_argument("--box", required=True, help="lo1,hi1,lo2,hi2 for the plane")
    p.add_argument("--grid", default="40", help="N or N,M cells")
    p.add_argument("--search", help="variable search box lo,hi per variable (default: problem boxes)")
    p.add_argument("--resolution", default="40", help="Newton starts per variable axis: N or one N per variable")
    p.add_argument("--csv", help="census CSV path; metadata goes to <csv>.json")
    p.set_defaults(run=cmd_census)

    p = sub.add_parser("render", help="SVG of branch or census CSV files")
    p.add_argument("inputs", nargs="+", help="branch CSVs (overlaid) or one census CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--axes", help="two branch columns, e.g. alpha,beta")
    p.add_argument("--events", action="append", help="events JSON to mark; repeatable")
    p.add_argument("--title")
    p.set_defaults(run=cmd_render)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except UsageError as exc:
        parser.exit(EXIT_USAGE, f"catfind {args.command}: error: {exc}\n")
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotCriticalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CRITICAL
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LocateError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
