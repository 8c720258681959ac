"""Pseudo-arclength continuation of catastrophe sets with event detection.

A codimension-r set is continued as the solution curve of the n+r equations
F = B_1 = .. = B_r = 0 in n+r+1 unknowns (the variables plus r+1 free
parameters).  B_{r+1} is monitored along the branch; a sign change between
samples is bracketed by bisection along the arclength and then refined with
the codimension-(r+1) system.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np
from scipy.optimize import least_squares

from .detkit import DEFAULT_EPS
from .locate import (AugmentedSystem, CatastrophePoint, LocateError, NewtonConfig,
                     classify_point, newton_solve)

__all__ = [
    "RankDeficiency",
    "StepControl",
    "Sample",
    "Event",
    "Branch",
    "tangent",
    "continue_branch",
    "validate_against_parametric",
    "branch_csv",
    "events_json",
    "read_branch_csv",
]

log = logging.getLogger(__name__)


class RankDeficiency(LocateError):
    """The augmented Jacobian lost rank: branch endpoint or singular point."""


@dataclass(frozen=True)
class StepControl:
    h0: float = 0.01
    h_min: float = 1e-6
    h_max: float = 0.25
    grow: float = 1.5
    shrink: float = 0.5
    easy_iters: int = 3
    max_samples: int = 500
    corrector_iters: int = 15
    residual_tol: float = 1e-11
    bounds: Mapping[str, tuple[float, float]] | None = None

    def __post_init__(self):
        if not 0 < self.h_min <= self.h0 <= self.h_max:
            raise ValueError("step bounds must satisfy 0 < h_min <= h0 <= h_max")
        if self.max_samples < 1:
            raise ValueError("max_samples must be positive")


@dataclass
class Sample:
    point: dict
    u: np.ndarray
    B: list[float]
    arclength: float

    @property
    def monitor(self) -> float:
        return self.B[-1]


@dataclass
class Event:
    index: int
    point: CatastrophePoint | None
    bracket: tuple[float, float]
    note: str = ""


@dataclass
class Branch:
    system: AugmentedSystem
    samples: list[Sample] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    stop_reason: str = ""

    @property
    def unknowns(self) -> tuple[str, ...]:
        return self.system.unknowns

    def array(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = list(names or self.unknowns)
        return np.array([[float(s.point[n]) for n in names] for s in self.samples]).reshape(-1, len(names))

    def column(self, name: str) -> np.ndarray:
        return np.array([float(s.point[name]) for s in self.samples])


def _null_vector(J: np.ndarray) -> tuple[np.ndarray, float, float]:
    _, sv, vt = np.linalg.svd(J)
    return vt[-1], sv[-1] if len(sv) == J.shape[0] else 0.0, sv[0] if len(sv) else 0.0


def tangent(sys: AugmentedSystem, point: Union[Mapping, np.ndarray], previous: np.ndarray | None = None,
            orientation: Union[int, Sequence[float]] = 1) -> np.ndarray:
    """Unit null vector of the (n+r) x (n+r+1) augmented Jacobian.

    The sign follows ``previous`` when given.  Otherwise an integer
    orientation selects the direction in which the last unknown (the extra
    parameter) increases, falling back to the largest component when that
    entry vanishes; a vector orientation selects the direction with positive
    inner product.
    """
    if sys.n_unknowns != sys.n_eq + 1:
        raise ValueError("tangent needs one more unknown than equations")
    u = point if isinstance(point, np.ndarray) else sys.vector(point)
    _, J = sys.evaluate(u)
    t, smallest, largest = _null_vector(J)
    if not smallest > 1e-10 * max(largest, 1.0):
        raise RankDeficiency(f"augmented Jacobian is rank deficient (sigma_min {smallest:.3g})", sys.binding(u))
    if previous is not None:
        ref = previous
    elif np.ndim(orientation) == 0:
        sign = 1.0 if orientation >= 0 else -1.0
        ref = np.zeros_like(t)
        k = len(t) - 1 if abs(t[-1]) > 1e-8 else int(np.argmax(np.abs(t)))
        ref[k] = sign
    else:
        ref = np.asarray(orientation, dtype=float)
    if float(np.dot(t, ref)) < 0:
        t = -t
    return t / np.linalg.norm(t)


def _polish(sys: AugmentedSystem, u: np.ndarray, tol: float, iters: int = 30) -> np.ndarray:
    """Minimum-norm Newton onto the curve."""
    for _ in range(iters):
        res, J = sys.evaluate(u)
        if np.max(np.abs(res)) <= tol:
            return u
        u = u - np.linalg.lstsq(J, res, rcond=None)[0]
    res, _ = sys.evaluate(u)
    if np.max(np.abs(res)) <= 1e3 * tol:
        return u
    raise LocateError("start point is not on the branch", sys.binding(u))


def _corrector(sys: AugmentedSystem, u0: np.ndarray, t: np.ndarray, sigma: float,
               ctrl: StepControl) -> tuple[np.ndarray, int] | None:
    """Newton on [equations; t.(u - u0) - sigma] from the tangent predictor."""
    u = u0 + sigma * t
    last = np.inf
    for it in range(ctrl.corrector_iters + 1):
        try:
            res, J = sys.evaluate(u)
        except (ArithmeticError, ValueError):
            return None
        h = np.append(res, np.dot(t, u - u0) - sigma)
        if not np.all(np.isfinite(h)):
            return None
        size = float(np.max(np.abs(h)))
        if size <= ctrl.residual_tol:
            return u, it
        if it == ctrl.corrector_iters or size > 1e3 * last:
            return None
        last = size
        try:
            du = np.linalg.solve(np.vstack([J, t]), -h)
        except np.linalg.LinAlgError:
            return None
        u = u + du
    return None


def _monitor_values(sys: AugmentedSystem, binding: Mapping) -> list[float]:
    st = sys.stack
    return [st.B_value(s, binding)[0] for s in range(1, sys.codim + 2)]


def _inside(ctrl: StepControl, binding: Mapping) -> bool:
    if not ctrl.bounds:
        return True
    for name, (lo, hi) in ctrl.bounds.items():
        v = float(binding[name])
        if not lo <= v <= hi:
            return False
    return True


def continue_branch(sys: AugmentedSystem, start: Union[Mapping, CatastrophePoint],
                    orientation: Union[int, Sequence[float]] = 1, ctrl: StepControl | None = None,
                    events: bool = True, eps_b: float = DEFAULT_EPS, eps_g: float = DEFAULT_EPS,
                    newton: NewtonConfig | None = None) -> Branch:
    """Trace the solution curve of ``sys`` from ``start``."""
    ctrl = ctrl or StepControl()
    if sys.n_unknowns != sys.n_eq + 1:
        raise ValueError(f"continuation needs n+r+1 unknowns; system has {sys.n_eq} equations "
                         f"and {sys.n_unknowns} unknowns")
    if isinstance(start, CatastrophePoint):
        start = start.point
    u = _polish(sys, sys.vector(start), ctrl.residual_tol)
    branch = Branch(sys)
    stats = {"accepted": 0, "rejected": 0, "corrector_iters": 0, "max_step": 0.0}
    branch.stats = stats

    def record(u_new: np.ndarray, s_len: float) -> Sample:
        b = sys.binding(u_new)
        sample = Sample(b, u_new.copy(), _monitor_values(sys, b), s_len)
        branch.samples.append(sample)
        return sample

    prev = record(u, 0.0)
    try:
        t = tangent(sys, u, orientation=orientation)
    except RankDeficiency as exc:
        branch.stop_reason = f"degenerate point on branch: {exc}"
        return branch
    h = ctrl.h0
    while len(branch.samples) < ctrl.max_samples:
        step = _corrector(sys, prev.u, t, h, ctrl)
        ok = step is not None
        if ok:
            u_new, iters = step
            pred = prev.u + h * t
            ok = np.linalg.norm(u_new - pred) <= 0.5 * h + 1e-12
        if ok:
            try:
                t_new = tangent(sys, u_new, previous=t)
            except RankDeficiency as exc:
                branch.stop_reason = f"degenerate point on branch: {exc}"
                break
            ok = float(np.dot(t_new, t)) > 0.5
        if not ok:
            stats["rejected"] += 1
            h *= ctrl.shrink
            if h < ctrl.h_min:
                branch.stop_reason = "corrector failed at minimum step"
                break
            continue
        if not _inside(ctrl, sys.binding(u_new)):
            branch.stop_reason = "left bounds"
            break
        dist = float(np.linalg.norm(u_new - prev.u))
        cur = record(u_new, prev.arclength + dist)
        stats["accepted"] += 1
        stats["corrector_iters"] += iters
        stats["max_step"] = max(stats["max_step"], dist)
        if events and _sign_change(prev.monitor, cur.monitor):
            branch.events.append(_refine_event(sys, prev, t, h, len(branch.samples) - 1,
                                               ctrl, eps_b, eps_g, newton))
        prev, t = cur, t_new
        if iters < ctrl.easy_iters:
            h = min(h * ctrl.grow, ctrl.h_max)
    else:
        branch.stop_reason = "max samples"
    if not branch.stop_reason:
        branch.stop_reason = "max samples"
    return branch


def _sign_change(a: float, b: float) -> bool:
    return (a < 0 < b) or (b < 0 < a)


def _refine_event(sys: AugmentedSystem, prev: Sample, t: np.ndarray, h: float, index: int,
                  ctrl: StepControl, eps_b: float, eps_g: float, newton: NewtonConfig | None) -> Event:
    lo, hi = 0.0, h
    f_lo = prev.monitor
    u_mid = prev.u
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        step = _corrector(sys, prev.u, t, mid, ctrl)
        if step is None:
            return Event(index, None, (lo, hi), "bisection corrector failed")
        u_mid = step[0]
        f_mid = _monitor_values(sys, sys.binding(u_mid))[-1]
        if f_mid == 0:
            lo = hi = mid
            break
        if _sign_change(f_lo, f_mid):
            hi = mid
        else:
            lo, f_lo = mid, f_mid
        if hi - lo <= 1e-13 * max(1.0, h):
            break
    seed = sys.binding(u_mid)
    note = ""
    point = seed
    if not sys.constraints:
        upper = AugmentedSystem(sys.field, sys.codim + 1, sys.free_params, sys.fixed, sys.stack)
        try:
            point = newton_solve(upper, seed, newton)
        except LocateError as exc:
            note = f"escalation Newton failed: {exc}; using bisection point"
    try:
        cp = classify_point(sys.field, point, free_params=sys.free_params, eps_b=eps_b, eps_g=eps_g,
                            stack=sys.stack)
    except LocateError as exc:
        return Event(index, None, (lo, hi), f"classification failed: {exc}")
    return Event(index, cp, (lo, hi), note)


def validate_against_parametric(branch: Branch, closed_form: Callable[..., Mapping[str, np.ndarray]],
                                ranges: Sequence[tuple[float, float]],
                                guess: Callable[[Mapping], Sequence[float]] | None = None,
                                grid: int = 64) -> float:
    """Largest distance from a branch sample to a parametrised closed-form set.

    ``closed_form(*params)`` returns coordinate name -> value and must accept
    numpy arrays; distances are Euclidean over the returned coordinates.  The
    nearest point is found by a coarse grid (or ``guess``) followed by a
    bounded least-squares solve.
    """
    if not branch.samples:
        return 0.0
    d = len(ranges)
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)
    axes = [np.linspace(a, b, grid) for a, b in zip(lo, hi)]
    mesh = [m.ravel() for m in np.meshgrid(*axes, indexing="ij")]
    with np.errstate(all="ignore"):
        table = closed_form(*mesh)
    names = sorted(table)
    table_arr = np.array([np.broadcast_to(np.asarray(table[k], dtype=float), mesh[0].shape) for k in names])
    worst = 0.0
    for sample in branch.samples:
        target = np.array([float(sample.point[k]) for k in names])

        def resid(q):
            with np.errstate(all="ignore"):
                vals = closed_form(*q)
            out = np.array([float(vals[k]) for k in names]) - target
            return np.where(np.isfinite(out), out, 1e6)

        if guess is not None:
            q0 = np.clip(np.asarray(guess(sample.point), dtype=float), lo, hi)
        else:
            dist = np.linalg.norm(np.nan_to_num(table_arr - target[:, None], nan=1e6), axis=0)
            q0 = np.array([m[int(np.argmin(dist))] for m in mesh])
        fit = least_squares(resid, q0, bounds=(lo, hi) if d else (-np.inf, np.inf),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
        worst = max(worst, float(np.linalg.norm(resid(fit.x))))
    return worst


# ---------------------------------------------------------------------------
# export

def branch_csv(branch: Branch) -> str:
    field_ = branch.system.field
    names = field_.var_names + field_.param_names
    r1 = branch.system.codim + 1
    header = names + ["arclength"] + [f"B{s}" for s in range(1, r1 + 1)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for s in branch.samples:
        row = [repr(float(s.point[n])) for n in names] + [repr(float(s.arclength))] + [repr(float(b)) for b in s.B]
        w.writerow(row)
    return buf.getvalue()


def events_json(branch: Branch) -> str:
    out = []
    for ev in branch.events:
        item = {"sample_index": ev.index, "bracket": list(ev.bracket), "note": ev.note}
        if ev.point is not None:
            item.update(ev.point.to_dict())
        out.append(item)
    return json.dumps(out, indent=2, sort_keys=True)


def read_branch_csv(text: str) -> tuple[list[str], np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty CSV")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValueError(f"malformed CSV: {exc}") from None
    if data.size and data.shape[1] != len(header):
        raise ValueError("malformed CSV: row width does not match header")
    return header, data.reshape(-1, len(header))
