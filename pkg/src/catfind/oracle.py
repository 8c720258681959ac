"""Brute-force critical-point counting, independent of the B-G machinery.

Newton's method is started from every cell centre of a grid over a search box
(vectorised over all starts with numpy), converged roots inside the box are
kept and near-duplicates merged.  Two candidate roots merge when they lie
within the merge radius plus a multiple of their Newton error estimates (the
size of the next Newton correction): a highly degenerate root (the coincident
roots at a butterfly, say) is only resolvable to roughly eps**(1/m) in
floating point, and its converged copies carry error estimates of that size,
while simple roots a merge radius apart have tiny estimates and stay distinct.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from . import expr as E
from .expr import Tape
from .parser import VectorField

__all__ = [
    "SearchBox",
    "RootSet",
    "Census",
    "count_critical_points",
    "region_census",
    "odd_steps",
    "count_along",
    "sample_unfoldings",
    "prescribe_roots",
    "census_csv",
    "census_json",
    "read_census_csv",
]

RESIDUAL_TOL = 1e-9
MERGE_FACTOR = 1e-5
MAX_VARIABLES = 4
ERROR_FACTOR = 10.0
_CHUNK = 1 << 18


@dataclass(frozen=True)
class SearchBox:
    """Per-variable intervals and Newton starts per axis (one int for all axes, or one per axis)."""

    bounds: tuple[tuple[float, float], ...]
    resolution: Union[int, tuple[int, ...]] = 40

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds))
        for lo, hi in self.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
                raise ValueError(f"invalid interval [{lo}, {hi}]")
        if not np.ndim(self.resolution):
            res = int(self.resolution)
        else:
            res = tuple(int(r) for r in self.resolution)
            if len(res) != len(self.bounds):
                raise ValueError("resolution needs one entry per interval")
        object.__setattr__(self, "resolution", res)
        if min(self.axis_resolution) < 4:
            raise ValueError("resolution must be at least 4")

    @property
    def axis_resolution(self) -> tuple[int, ...]:
        if isinstance(self.resolution, int):
            return (self.resolution,) * len(self.bounds)
        return self.resolution

    @classmethod
    def around(cls, center: Sequence[float], half_width: float = 0.5,
               resolution: Union[int, tuple[int, ...]] = 40) -> "SearchBox":
        return cls(tuple((c - half_width, c + half_width) for c in center), resolution)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum((hi - lo) ** 2 for lo, hi in self.bounds)))

    @property
    def merge_radius(self) -> float:
        return MERGE_FACTOR * self.diameter

    def refined(self, factor: int = 2) -> "SearchBox":
        if isinstance(self.resolution, int):
            return SearchBox(self.bounds, self.resolution * factor)
        return SearchBox(self.bounds, tuple(r * factor for r in self.resolution))

    def centers(self) -> np.ndarray:
        axes = []
        for (lo, hi), m in zip(self.bounds, self.axis_resolution):
            w = (hi - lo) / m
            axes.append(lo + w * (np.arange(m) + 0.5))
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)

    def contains(self, pts: np.ndarray, slack: float = 1e-9) -> np.ndarray:
        lo = np.array([b[0] for b in self.bounds]) - slack
        hi = np.array([b[1] for b in self.bounds]) + slack
        return np.all((pts >= lo) & (pts <= hi), axis=-1)


@dataclass
class RootSet:
    names: tuple[str, ...]
    points: np.ndarray
    residuals: np.ndarray
    stable: bool | None = None

    @property
    def count(self) -> int:
        return len(self.points)

    def bindings(self) -> list[dict]:
        return [dict(zip(self.names, map(float, p))) for p in self.points]

    def __len__(self):
        return self.count


class _Kernel:
    """Vectorised residual and Jacobian of a field over its variables."""

    def __init__(self, field: VectorField):
        self.field = field
        n = field.n
        jac = [E.differentiate(c, v) for c in field.components for v in field.variables]
        self.tape = Tape(list(field.components) + jac, field.var_names + field.param_names)
        self.n = n

    def __call__(self, X: np.ndarray, P: Sequence) -> tuple[np.ndarray, np.ndarray]:
        m = X.shape[0]
        n = self.n
        with np.errstate(all="ignore"):
            out = self.tape([X[:, i] for i in range(n)] + list(P))
        vals = [np.broadcast_to(np.asarray(o, dtype=float), (m,)) for o in out]
        F = np.stack(vals[:n], axis=1)
        J = np.stack(vals[n:], axis=1).reshape(m, n, n)
        return F, J


def _newton(kernel: _Kernel, X: np.ndarray, P: Sequence, box: SearchBox, iters: int = 60):
    """Undamped Newton from every row of X with a step cap; returns (X, residual, alive)."""
    X = X.copy()
    alive = np.ones(len(X), dtype=bool)
    done = np.zeros(len(X), dtype=bool)
    cap = 0.5 * box.diameter
    lo = np.array([b[0] for b in box.bounds])
    hi = np.array([b[1] for b in box.bounds])
    far = 2.0 * (hi - lo)
    for _ in range(iters):
        idx = np.nonzero(alive)[0]
        if not len(idx):
            break
        Pi = [p[idx] if np.ndim(p) else p for p in P]
        F, J = kernel(X[idx], Pi)
        with np.errstate(all="ignore"):
            det = np.linalg.det(J)
        ok = np.isfinite(det) & (np.abs(det) > 1e-300) & np.all(np.isfinite(F), axis=1)
        alive[idx[~ok]] = False
        idx, F, J = idx[ok], F[ok], J[ok]
        if not len(idx):
            break
        step = np.linalg.solve(J, -F[..., None])[..., 0]
        norm = np.max(np.abs(step), axis=1)
        scale = np.minimum(1.0, cap / np.maximum(norm, 1e-300))
        X[idx] += step * scale[:, None]
        outside = np.any((X[idx] < lo - far) | (X[idx] > hi + far), axis=1)
        alive[idx[outside]] = False
        settled = norm <= 1e-14 * (1.0 + np.max(np.abs(X[idx]), axis=1))
        done[idx[settled & ~outside]] = True
        alive[idx[settled]] = False
    F, J = kernel(X, list(P))
    res = np.max(np.abs(F), axis=1)
    res[~np.isfinite(res)] = np.inf
    return X, res, alive | done | (res <= RESIDUAL_TOL), _newton_error(F, J)


def _newton_error(F: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Size of the next Newton correction, the local error estimate of each root."""
    err = np.zeros(len(F))
    with np.errstate(all="ignore"):
        det = np.linalg.det(J)
    ok = np.isfinite(det) & (np.abs(det) > 1e-300) & np.all(np.isfinite(F), axis=1)
    if np.any(ok):
        err[ok] = np.max(np.abs(np.linalg.solve(J[ok], F[ok][..., None])[..., 0]), axis=1)
    return err


def _merge(pts: np.ndarray, res: np.ndarray, err: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Cluster converged roots; returns (representatives, residuals) sorted lexicographically.

    Candidates a and b merge when |a - b| <= radius + ERROR_FACTOR * (err_a + err_b)
    in the max-norm, transitively.
    """
    n = pts.shape[1] if pts.ndim == 2 else 0
    if not len(pts):
        return pts.reshape(0, n), res[:0]
    order = np.lexsort(pts.T[::-1])
    pts, res, err = pts[order], res[order], err[order]
    # coarse pass: bucket by a lattice of half the radius; neighbouring buckets rejoin below
    keys = np.floor(pts / (0.5 * radius)).astype(np.int64)
    _, first, label = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    label = label.ravel()
    rep_pts = pts[first]
    rep_err = np.zeros(len(first))
    np.maximum.at(rep_err, label, err)
    k = len(rep_pts)
    parent = list(range(k))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    if k > 1:
        P, e = rep_pts, rep_err
        ia, ib = np.triu_indices(k, 1)
        d = np.max(np.abs(P[ia] - P[ib]), axis=1)
        near = d <= radius + ERROR_FACTOR * (e[ia] + e[ib])
        for a, b in zip(ia[near], ib[near]):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    group = np.array([find(j) for j in range(k)])[label]
    # smallest residual per group (ties resolved by the sorted order)
    by = np.lexsort((np.arange(len(pts)), res, group))
    best = by[np.r_[True, group[by][1:] != group[by][:-1]]]
    best_pts, best_res = pts[best], res[best]
    order = np.lexsort(best_pts.T[::-1])
    return best_pts[order], best_res[order]


def _param_values(field: VectorField, params: Mapping) -> list[float]:
    missing = [p for p in field.param_names if p not in params]
    if missing:
        raise ValueError(f"unbound parameter(s): {missing}")
    return [float(params[p]) for p in field.param_names]


def _check(field: VectorField, box: SearchBox):
    if field.n > MAX_VARIABLES:
        raise ValueError(f"the grid oracle supports n <= {MAX_VARIABLES}, field has n = {field.n}")
    if box.dim != field.n:
        raise ValueError(f"search box has {box.dim} intervals for {field.n} variables")


def _count_batch(kernel: _Kernel, box: SearchBox, rows: Sequence[Sequence[float]]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Roots for several parameter vectors in shared vectorised Newton sweeps."""
    starts = box.centers()
    ns = len(starts)
    per_chunk = max(1, _CHUNK // ns)
    out = []
    for c0 in range(0, len(rows), per_chunk):
        chunk = [list(map(float, r)) for r in rows[c0:c0 + per_chunk]]
        X = np.tile(starts, (len(chunk), 1))
        P = [np.repeat(col, ns) for col in np.array(chunk).T]
        X, res, alive, err = _newton(kernel, X, P, box)
        good = alive & (res <= RESIDUAL_TOL) & box.contains(X)
        for k in range(len(chunk)):
            sl = slice(k * ns, (k + 1) * ns)
            g = good[sl]
            out.append(_merge(X[sl][g], res[sl][g], err[sl][g], box.merge_radius))
    return out


def count_critical_points(field: VectorField, params: Mapping, box: SearchBox,
                          verify: bool = False) -> RootSet:
    """All critical points of the field inside ``box`` at fixed parameters.

    With ``verify`` the count is repeated at doubled resolution and
    ``RootSet.stable`` records whether it stayed the same.
    """
    _check(field, box)
    kernel = _Kernel(field)
    P = _param_values(field, params)
    ((pts, res),) = _count_batch(kernel, box, [P])
    out = RootSet(tuple(field.var_names), pts, res)
    if verify:
        ((again, _),) = _count_batch(kernel, box.refined(), [P])
        out.stable = len(again) == len(pts)
    return out


@dataclass
class Census:
    plane: tuple[str, str]
    axes: tuple[np.ndarray, np.ndarray]
    counts: np.ndarray
    fixed: dict
    box: SearchBox
    meta: dict = field(default_factory=dict)


def region_census(field: VectorField, plane: tuple[str, str], fixed: Mapping,
                  plane_box: tuple[tuple[float, float], tuple[float, float]], grid: tuple[int, int] | int,
                  box: SearchBox) -> Census:
    """Critical-point count at every cell centre of a two-parameter plane.

    ``counts[i, j]`` belongs to ``plane[0] = axes[0][i]``, ``plane[1] = axes[1][j]``.
    """
    _check(field, box)
    a, b = plane
    if a == b or a not in field.param_names or b not in field.param_names:
        raise ValueError(f"plane must name two distinct declared parameters, got {plane}")
    if isinstance(grid, int):
        grid = (grid, grid)
    axes = []
    for (lo, hi), m in zip(plane_box, grid):
        if not lo < hi or m < 1:
            raise ValueError("invalid plane box or grid")
        w = (hi - lo) / m
        axes.append(lo + w * (np.arange(m) + 0.5))
    missing = [p for p in field.param_names if p not in plane and p not in fixed]
    if missing:
        raise ValueError(f"unbound parameter(s): {missing}")
    base = {p: float(fixed[p]) for p in field.param_names if p not in plane}
    rows = []
    for va in axes[0]:
        for vb in axes[1]:
            rows.append([va if p == a else vb if p == b else base[p] for p in field.param_names])
    found = _count_batch(_Kernel(field), box, rows)
    counts = np.array([len(pts) for pts, _ in found], dtype=int).reshape(grid)
    meta = {"field": field.name, "plane": list(plane), "plane_box": [list(map(float, r)) for r in plane_box],
            "grid": list(grid), "fixed": dict(sorted(base.items())),
            "search_box": [list(r) for r in box.bounds], "resolution": box.resolution if isinstance(box.resolution, int) else list(box.resolution)}
    return Census((a, b), (axes[0], axes[1]), counts, base, box, meta)


def odd_steps(counts: np.ndarray) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Adjacent cell pairs whose counts differ by an odd number."""
    bad = []
    m, k = counts.shape
    for i in range(m):
        for j in range(k):
            if i + 1 < m and (counts[i, j] - counts[i + 1, j]) % 2:
                bad.append(((i, j), (i + 1, j)))
            if j + 1 < k and (counts[i, j] - counts[i, j + 1]) % 2:
                bad.append(((i, j), (i, j + 1)))
    return bad


def count_along(field: VectorField, a: Mapping, b: Mapping, box: SearchBox, steps: int = 2) -> list[int]:
    """Root counts at ``steps`` evenly spaced parameter points from ``a`` to ``b``."""
    _check(field, box)
    pa, pb = np.array(_param_values(field, a)), np.array(_param_values(field, b))
    rows = [pa + f * (pb - pa) for f in np.linspace(0.0, 1.0, steps)]
    return [len(pts) for pts, _ in _count_batch(_Kernel(field), box, rows)]


def prescribe_roots(field: VectorField, point: Mapping, free_params: Sequence[str], m: int, spread: float,
                    direction: Sequence[float]) -> dict | None:
    """Parameters near ``point`` at which ``m`` roots sit spread along ``direction``.

    Solves F(x_i; alpha) = 0 for i = 1..m by least squares, with the first
    m-1 roots pinned to projections spread * c_i on the unit ``direction``
    (c evenly spaced in [-1, 1]).  The result is only a candidate: its root
    count must be confirmed by the grid oracle.
    """
    from scipy.optimize import least_squares

    n = field.n
    w = np.asarray(direction, dtype=float)
    w /= np.linalg.norm(w)
    x0 = np.array([float(point[v]) for v in field.var_names])
    names = field.param_names
    base = np.array(_param_values(field, point))
    idx = [names.index(p) for p in free_params]
    c = np.linspace(-1.0, 1.0, m)
    tape = Tape(list(field.components), field.var_names + names)

    def unpack(z):
        xs = z[: m * n].reshape(m, n)
        pv = base.copy()
        pv[idx] = z[m * n:]
        return xs, pv

    def resid(z):
        xs, pv = unpack(z)
        out = tape([xs[:, j] for j in range(n)] + [np.full(m, v) for v in pv])
        F = np.stack([np.broadcast_to(np.asarray(o, dtype=float), (m,)) for o in out], axis=1).ravel()
        pin = (xs[: m - 1] - x0) @ w - spread * c[: m - 1]
        return np.concatenate([F, pin])

    z0 = np.concatenate([(x0 + spread * c[:, None] * w).ravel(), base[idx]])
    with np.errstate(all="ignore"):
        fit = least_squares(resid, z0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400)
    if not np.all(np.isfinite(fit.fun)) or np.max(np.abs(fit.fun)) > 1e-10:
        return None
    _, pv = unpack(fit.x)
    return {p: float(v) for p, v in zip(names, pv)}


def sample_unfoldings(field: VectorField, point: Mapping, free_params: Sequence[str], radius: float = 0.05,
                      half_width: float = 0.5, samples: int = 400, target: int | None = None,
                      tries: int = 24, resolution: int = 20, seed: int = 0) -> dict[int, dict]:
    """Root counts realised by parameter perturbations of norm <= ``radius``.

    The search box is centred on the point's variables.  Perturbations are
    drawn at random from the ball (half of them on the bounding sphere).
    The regions with the most roots are thin wedges that random draws
    rarely hit, so with ``target`` the candidates of
    :func:`prescribe_roots` for ``target`` roots (random directions,
    shrinking spreads) are added; every candidate is counted by the same
    grid oracle.  Returns count -> one parameter binding realising it, taken
    from the first binding whose count is unchanged on the doubled grid.
    """
    box = SearchBox.around([float(point[v]) for v in field.var_names], half_width, resolution)
    _check(field, box)
    rng = np.random.default_rng(seed)
    names = field.param_names
    idx = [names.index(p) for p in free_params]
    base = np.array(_param_values(field, point))
    k = len(idx)
    d = rng.normal(size=(samples, k))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    shrink = np.where(np.arange(samples) % 2 == 0, 1.0, rng.uniform(size=samples) ** (1.0 / k))
    rows = np.repeat(base[None, :], samples, axis=0)
    rows[:, idx] += d * radius * shrink[:, None]
    rows = list(rows)
    if target is not None:
        for t in range(tries):
            spread = 0.2 * 0.7 ** (t % 8)
            cand = prescribe_roots(field, point, free_params, target, spread, rng.normal(size=field.n))
            if cand is None:
                continue
            row = np.array([cand[p] for p in names])
            if np.linalg.norm(row[idx] - base[idx]) <= radius:
                rows.append(row)
    kernel = _Kernel(field)
    groups: dict[int, list] = {}
    for row, (pts, _) in zip(rows, _count_batch(kernel, box, rows)):
        groups.setdefault(len(pts), []).append(row)
    # a count is reported only through a binding whose count survives doubling the grid
    fine = box.refined()
    seen: dict[int, dict] = {}
    for count, members in sorted(groups.items()):
        for c0 in range(0, len(members), 8):
            chunk = members[c0:c0 + 8]
            hits = [row for row, (pts, _) in zip(chunk, _count_batch(kernel, fine, chunk)) if len(pts) == count]
            if hits:
                seen[count] = {p: float(v) for p, v in zip(names, hits[0])}
                break
    return dict(sorted(seen.items()))


# ---------------------------------------------------------------------------
# export

def census_csv(c: Census) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"{c.plane[0]}\\{c.plane[1]}"] + [repr(float(v)) for v in c.axes[1]])
    for i, a in enumerate(c.axes[0]):
        w.writerow([repr(float(a))] + [str(int(v)) for v in c.counts[i]])
    return buf.getvalue()


def census_json(c: Census) -> str:
    return json.dumps(c.meta, indent=2, sort_keys=True)


def read_census_csv(text: str) -> tuple[tuple[str, str], np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`census_csv`: (plane, row axis, column axis, counts)."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2 or "\\" not in rows[0][0]:
        raise ValueError("malformed census CSV")
    plane = tuple(rows[0][0].split("\\", 1))
    try:
        cols = np.array([float(v) for v in rows[0][1:]])
        lines = np.array([float(r[0]) for r in rows[1:]])
        counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise ValueError(f"malformed census CSV: {exc}") from None
    if counts.shape != (len(lines), len(cols)):
        raise ValueError("malformed census CSV: ragged rows")
    return plane, lines, cols, counts
