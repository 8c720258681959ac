"""Locate, classify and check fullness of underlying catastrophe points."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import expr as E
from .detkit import DEFAULT_EPS, BGStack, format_index, hadamard_bound, index_strings, is_negligible
from .expr import Expr, Symbol, Tape
from .parser import VectorField

__all__ = [
    "LABELS",
    "label_for",
    "LocateError",
    "ConvergenceError",
    "SingularJacobianError",
    "NotCriticalError",
    "CodimensionExceeded",
    "NewtonConfig",
    "AugmentedSystem",
    "CatastrophePoint",
    "Findings",
    "newton_solve",
    "find_catastrophe",
    "classify_point",
    "fullness_sweep",
    "critical_residuals",
]

log = logging.getLogger(__name__)

LABELS = {0: "regular critical point", 1: "fold", 2: "cusp", 3: "swallowtail",
          4: "butterfly", 5: "wigwam", 6: "star"}


def label_for(r: int) -> str:
    return LABELS.get(r, f"codim-{r}")


class LocateError(RuntimeError):
    def __init__(self, message: str, last: Mapping | None = None):
        super().__init__(message)
        self.last = dict(last) if last is not None else None


class ConvergenceError(LocateError):
    pass


class SingularJacobianError(LocateError):
    pass


class NotCriticalError(LocateError):
    pass


class CodimensionExceeded(LocateError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 80
    residual_tol: float = 1e-11
    backtrack: float = 0.5
    min_step: float = 2.0 ** -30
    growth_cap: float = 1e6
    cond_max: float = 1e14

    def __post_init__(self):
        for name in ("max_iters", "residual_tol", "backtrack", "min_step", "growth_cap", "cond_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _as_name(p) -> str:
    return p.name if isinstance(p, Symbol) else str(p)


class AugmentedSystem:
    """The equations F = 0, B_1 = .. = B_r = 0 (plus optional constraints).

    Unknowns are the variables followed by ``free_params``; every other
    parameter must be bound in ``fixed``.  With ``r`` free parameters the
    system is square; with one more it describes a curve (used by tracing).
    """

    def __init__(self, field: VectorField, codim: int, free_params: Sequence | None = None,
                 fixed: Mapping | None = None, stack: BGStack | None = None,
                 constraints: Sequence[Expr] = ()):
        if codim < 0:
            raise ValueError("codimension must be non-negative")
        self.field = field
        self.codim = codim
        self.stack = stack if stack is not None and stack.field is field else BGStack(field)
        if free_params is None:
            if field.p < codim:
                raise ValueError(f"codimension {codim} needs p >= r parameters; field has {field.p}")
            free_params = field.param_names[:codim]
        self.free_params = tuple(_as_name(p) for p in free_params)
        declared = set(field.param_names)
        for p in self.free_params:
            if p not in declared:
                raise ValueError(f"{p!r} is not a declared parameter")
        if len(set(self.free_params)) != len(self.free_params):
            raise ValueError("duplicate free parameter")
        fixed = {_as_name(k): v for k, v in (fixed or {}).items()}
        self.fixed = {p: fixed[p] for p in field.param_names if p not in self.free_params and p in fixed}
        missing = [p for p in field.param_names if p not in self.free_params and p not in self.fixed]
        if missing:
            raise ValueError(f"parameters neither free nor fixed: {missing}")
        self.constraints = tuple(constraints)
        self.unknowns = tuple(field.var_names) + self.free_params
        self.equations = tuple(field.components) + tuple(self.stack.B(s) for s in range(1, codim + 1)) + self.constraints
        self.eq_labels = tuple(f"F{i + 1}" for i in range(field.n)) + tuple(f"B{s}" for s in range(1, codim + 1)) \
            + tuple(f"C{i + 1}" for i in range(len(self.constraints)))
        syms = [field.symbol(u) for u in self.unknowns]
        jac = [E.differentiate(e, s) for e in self.equations for s in syms]
        inputs = list(self.unknowns) + sorted(self.fixed)
        self._tape = Tape(list(self.equations) + jac, inputs)
        self._fixed_vals = [self.fixed[p] for p in sorted(self.fixed)]
        self._fixed_float = [float(v) for v in self._fixed_vals]

    @property
    def n_eq(self) -> int:
        return len(self.equations)

    @property
    def n_unknowns(self) -> int:
        return len(self.unknowns)

    @property
    def square(self) -> bool:
        return self.n_eq == self.n_unknowns

    def vector(self, binding: Mapping) -> np.ndarray:
        b = {_as_name(k): v for k, v in binding.items()}
        try:
            return np.array([float(b[u]) for u in self.unknowns])
        except KeyError as exc:
            raise ValueError(f"seed does not bind unknown {exc.args[0]!r}") from None

    def binding(self, u: Sequence) -> dict:
        out = {name: float(v) for name, v in zip(self.unknowns, u)}
        out.update(self.fixed)
        return out

    def evaluate(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Residual vector and Jacobian with respect to the unknowns."""
        vals = self._tape(list(map(float, u)) + self._fixed_float)
        m, k = self.n_eq, self.n_unknowns
        arr = np.array(vals, dtype=float)
        return arr[:m], arr[m:].reshape(m, k)

    def residual(self, u: np.ndarray) -> np.ndarray:
        return self.evaluate(u)[0]

    def with_free(self, free_params: Sequence, fixed: Mapping | None = None) -> "AugmentedSystem":
        fx = dict(self.fixed)
        fx.update(fixed or {})
        return AugmentedSystem(self.field, self.codim, free_params, fx, self.stack, self.constraints)


def newton_solve(sys: AugmentedSystem, seed: Mapping, cfg: NewtonConfig | None = None) -> dict:
    """Damped Newton on a square augmented system; returns the full binding."""
    cfg = cfg or NewtonConfig()
    if not sys.square:
        raise ValueError(f"system has {sys.n_eq} equations and {sys.n_unknowns} unknowns")
    u = sys.vector(seed)
    cap = cfg.growth_cap * (1.0 + np.linalg.norm(u))
    try:
        res, J = sys.evaluate(u)
    except (E.EvaluationError, ArithmeticError, ValueError) as exc:
        raise ConvergenceError(f"cannot evaluate at seed: {exc}", sys.binding(u)) from None
    for _ in range(cfg.max_iters):
        if not np.all(np.isfinite(res)):
            raise ConvergenceError("non-finite residual", sys.binding(u))
        if np.max(np.abs(res)) <= cfg.residual_tol:
            return sys.binding(u)
        if not np.all(np.isfinite(J)):
            raise ConvergenceError("non-finite Jacobian", sys.binding(u))
        cond = np.linalg.cond(J)
        if not cond < cfg.cond_max:
            raise SingularJacobianError(f"singular Newton Jacobian (condition {cond:.3g})", sys.binding(u))
        step = np.linalg.solve(J, -res)
        norm0 = np.linalg.norm(res)
        lam = 1.0
        while True:
            trial = u + lam * step
            try:
                r_try, J_try = sys.evaluate(trial)
                ok = np.all(np.isfinite(r_try)) and np.linalg.norm(r_try) < (1.0 - 1e-4 * lam) * norm0
            except (E.EvaluationError, ArithmeticError, ValueError):
                ok = False
            if ok:
                break
            lam *= cfg.backtrack
            if lam < cfg.min_step:
                # at the rounding floor a full step can fail to decrease the norm
                if np.max(np.abs(res)) <= 1e3 * cfg.residual_tol:
                    r_try, J_try = sys.evaluate(u + step)
                    if np.max(np.abs(r_try)) <= cfg.residual_tol:
                        return sys.binding(u + step)
                raise ConvergenceError("line search failed", sys.binding(u))
        u, res, J = trial, r_try, J_try
        if np.linalg.norm(u) > cap:
            raise ConvergenceError("iterate diverged", sys.binding(u))
    if np.max(np.abs(res)) <= cfg.residual_tol:
        return sys.binding(u)
    raise ConvergenceError(f"no convergence in {cfg.max_iters} iterations "
                           f"(residual {np.max(np.abs(res)):.3g})", sys.binding(u))


@dataclass
class CatastrophePoint:
    point: dict
    codim: int
    residual_norm: float
    B_values: list[tuple[float, float]]
    G_report: dict[str, tuple[float, float]]
    full: bool
    label: str
    free_params: tuple[str, ...] = ()
    notes: list[str] = field(default_factory=list)

    def coords(self, names: Sequence[str]) -> np.ndarray:
        return np.array([float(self.point[n]) for n in names])

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "codim": self.codim,
            "full": self.full,
            "point": {k: float(v) for k, v in self.point.items()},
            "free_params": list(self.free_params),
            "residual_norm": float(self.residual_norm),
            "B": [{"order": i + 1, "value": float(v), "scale": float(s)} for i, (v, s) in enumerate(self.B_values)],
            "G": {k or "-": {"value": float(v), "scale": float(s)} for k, (v, s) in self.G_report.items()},
            "notes": list(self.notes),
        }


class Findings(list):
    """List of located points; ``failures`` records per-seed errors."""

    def __init__(self, points=(), failures=()):
        super().__init__(points)
        self.failures: list[tuple[dict, str]] = list(failures)


def critical_residuals(field: VectorField, point: Mapping) -> list[tuple[float, float]]:
    """(|F_i|, norm of grad_x F_i) for each component."""
    out = []
    for c in field.components:
        grad = np.array([E.evaluate(E.differentiate(c, v), point) for v in field.variables])
        out.append((abs(E.evaluate(c, point)), float(np.linalg.norm(grad))))
    return out


def fullness_sweep(field: VectorField, point: Mapping, r: int, free_params: Sequence | None = None,
                   stack: BGStack | None = None, eps_g: float = DEFAULT_EPS,
                   exact: bool = False) -> dict[str, tuple[float, float, bool]]:
    """Evaluate every G_{r,I} over the n^(r-1) index strings.

    Returns index label -> (value, Hadamard scale, passes-nonzero-test).
    """
    stack = stack if stack is not None and stack.field is field else BGStack(field)
    if r < 1:
        return {}
    params = stack.resolve_params(free_params, r)
    out = {}
    for I in index_strings(field.n, r - 1):
        value, scale = stack.G_value(r, point, I, params, exact=exact)
        out[format_index(I)] = (value, scale, not is_negligible(float(value), scale, eps_g))
    return out


def _B_table(stack: BGStack, point: Mapping, upto: int) -> list[tuple[float, float]]:
    return [stack.B_value(s, point) for s in range(1, upto + 1)]


def _assemble(field: VectorField, stack: BGStack, point: dict, r: int, params: tuple[str, ...],
              residual: float, eps_b: float, eps_g: float) -> CatastrophePoint:
    notes: list[str] = []
    B_values = _B_table(stack, point, r + 1)
    top_v, top_s = B_values[-1]
    top_vanishes = is_negligible(top_v, top_s, eps_b)
    if top_vanishes:
        notes.append(f"B{r + 1} also vanishes: codimension may exceed {r}")
    G_report: dict[str, tuple[float, float]] = {}
    g_ok = True
    if r >= 1:
        if len(params) < r:
            notes.append(f"only {len(params)} parameters available for G_{r}")
            g_ok = False
        else:
            sweep = fullness_sweep(field, point, r, params[:r], stack, eps_g)
            G_report = {k: (v, s) for k, (v, s, _) in sweep.items()}
            g_ok = all(ok for (_, _, ok) in sweep.values())
            vals = [round(abs(v), 9) for (v, _, _) in sweep.values()]
            if len(vals) > 1 and len(set(vals)) < len(vals):
                notes.append("some G values coincide in magnitude")
    full = g_ok and not top_vanishes
    return CatastrophePoint(point=point, codim=r, residual_norm=residual, B_values=B_values,
                            G_report=G_report, full=full, label=label_for(r),
                            free_params=tuple(params[:r]), notes=notes)


def _seed_list(seeds) -> list[dict]:
    return [{_as_name(k): v for k, v in s.items()} for s in seeds]


def find_catastrophe(field: VectorField, r: int, free_params: Sequence | None = None,
                     fixed: Mapping | None = None, seeds: Sequence[Mapping] = (),
                     cfg: NewtonConfig | None = None, eps_b: float = DEFAULT_EPS,
                     eps_g: float = DEFAULT_EPS, stack: BGStack | None = None,
                     dedup_radius: float = 1e-6, threads: int = 1,
                     constraints: Sequence[Expr] = ()) -> Findings:
    """Solve the codimension-r system from every seed and report distinct points."""
    if field.p < r:
        raise ValueError(f"codimension {r} requires p >= r parameters; field has {field.p}")
    sys = AugmentedSystem(field, r, free_params, fixed, stack, constraints)
    seeds = _seed_list(seeds)

    def solve(seed):
        try:
            return newton_solve(sys, seed, cfg), None
        except LocateError as exc:
            return None, str(exc)

    if threads and threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(solve, seeds))
    else:
        results = [solve(s) for s in seeds]

    failures = [(s, msg) for s, (sol, msg) in zip(seeds, results) if sol is None]
    sols = [sol for sol, _ in results if sol is not None]
    names = list(sys.unknowns)
    sols.sort(key=lambda b: tuple(float(b[n]) for n in names))
    distinct: list[dict] = []
    for sol in sols:
        v = np.array([float(sol[n]) for n in names])
        if any(np.max(np.abs(v - np.array([float(d[n]) for n in names]))) <= dedup_radius for d in distinct):
            continue
        distinct.append(sol)
    points = []
    for sol in distinct:
        res = float(np.max(np.abs(sys.residual(sys.vector(sol)))))
        points.append(_assemble(field, sys.stack, sol, r, sys.free_params, res, eps_b, eps_g))
    if failures:
        log.debug("%d of %d seeds failed", len(failures), len(seeds))
    return Findings(points, failures)


def classify_point(field: VectorField, point: Mapping, r_max: int = 8, free_params: Sequence | None = None,
                   eps_b: float = DEFAULT_EPS, eps_g: float = DEFAULT_EPS,
                   stack: BGStack | None = None) -> CatastrophePoint:
    """Codimension, label and fullness of a given critical point."""
    stack = stack if stack is not None and stack.field is field else BGStack(field)
    point = {_as_name(k): v for k, v in point.items()}
    missing = [s for s in field.var_names + field.param_names if s not in point]
    if missing:
        raise ValueError(f"point does not assign {missing}")
    resid = critical_residuals(field, point)
    worst = max(v for v, _ in resid)
    if any(not is_negligible(v, s, eps_b) for v, s in resid):
        raise NotCriticalError(f"not a critical point (max |F_i| = {worst:.3g})", point)
    r = None
    for s in range(1, r_max + 2):
        v, scale = stack.B_value(s, point)
        if not is_negligible(v, scale, eps_b):
            r = s - 1
            break
    if r is None:
        raise CodimensionExceeded(f"codim >= {r_max}: B_1..B_{r_max + 1} all vanish", point)
    params = tuple(p.name for p in stack.resolve_params(free_params, min(r, field.p))) \
        if free_params is None else tuple(_as_name(p) for p in free_params)
    cp = _assemble(field, stack, point, r, params, worst, eps_b, eps_g)
    if r > field.p:
        cp.full = False
        cp.notes.append(f"codimension {r} exceeds the parameter count {field.p}")
    return cp
