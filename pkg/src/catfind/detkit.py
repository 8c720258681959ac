"""The B-G determinant family.

``B_1`` is the Jacobian determinant of the field.  ``B_{s,I}`` replaces
component ``I[-1]`` of the field by ``B_{s-1,I[:-1]}`` and takes the Jacobian
determinant again, so ``B_{s}`` with the all-ones string is the canonical
chain.  ``G_{r,I}`` is the determinant of the (n+r)-square matrix of partials
of ``(F_1..F_n, B_1, B_{2,I[:1]}, .., B_{r,I})`` with respect to the
variables and ``r`` chosen parameters; it is only ever evaluated numerically.

Index strings are tuples of 1-based component indices.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import expr as E
from .expr import Expr, Symbol, Tape
from .parser import VectorField

__all__ = [
    "DEFAULT_EPS",
    "MAX_SYMBOLIC_DET",
    "ExprMatrix",
    "BGStack",
    "jacobian",
    "symbolic_det",
    "build_B",
    "build_G_matrix",
    "eval_G",
    "index_strings",
    "format_index",
    "parse_index",
    "numeric_det",
    "fraction_det",
    "hadamard_bound",
    "is_negligible",
]

DEFAULT_EPS = 1e-6
MAX_SYMBOLIC_DET = 6

IndexString = tuple[int, ...]


def is_negligible(value: float, scale: float, eps: float = DEFAULT_EPS) -> bool:
    """Scale-aware zero test: |value| <= eps * max(scale, 1)."""
    return abs(value) <= eps * max(scale, 1.0)


def index_strings(n: int, length: int) -> list[IndexString]:
    return list(itertools.product(range(1, n + 1), repeat=length))


def format_index(I: Sequence[int]) -> str:
    if not I:
        return ""
    if max(I) > 9:
        return ",".join(map(str, I))
    return "".join(map(str, I))


def parse_index(text: str) -> IndexString:
    text = text.strip()
    if not text:
        return ()
    if "," in text:
        return tuple(int(t) for t in text.split(","))
    return tuple(int(c) for c in text)


@dataclass(frozen=True)
class ExprMatrix:
    rows: tuple[tuple[Expr, ...], ...]
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    _tape: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if any(len(r) != len(self.col_labels) for r in self.rows):
            raise ValueError("ragged matrix")
        if len(self.rows) != len(self.row_labels):
            raise ValueError("row label count mismatch")
        if len(set(self.row_labels)) != len(self.row_labels) or len(set(self.col_labels)) != len(self.col_labels):
            raise ValueError("matrix labels must be unique")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.col_labels)

    def __getitem__(self, ij: tuple[int, int]) -> Expr:
        i, j = ij
        return self.rows[i][j]

    def tape(self) -> Tape:
        if not self._tape:
            entries = [e for row in self.rows for e in row]
            free: set[Symbol] = set()
            for e in entries:
                free |= e.free
            self._tape.append(Tape(entries, sorted(free, key=lambda s: s.name)))
        return self._tape[0]

    def evaluate(self, binding: Mapping, exact: bool = False):
        """Entry-wise evaluation: float ndarray, or nested lists of Fractions."""
        vals = self.tape()(binding, exact=exact)
        m, k = self.shape
        if exact:
            return [list(vals[i * k:(i + 1) * k]) for i in range(m)]
        return np.array(vals, dtype=float).reshape(m, k)

    def to_str(self) -> list[list[str]]:
        return [[E.to_str(e) for e in row] for row in self.rows]


def jacobian(fns: Sequence[Expr], syms: Sequence[Symbol], row_labels: Sequence[str] | None = None) -> ExprMatrix:
    """Matrix of partials d fns[i] / d syms[j]."""
    rows = tuple(tuple(E.differentiate(f, s) for s in syms) for f in fns)
    labels = tuple(row_labels) if row_labels is not None else tuple(f"F{i + 1}" for i in range(len(fns)))
    return ExprMatrix(rows, labels, tuple(s.name for s in syms))


def symbolic_det(m: ExprMatrix, limit: int = MAX_SYMBOLIC_DET) -> Expr:
    """Exact determinant by Laplace expansion with memoised minors."""
    nr, nc = m.shape
    if nr != nc:
        raise ValueError(f"determinant of a non-square {nr}x{nc} matrix")
    if nr > limit:
        raise ValueError(f"matrix size {nr} exceeds the symbolic determinant limit {limit}")
    if nr == 0:
        return E.ONE
    memo: dict[tuple[int, tuple[int, ...]], Expr] = {}

    def minor(row: int, cols: tuple[int, ...]) -> Expr:
        if row == nr - 1:
            return m.rows[row][cols[0]]
        key = (row, cols)
        hit = memo.get(key)
        if hit is not None:
            return hit
        terms = []
        for pos, c in enumerate(cols):
            a = m.rows[row][c]
            if a.is_const and a.value == 0:
                continue
            rest = minor(row + 1, cols[:pos] + cols[pos + 1:])
            t = E.mul(a, rest)
            terms.append(E.neg(t) if pos % 2 else t)
        out = E.add(*terms)
        memo[key] = out
        return out

    return minor(0, tuple(range(nc)))


def hadamard_bound(a: np.ndarray) -> float:
    """Product of row 2-norms; |det a| never exceeds it."""
    return float(np.prod(np.linalg.norm(a, axis=1)))


def numeric_det(a: np.ndarray) -> float:
    return float(np.linalg.det(a)) if a.size else 1.0


def fraction_det(rows: Sequence[Sequence[Fraction]]) -> Fraction:
    """Exact determinant by Gaussian elimination over the rationals."""
    a = [[Fraction(v) for v in r] for r in rows]
    n = len(a)
    det = Fraction(1)
    for k in range(n):
        piv = next((i for i in range(k, n) if a[i][k] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != k:
            a[k], a[piv] = a[piv], a[k]
            det = -det
        det *= a[k][k]
        for i in range(k + 1, n):
            f = a[i][k] / a[k][k]
            if f:
                for j in range(k, n):
                    a[i][j] -= f * a[k][j]
    return det


class BGStack:
    """Lazily built, cached B and G constructions for one field.

    Cache fills are idempotent (expressions are hash-consed), so concurrent
    builders at worst duplicate work.
    """

    def __init__(self, field: VectorField, det_limit: int = MAX_SYMBOLIC_DET):
        self.field = field
        self.det_limit = det_limit
        self._B: dict[IndexString, Expr] = {}
        self._Bmat: dict[IndexString, ExprMatrix] = {}
        self._G: dict[tuple[IndexString, tuple[str, ...]], ExprMatrix] = {}
        self._lock = threading.RLock()

    @property
    def n(self) -> int:
        return self.field.n

    def check_index(self, s: int, I: Sequence[int]) -> IndexString:
        I = tuple(int(i) for i in I)
        if s < 1:
            raise ValueError(f"B order must be >= 1, got {s}")
        if len(I) != s - 1:
            raise ValueError(f"B_{s} needs an index string of length {s - 1}, got {len(I)}")
        bad = [i for i in I if not 1 <= i <= self.n]
        if bad:
            raise ValueError(f"index entries must lie in 1..{self.n}, got {bad}")
        return I

    def B_matrix(self, s: int, I: Sequence[int] | None = None) -> ExprMatrix:
        """The n x n Jacobian whose determinant is B_{s,I}."""
        I = self.check_index(s, (1,) * (s - 1) if I is None else I)
        hit = self._Bmat.get(I)
        if hit is not None:
            return hit
        comps = list(self.field.components)
        labels = [f"F{i + 1}" for i in range(self.n)]
        if I:
            comps[I[-1] - 1] = self.B(s - 1, I[:-1])
            labels[I[-1] - 1] = f"B{s - 1}" + (f"_{format_index(I[:-1])}" if len(I) > 1 else "")
        mat = jacobian(comps, self.field.variables, labels)
        with self._lock:
            self._Bmat.setdefault(I, mat)
        return self._Bmat[I]

    def B(self, s: int, I: Sequence[int] | None = None) -> Expr:
        """B_{s,I}; the canonical B_s when ``I`` is omitted."""
        I = self.check_index(s, (1,) * (s - 1) if I is None else I)
        hit = self._B.get(I)
        if hit is not None:
            return hit
        e = symbolic_det(self.B_matrix(s, I), self.det_limit)
        with self._lock:
            self._B.setdefault(I, e)
        return self._B[I]

    def B_value(self, s: int, binding: Mapping, I: Sequence[int] | None = None) -> tuple[float, float]:
        """(B_{s,I}, Hadamard bound of its defining Jacobian) at ``binding``."""
        I = (1,) * (s - 1) if I is None else tuple(I)
        mat = self.B_matrix(s, I).evaluate(binding)
        value = E.evaluate(self.B(s, I), binding)
        return value, hadamard_bound(mat)

    def resolve_params(self, free_params: Sequence[str | Symbol] | None, r: int) -> tuple[Symbol, ...]:
        if free_params is None:
            if self.field.p < r:
                raise ValueError(f"codimension {r} needs at least {r} parameters (p >= r), field has {self.field.p}")
            return self.field.parameters[:r]
        out = []
        for p in free_params:
            name = p.name if isinstance(p, Symbol) else p
            sym = next((q for q in self.field.parameters if q.name == name), None)
            if sym is None:
                raise ValueError(f"{name!r} is not a declared parameter")
            out.append(sym)
        if len({s.name for s in out}) != len(out):
            raise ValueError("duplicate free parameter")
        return tuple(out)

    def G_matrix(self, r: int, I: Sequence[int] | None = None, free_params: Sequence[str | Symbol] | None = None) -> ExprMatrix:
        I = (1,) * (r - 1) if I is None else tuple(I)
        if r < 1:
            raise ValueError("G is defined for r >= 1")
        I = self.check_index(r, I)
        params = self.resolve_params(free_params, r)
        if len(params) != r:
            raise ValueError(f"G_{r} needs exactly {r} free parameters, got {len(params)}")
        key = (I, tuple(p.name for p in params))
        hit = self._G.get(key)
        if hit is not None:
            return hit
        fns = list(self.field.components)
        labels = [f"F{i + 1}" for i in range(self.n)]
        for s in range(1, r + 1):
            fns.append(self.B(s, I[: s - 1]))
            labels.append(f"B{s}" + (f"_{format_index(I[: s - 1])}" if s > 1 else ""))
        mat = jacobian(fns, list(self.field.variables) + list(params), labels)
        with self._lock:
            self._G.setdefault(key, mat)
        return self._G[key]

    def G_value(self, r: int, binding: Mapping, I: Sequence[int] | None = None,
                free_params: Sequence[str | Symbol] | None = None, exact: bool = False):
        """(G_{r,I}, Hadamard bound) from an LU determinant of the evaluated matrix.

        In exact mode the determinant is a Fraction computed by rational
        elimination and the bound is a float.
        """
        mat = self.G_matrix(r, I, free_params)
        if exact:
            rows = mat.evaluate(binding, exact=True)
            value = fraction_det(rows)
            bound = hadamard_bound(np.array([[float(v) for v in row] for row in rows]))
            return value, bound
        a = mat.evaluate(binding)
        return numeric_det(a), hadamard_bound(a)


def build_B(stack: BGStack, s: int, I: Sequence[int] | None = None) -> Expr:
    return stack.B(s, I)


def build_G_matrix(stack: BGStack, r: int, I: Sequence[int] | None = None,
                   free_params: Sequence[str | Symbol] | None = None) -> ExprMatrix:
    return stack.G_matrix(r, I, free_params)


def eval_G(stack: BGStack, r: int, I: Sequence[int] | None, free_params: Sequence[str | Symbol] | None,
           binding: Mapping, exact: bool = False):
    return stack.G_value(r, binding, I, free_params, exact=exact)
