"""Hash-consed expression DAG with exact differentiation and compiled evaluation.

Every node is interned: building the same structure twice returns the same
object, so identity comparison (``a is b``) and ``a.id == b.id`` are both
structural equality tests.  The smart constructors (:func:`add`, :func:`mul`,
:func:`power`, :func:`quotient`, :func:`func`) perform the conservative
simplifications (constant folding, flattening, 0/1 identities and like-term
collection) at construction time, so every node in the table is already in
simplified form.
"""
from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Symbol",
    "Expr",
    "EvaluationError",
    "FUNCTIONS",
    "const",
    "sym",
    "add",
    "sub",
    "neg",
    "mul",
    "power",
    "quotient",
    "func",
    "differentiate",
    "simplify",
    "evaluate",
    "Tape",
    "to_str",
    "dag_size",
]

Number = Union[int, Fraction, float]

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "log")

VARIABLE = "variable"
PARAMETER = "parameter"


class EvaluationError(ArithmeticError):
    """Division by zero, domain error or unbound symbol during evaluation."""


@dataclass(frozen=True, order=True)
class Symbol:
    name: str
    kind: str = VARIABLE

    def __post_init__(self):
        if not self.name.isidentifier() or not self.name.isascii():
            raise ValueError(f"invalid symbol name {self.name!r}")
        if self.kind not in (VARIABLE, PARAMETER):
            raise ValueError(f"invalid symbol kind {self.kind!r}")

    def __str__(self):
        return self.name


# Ordering rank of node kinds inside Sum/Product children: constants first.
_RANK = {"const": 0, "sym": 1, "pow": 2, "mul": 3, "add": 4, "div": 5, "func": 6}


class Expr:
    """An interned DAG node.  Never construct directly; use the module constructors."""

    __slots__ = ("kind", "args", "id", "digest", "free", "_sortkey")

    kind: str
    args: tuple
    id: int
    digest: bytes
    free: frozenset

    def __repr__(self):
        return f"Expr({to_str(self)})"

    def __str__(self):
        return to_str(self)

    def __hash__(self):
        return self.id

    def __eq__(self, other):
        return self is other

    def __reduce__(self):
        raise TypeError("Expr nodes are process-local; serialize with to_str()")

    # Operator sugar so fixtures and tests can write expressions naturally.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return quotient(self, _lift(other))

    def __rtruediv__(self, other):
        return quotient(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("only integer exponents are supported")
        return power(self, n)

    @property
    def is_const(self) -> bool:
        return self.kind == "const"

    @property
    def value(self) -> Number:
        if self.kind != "const":
            raise TypeError("not a constant")
        return self.args[0]


_TABLE: dict[bytes, Expr] = {}
_LOCK = threading.RLock()
_NEXT_ID = [0]


def _child_digest(e: Expr) -> bytes:
    return e.digest


def _intern(kind: str, args: tuple, payload: bytes) -> Expr:
    digest = hashlib.blake2b(kind.encode() + b"\x00" + payload, digest_size=16).digest()
    node = _TABLE.get(digest)
    if node is not None:
        return node
    with _LOCK:
        node = _TABLE.get(digest)
        if node is not None:
            return node
        node = object.__new__(Expr)
        node.kind = kind
        node.args = args
        node.digest = digest
        node.id = _NEXT_ID[0]
        _NEXT_ID[0] += 1
        if kind == "const":
            node.free = frozenset()
        elif kind == "sym":
            node.free = frozenset((args[0],))
        else:
            free: frozenset = frozenset()
            for a in args:
                if isinstance(a, Expr):
                    free = free | a.free
            node.free = free
        if kind == "sym":
            node._sortkey = (_RANK[kind], args[0].name.encode(), digest)
        else:
            node._sortkey = (_RANK[kind], b"", digest)
        _TABLE[digest] = node
        return node


def _lift(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction, float)) and not isinstance(v, bool):
        return const(v)
    raise TypeError(f"cannot convert {type(v).__name__} to Expr")


def _norm_number(v: Number) -> Number:
    if isinstance(v, bool):
        raise TypeError("bool is not a number here")
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValueError("non-finite constant")
        return v
    if isinstance(v, Rational):
        return Fraction(v)
    raise TypeError(f"unsupported constant type {type(v).__name__}")


def const(v: Number) -> Expr:
    v = _norm_number(v)
    if isinstance(v, Fraction):
        payload = b"q" + f"{v.numerator}/{v.denominator}".encode()
    else:
        payload = b"f" + v.hex().encode()
    return _intern("const", (v,), payload)


ZERO = const(0)
ONE = const(1)
MINUS_ONE = const(-1)


def sym(s: Union[Symbol, str], kind: str = VARIABLE) -> Expr:
    if isinstance(s, str):
        s = Symbol(s, kind)
    return _intern("sym", (s,), f"{s.name}:{s.kind}".encode())


def _is_zero(e: Expr) -> bool:
    return e.kind == "const" and e.args[0] == 0


def _is_one(e: Expr) -> bool:
    return e.kind == "const" and e.args[0] == 1


def _split_coeff(e: Expr) -> tuple[Number, Expr]:
    """Split a term into (numeric coefficient, symbolic core)."""
    if e.kind == "const":
        return e.args[0], ONE
    if e.kind == "mul" and e.args[0].kind == "const":
        rest = e.args[1:]
        core = rest[0] if len(rest) == 1 else _intern(
            "mul", rest, b"".join(_child_digest(c) for c in rest))
        return e.args[0].args[0], core
    return Fraction(1), e


def add(*terms: Expr) -> Expr:
    flat: list[Expr] = []
    stack = list(terms)
    while stack:
        t = stack.pop()
        if t.kind == "add":
            stack.extend(t.args)
        else:
            flat.append(t)
    total: Number = Fraction(0)
    coeffs: dict[int, list] = {}
    for t in flat:
        if t.kind == "const":
            total = total + t.args[0]
            continue
        c, core = _split_coeff(t)
        slot = coeffs.get(core.id)
        if slot is None:
            coeffs[core.id] = [c, core]
        else:
            slot[0] = slot[0] + c
    out: list[Expr] = []
    for c, core in coeffs.values():
        if c == 0:
            continue
        out.append(core if c == 1 else mul(const(c), core))
    if total != 0:
        out.append(const(total))
    if not out:
        return const(total) if isinstance(total, float) else ZERO
    if len(out) == 1:
        return out[0]
    out.sort(key=lambda e: e._sortkey)
    return _intern("add", tuple(out), b"".join(_child_digest(c) for c in out))


def neg(e: Expr) -> Expr:
    return mul(MINUS_ONE, e)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def mul(*factors: Expr) -> Expr:
    flat: list[Expr] = []
    stack = list(factors)
    while stack:
        f = stack.pop()
        if f.kind == "mul":
            stack.extend(f.args)
        else:
            flat.append(f)
    coeff: Number = Fraction(1)
    exps: dict[int, list] = {}
    for f in flat:
        if f.kind == "const":
            coeff = coeff * f.args[0]
            continue
        if f.kind == "pow":
            base, n = f.args
        else:
            base, n = f, 1
        slot = exps.get(base.id)
        if slot is None:
            exps[base.id] = [n, base]
        else:
            slot[0] += n
    if coeff == 0:
        return const(coeff) if isinstance(coeff, float) else ZERO
    out: list[Expr] = []
    for n, base in exps.values():
        if n == 0:
            continue
        out.append(power(base, n))
    if not out:
        return const(coeff)
    # Powers may have folded into constants (cannot happen for non-const bases),
    # but a repeated base can collapse; keep the list ordered for interning.
    out.sort(key=lambda e: e._sortkey)
    if coeff != 1:
        out.insert(0, const(coeff))
    if len(out) == 1:
        return out[0]
    return _intern("mul", tuple(out), b"".join(_child_digest(c) for c in out))


def power(base: Expr, n: int) -> Expr:
    if not isinstance(n, int) or isinstance(n, bool):
        raise TypeError("exponent must be an integer")
    if n == 0:
        return ONE
    if n == 1:
        return base
    if base.kind == "const":
        v = base.args[0]
        if v == 0 and n < 0:
            raise ZeroDivisionError("zero to a negative power")
        return const(v ** n)
    if base.kind == "pow":
        return power(base.args[0], base.args[1] * n)
    if base.kind == "mul":
        return mul(*(power(f, n) for f in base.args))
    return _intern("pow", (base, n), base.digest + str(n).encode())


def quotient(num: Expr, den: Expr) -> Expr:
    if den.kind == "const":
        v = den.args[0]
        if v == 0:
            raise ZeroDivisionError("division by constant zero")
        inv = 1 / v if isinstance(v, float) else Fraction(1) / v
        return mul(const(inv), num)
    if _is_zero(num):
        return ZERO
    if num is den:
        return ONE
    return _intern("div", (num, den), num.digest + b"/" + den.digest)


_CONST_FOLD = {
    "sin": (0, 0),
    "cos": (0, 1),
    "exp": (0, 1),
    "sqrt": (0, 0),
    "log": (1, 0),
}


def func(tag: str, arg: Expr) -> Expr:
    if tag not in FUNCTIONS:
        raise ValueError(f"unsupported function {tag!r}")
    if arg.kind == "const":
        v = arg.args[0]
        exact_arg, exact_val = _CONST_FOLD[tag]
        if not isinstance(v, float) and v == exact_arg:
            return const(exact_val)
        if isinstance(v, float):
            return const(_float_funcs[tag](v))
    return _intern("func", (tag, arg), tag.encode() + b"(" + arg.digest)


# ---------------------------------------------------------------------------
# differentiation

_DERIV: dict[tuple[int, Symbol], Expr] = {}


def differentiate(e: Expr, s: Union[Symbol, Expr]) -> Expr:
    """Exact partial derivative of ``e`` with respect to symbol ``s``."""
    if isinstance(s, Expr):
        if s.kind != "sym":
            raise TypeError("can only differentiate with respect to a symbol")
        s = s.args[0]
    return _diff(e, s)


def _diff(e: Expr, s: Symbol) -> Expr:
    if s not in e.free:
        return ZERO
    key = (e.id, s)
    hit = _DERIV.get(key)
    if hit is not None:
        return hit
    k = e.kind
    if k == "sym":
        d = ONE
    elif k == "add":
        d = add(*(_diff(c, s) for c in e.args))
    elif k == "mul":
        terms = []
        args = e.args
        for i, c in enumerate(args):
            dc = _diff(c, s)
            if _is_zero(dc):
                continue
            terms.append(mul(dc, *args[:i], *args[i + 1:]))
        d = add(*terms)
    elif k == "pow":
        base, n = e.args
        d = mul(const(n), power(base, n - 1), _diff(base, s))
    elif k == "div":
        a, b = e.args
        da, db = _diff(a, s), _diff(b, s)
        if _is_zero(db):
            d = quotient(da, b)
        else:
            d = quotient(sub(mul(da, b), mul(a, db)), power(b, 2))
    elif k == "func":
        tag, u = e.args
        du = _diff(u, s)
        if tag == "sin":
            outer = func("cos", u)
        elif tag == "cos":
            outer = neg(func("sin", u))
        elif tag == "exp":
            outer = e
        elif tag == "sqrt":
            outer = quotient(const(Fraction(1, 2)), e)
        else:  # log
            outer = quotient(ONE, u)
        d = mul(outer, du)
    else:  # const handled by the free-symbol shortcut
        d = ZERO
    _DERIV[key] = d
    return d


# ---------------------------------------------------------------------------
# simplify

def simplify(e: Expr) -> Expr:
    """Rebuild ``e`` bottom-up through the simplifying constructors.

    Nodes are simplified on construction, so this is the identity on anything
    built through this module; it exists for idempotence checks and to
    normalise trees assembled elsewhere.
    """
    memo: dict[int, Expr] = {}
    for node in _toposort([e]):
        k = node.kind
        if k in ("const", "sym"):
            out = node
        elif k == "add":
            out = add(*(memo[c.id] for c in node.args))
        elif k == "mul":
            out = mul(*(memo[c.id] for c in node.args))
        elif k == "pow":
            out = power(memo[node.args[0].id], node.args[1])
        elif k == "div":
            out = quotient(memo[node.args[0].id], memo[node.args[1].id])
        else:
            out = func(node.args[0], memo[node.args[1].id])
        memo[node.id] = out
    return memo[e.id]


def _children(e: Expr) -> Iterable[Expr]:
    k = e.kind
    if k in ("add", "mul", "div"):
        return e.args
    if k == "pow":
        return (e.args[0],)
    if k == "func":
        return (e.args[1],)
    return ()


def _toposort(roots: Sequence[Expr]) -> list[Expr]:
    """Children-before-parents order of every node reachable from ``roots``."""
    seen: set[int] = set()
    order: list[Expr] = []
    for root in roots:
        if root.id in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in seen:
                continue
            seen.add(node.id)
            stack.append((node, True))
            for c in _children(node):
                if c.id not in seen:
                    stack.append((c, False))
    return order


def dag_size(*roots: Expr) -> int:
    return len(_toposort(roots))


# ---------------------------------------------------------------------------
# evaluation

def _f_sqrt(v):
    if isinstance(v, np.ndarray):
        return np.sqrt(v)
    if v < 0:
        raise EvaluationError("sqrt of a negative number")
    return math.sqrt(v)


def _f_log(v):
    if isinstance(v, np.ndarray):
        return np.log(v)
    if v <= 0:
        raise EvaluationError("log of a non-positive number")
    return math.log(v)


def _wrap(npf, mf):
    def f(v):
        if isinstance(v, np.ndarray):
            return npf(v)
        return mf(v)
    return f


_float_funcs: dict[str, Callable] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "sqrt": lambda v: _f_sqrt(v),
    "log": lambda v: _f_log(v),
}

_RUNTIME = {
    "_sin": _wrap(np.sin, math.sin),
    "_cos": _wrap(np.cos, math.cos),
    "_exp": _wrap(np.exp, math.exp),
    "_sqrt": _f_sqrt,
    "_log": _f_log,
}


class Tape:
    """Straight-line program evaluating several roots in one pass over their shared DAG.

    The generated code works on Python floats, :class:`fractions.Fraction`
    (exact mode) and numpy arrays (vectorised evaluation over many points).
    """

    def __init__(self, roots: Sequence[Expr], inputs: Sequence[Union[Symbol, str]] | None = None):
        self.roots = tuple(roots)
        order = _toposort(self.roots)
        free: set[Symbol] = set()
        for r in self.roots:
            free |= r.free
        if inputs is None:
            inputs = sorted(free, key=lambda s: s.name)
        names = [s.name if isinstance(s, Symbol) else s for s in inputs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate input names")
        missing = {s.name for s in free} - set(names)
        if missing:
            raise EvaluationError(f"unbound symbol(s): {', '.join(sorted(missing))}")
        self.inputs = tuple(names)
        self.size = len(order)
        self.has_func = any(n.kind == "func" for n in order)
        self.has_float = any(n.kind == "const" and isinstance(n.args[0], float) for n in order)
        self._order = order
        self._fn: dict[bool, Callable] = {}

    def _build(self, exact: bool) -> Callable:
        order = self._order
        slot: dict[int, str] = {}
        consts: dict[str, object] = {}
        argnames = [f"a{i}" for i in range(len(self.inputs))]
        pos = {name: i for i, name in enumerate(self.inputs)}
        lines = [f"def _tape({', '.join(argnames)}):"]
        for i, node in enumerate(order):
            v = f"v{i}"
            slot[node.id] = v
            k = node.kind
            if k == "const":
                val = node.args[0]
                if exact:
                    cname = f"c{i}"
                    consts[cname] = val
                    rhs = cname
                else:
                    rhs = repr(float(val))
            elif k == "sym":
                rhs = argnames[pos[node.args[0].name]]
            elif k == "add":
                rhs = " + ".join(slot[c.id] for c in node.args)
            elif k == "mul":
                rhs = " * ".join(slot[c.id] for c in node.args)
            elif k == "pow":
                b, n = node.args
                if n > 0:
                    rhs = f"{slot[b.id]} ** {n}"
                else:
                    rhs = f"_one / ({slot[b.id]} ** {-n})"
            elif k == "div":
                rhs = f"{slot[node.args[0].id]} / {slot[node.args[1].id]}"
            else:
                rhs = f"_{node.args[0]}({slot[node.args[1].id]})"
            lines.append(f"    {v} = {rhs}")
        outs = ", ".join(slot[r.id] for r in self.roots)
        lines.append(f"    return ({outs},)")
        ns: dict[str, object] = dict(_RUNTIME)
        ns.update(consts)
        ns["_one"] = Fraction(1) if exact else 1.0
        code = compile("\n".join(lines), "<catfind-tape>", "exec")
        exec(code, ns)
        return ns["_tape"]  # type: ignore[return-value]

    def __call__(self, values: Union[Mapping, Sequence], exact: bool = False) -> tuple:
        if isinstance(values, Mapping):
            args = [_lookup(values, name) for name in self.inputs]
        else:
            args = list(values)
            if len(args) != len(self.inputs):
                raise ValueError("wrong number of inputs")
        if exact:
            if self.has_func:
                raise EvaluationError("exact mode does not support function nodes")
            if self.has_float:
                raise EvaluationError("exact mode requires rational constants")
            conv = []
            for a in args:
                if isinstance(a, float) or not isinstance(a, Rational):
                    raise EvaluationError("exact mode requires rational bindings")
                conv.append(Fraction(a))
            args = conv
        fn = self._fn.get(exact)
        if fn is None:
            fn = self._fn[exact] = self._build(exact)
        try:
            return fn(*args)
        except ZeroDivisionError as exc:
            raise EvaluationError("division by zero") from exc


def _lookup(values: Mapping, name: str):
    if name in values:
        return values[name]
    for k, v in values.items():
        if isinstance(k, Symbol) and k.name == name:
            return v
        if isinstance(k, Expr) and k.kind == "sym" and k.args[0].name == name:
            return v
    raise EvaluationError(f"unbound symbol: {name}")


def evaluate(e: Expr, binding: Mapping, exact: bool = False) -> Number:
    """Evaluate ``e`` at ``binding`` (keys: names, Symbols or symbol nodes).

    Float mode checks the result for finiteness; exact mode returns a
    :class:`~fractions.Fraction`.
    """
    tape = Tape([e])
    (out,) = tape(binding, exact=exact)
    if not exact and not isinstance(out, np.ndarray):
        out = float(out)
        if not math.isfinite(out):
            raise EvaluationError("non-finite result")
    return out


# ---------------------------------------------------------------------------
# printing

def _fmt_const(v: Number) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    return repr(v)


# Printing precedence levels; a child is parenthesised when its level is too low.
_ADD, _MUL, _NEG, _POW, _ATOM = 1, 2, 3, 4, 5


def to_str(e: Expr) -> str:
    """Grammar-compatible text for ``e``."""
    memo: dict[int, tuple[str, int]] = {}
    for node in _toposort([e]):
        memo[node.id] = _render(node, memo)
    return memo[e.id][0]


def _paren(s: tuple[str, int], level: int) -> str:
    return s[0] if s[1] >= level else f"({s[0]})"


def _render(node: Expr, memo) -> tuple[str, int]:
    k = node.kind
    if k == "const":
        v = node.args[0]
        txt = _fmt_const(v)
        if v < 0:
            return txt, _NEG
        if "/" in txt:
            return txt, _MUL
        return txt, _ATOM
    if k == "sym":
        return node.args[0].name, _ATOM
    if k == "add":
        out = []
        for i, c in enumerate(node.args):
            s = memo[c.id]
            txt = _paren(s, _MUL)
            if i == 0:
                out.append(txt)
            elif txt.startswith("-"):
                out.append(" - " + txt[1:])
            else:
                out.append(" + " + txt)
        return "".join(out), _ADD
    if k == "mul":
        args = list(node.args)
        prefix = ""
        parts = []
        if args[0].kind == "const":
            v = args[0].args[0]
            if v == -1:
                prefix = "-"
            else:
                parts.append(_fmt_const(v))
            args = args[1:]
        for c in args:
            s = memo[c.id]
            # a/b inside a product must stay grouped to round-trip structurally
            parts.append(_paren(s, _NEG) if c.kind != "div" else f"({s[0]})")
        txt = prefix + "*".join(parts)
        return txt, _NEG if txt.startswith("-") else _MUL
    if k == "pow":
        b, n = node.args
        base = _paren(memo[b.id], _ATOM)
        return f"{base}^{n if n > 0 else f'({n})'}", _POW
    if k == "div":
        a, b = node.args
        return f"{_paren(memo[a.id], _MUL)}/{_paren(memo[b.id], _POW)}", _MUL
    tag, u = node.args
    return f"{tag}({memo[u.id][0]})", _ATOM
