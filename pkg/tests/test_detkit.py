from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catfind import expr as E
from catfind.detkit import (BGStack, build_B, build_G_matrix, eval_G, fraction_det, hadamard_bound, index_strings,
                            is_negligible, jacobian, symbolic_det)
from catfind.parser import parse_expr, parse_field
from catfind.problem import load_problem

from helpers import SWALLOWTAIL, SWALLOWTAIL_G, butterfly_point, make_field, phi_derivative, primary_field, rel


def texts(m):
    return [[E.to_str(e) for e in row] for row in m.rows]


def rational_point(rng, names):
    return {n: Fraction(int(rng.integers(-40, 41)), int(rng.integers(1, 13))) for n in names}


# -- jacobian and symbolic_det ----------------------------------------------

def test_jacobian_of_swallowtail_field(swallowtail):
    m = jacobian(swallowtail.components, swallowtail.variables)
    sy = swallowtail.variables + swallowtail.parameters
    want = [[parse_expr("alpha + 3*x^2", sy), E.ONE], [E.ONE, parse_expr("2*y", sy)]]
    assert [list(r) for r in m.rows] == want


def test_jacobian_of_single_function():
    f = make_field(["x^2"], ["x"])
    assert texts(jacobian(f.components, f.variables)) == [["2*x"]]


def test_jacobian_of_whitney_field():
    f = load_problem("whitney").field()
    m = jacobian(f.components, f.variables)
    sy = f.variables + f.parameters
    want = [["2*x + 2*z", "2*gamma*y", "2*x"], ["0", "1", "0"], ["0", "0", "1"]]
    assert [list(r) for r in m.rows] == [[parse_expr(t, sy) for t in row] for row in want]


def test_det_examples(swallowtail):
    sy = swallowtail.variables + swallowtail.parameters
    B1 = symbolic_det(jacobian(swallowtail.components, swallowtail.variables))
    want = parse_expr("-1 + 2*alpha*y + 6*x^2*y", sy)
    for v in ({"x": Fraction(1, 3), "y": Fraction(-2, 5), "alpha": Fraction(7, 2)}, {"x": 2, "y": 3, "alpha": -1}):
        assert E.evaluate(B1, v, exact=True) == E.evaluate(want, v, exact=True)
    f = make_field(["x", "y", "z"], ["x", "y", "z"])
    assert symbolic_det(jacobian(f.components, f.variables)) is E.ONE
    fold = load_problem("fold").field()
    assert texts(jacobian(fold.components, fold.variables)) == [["2*x", "-1"], ["0", "1"]]
    assert symbolic_det(jacobian(fold.components, fold.variables)) is parse_expr("2*x", fold.variables)


def test_det_rejects_non_square_and_oversize():
    f = make_field(["x + y", "x*y"], ["x", "y"])
    m = jacobian(f.components[:1], f.variables)
    with pytest.raises(ValueError):
        symbolic_det(m)
    with pytest.raises(ValueError):
        symbolic_det(jacobian(f.components, f.variables), limit=1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_symbolic_det_matches_lu(n, seed):
    rng = np.random.default_rng(seed)
    names = [f"x{i}" for i in range(n)]
    comps = []
    for i in range(n):
        terms = [f"({rng.integers(-3, 4)})*x{j}^{rng.integers(1, 4)}*x{(j + i) % n}" for j in range(n)]
        comps.append(" + ".join(terms) + f" + x{i}")
    f = make_field(comps, names)
    m = jacobian(f.components, f.variables)
    d = symbolic_det(m)
    for _ in range(5):
        v = dict(zip(names, rng.uniform(-1.5, 1.5, n)))
        a = m.evaluate(v)
        lu = np.linalg.det(a)
        assert abs(E.evaluate(d, v) - lu) <= 1e-9 * max(abs(lu), hadamard_bound(a) * 1e-3, 1e-12)


def test_fraction_det_is_exact():
    rows = [[Fraction(1, 3), Fraction(2)], [Fraction(5, 7), Fraction(-1, 2)]]
    assert fraction_det(rows) == Fraction(-1, 6) - Fraction(10, 7)
    assert fraction_det([[Fraction(0), Fraction(1)], [Fraction(1), Fraction(0)]]) == -1


# -- B chain -------------------------------------------------------------------

def test_swallowtail_B_chain_matches_printed_forms(swallowtail, rng):
    stack = BGStack(swallowtail)
    sy = swallowtail.variables + swallowtail.parameters
    printed = [parse_expr(t, sy) for t in ("-1 + 2*alpha*y + 6*x^2*y", "24*x*y^2 - 6*x^2 - 2*alpha",
                                           "24*y*(2*y^2 - 3*x)")]
    names = swallowtail.var_names + swallowtail.param_names
    for _ in range(50):
        v = rational_point(rng, names)
        for s, want in enumerate(printed, start=1):
            assert E.evaluate(build_B(stack, s), v, exact=True) == E.evaluate(want, v, exact=True)


def test_butterfly_B_chain_matches_printed_forms(butterfly, rng):
    stack = BGStack(butterfly)
    names = butterfly.var_names + butterfly.param_names
    for _ in range(50):
        v = rational_point(rng, names)
        x, y, a, g = v["x"], v["y"], v["alpha"], v["gamma"]
        A, C = a + 3 * x * x, g + 3 * y * y
        printed = [A * C - 1, 6 * x * C ** 2 - 6 * y * A, 6 * A + 6 * C * (C * C - 18 * x * y),
                   72 * (15 * x * y * y - 3 * g * g * y - 27 * y ** 5 + 2 * g * (x - 9 * y ** 3))]
        for s, want in enumerate(printed, start=1):
            assert E.evaluate(stack.B(s), v, exact=True) == want


def test_B_with_empty_index_is_canonical_B1(swallowtail):
    stack = BGStack(swallowtail)
    assert stack.B(1, ()) is stack.B(1)


def test_rebuilding_the_stack_gives_identical_nodes(swallowtail):
    a, b = BGStack(swallowtail), BGStack(swallowtail)
    for s in (1, 2, 3):
        for I in index_strings(2, s - 1):
            assert a.B(s, I) is b.B(s, I)


@pytest.mark.parametrize("s, I", [(0, ()), (2, ()), (2, (3,)), (3, (1,)), (2, (0,))])
def test_invalid_index_strings(swallowtail, s, I):
    with pytest.raises(ValueError):
        BGStack(swallowtail).B(s, I)


def test_primary_form_example():
    f = primary_field(3, 3, [2, 3], [1, 1])
    stack = BGStack(f)
    for r in (1, 2, 3):
        x1 = 0.7
        point = {"x1": x1, "x2": 0.3, "x3": -0.2, "a1": 0.1, "a2": -0.4, "a3": 0.25}
        want = 6 ** r * np.polyval(np.polyder([1, 0, 0.25, -0.4, 0.1], r), x1)
        assert E.evaluate(stack.B(r), point) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("psi", [False, True])
def test_primary_form_reduction_random(psi):
    rng = np.random.default_rng(7 + psi)
    for _ in range(20):
        r = int(rng.integers(1, 5))
        n = r + 1 + int(rng.integers(0, 2)) if psi else int(rng.integers(2, 5))
        n = min(n, 5)
        lams = [int(v) or 1 for v in rng.integers(-3, 4, n - 1)]
        ks = [int(v) or 1 for v in rng.integers(-3, 4, n - 1)]
        lead = float(rng.choice([-2, -1, 1, 2, 3]))
        f = primary_field(n, r, lams, ks, coeffs=[lead], psi=psi)
        stack = BGStack(f)
        lam_prod = float(np.prod([l if (not psi or i + 2 <= r + 1) else 1 for i, l in enumerate(lams)]))
        for _ in range(20):
            v = {f"x{i}": rng.uniform(-1, 1) for i in range(1, n + 1)}
            v.update({f"a{i}": rng.uniform(-1, 1) for i in range(1, r + 1)})
            avals = [v[f"a{i}"] for i in range(1, r + 1)]
            psi_c = [v[f"x{i + 1}"] for i in range(1, r + 1)] if psi else None
            for s in range(1, r + 2):
                want = lam_prod ** s * phi_derivative(lead, r, avals, v["x1"], s, psi_c)
                got = E.evaluate(stack.B(s), v)
                assert abs(got - want) <= 1e-10 * max(abs(want), 1.0)


# -- G matrices ----------------------------------------------------------------

def test_fold_G1_matrix(fold):
    m = build_G_matrix(BGStack(fold), 1, (), ["alpha"])
    assert texts(m) == [["2*x", "-1", "0"], ["0", "1", "-1"], ["2", "0", "0"]]


@pytest.mark.parametrize("k", [1, 2, Fraction(-3, 2)])
def test_simple_cusp_G2_matches_its_displayed_matrices(k):
    """Signs checked against sympy determinants of the displayed G_{2,i} matrices."""
    sp = pytest.importorskip("sympy")
    f = load_problem("cusp").field()
    stack = BGStack(f)
    point = {"x": 0, "y": 0, "z": 0, "alpha": 0, "beta": 0, "k": k}
    ks = sp.Rational(k.numerator, k.denominator) if isinstance(k, Fraction) else sp.Integer(k)
    top = [[0, 1, 0, 0, 1], [0, 1, ks, 0, 0], [0, 0, 1, 0, 0], [0, 0, 0, 1, 0]]
    for i, last in enumerate(([6, 0, 0, 0, 0], [-6, 0, 0, 0, 0], [6 * ks, 0, 0, 0, 0]), start=1):
        m = build_G_matrix(stack, 2, (i,), ["alpha", "beta"])
        assert m.shape == (5, 5)
        rows = m.evaluate(point, exact=True)
        assert rows == [[Fraction(int(sp.numer(v)), int(sp.denom(v))) for v in row] for row in top + [last]]
        value, _ = eval_G(stack, 2, (i,), ["alpha", "beta"], point, exact=True)
        assert value == Fraction(str(sp.Matrix(top + [last]).det()))
    values = [eval_G(stack, 2, (i,), ["alpha", "beta"], point, exact=True)[0] for i in (1, 2, 3)]
    assert values == [-6, 6, -6 * k]


def test_absent_parameter_gives_zero_column():
    f = make_field(["x^2 - alpha", "y"], ["x", "y"], ["alpha", "mu"])
    m = build_G_matrix(BGStack(f), 1, (), ["mu"])
    assert all(row[-1] is E.ZERO for row in m.rows)
    value, _ = eval_G(BGStack(f), 1, (), ["mu"], {"x": 0.0, "y": 0.0, "alpha": 0.0, "mu": 1.0})
    assert value == 0


def test_G_rejects_bad_parameters(swallowtail):
    stack = BGStack(swallowtail)
    with pytest.raises(ValueError):
        stack.G_matrix(2, (1,), ["alpha", "alpha"])
    with pytest.raises(ValueError):
        stack.G_matrix(2, (1,), ["alpha", "omega"])
    with pytest.raises(ValueError):
        stack.G_matrix(2, (1,), ["alpha"])


def test_swallowtail_G_sweep_values(swallowtail):
    stack = BGStack(swallowtail)
    for I, want in SWALLOWTAIL_G.items():
        value, scale = eval_G(stack, 3, tuple(int(c) for c in I), None, SWALLOWTAIL)
        assert rel(value, want) <= 1e-8
        assert scale >= abs(value)


@pytest.mark.parametrize("sign", [1, -1])
def test_butterfly_G_exact(butterfly, sign):
    stack = BGStack(butterfly)
    point = butterfly_point(sign, exact=True)
    for I in itertools.product((1, 2), repeat=3):
        value, _ = eval_G(stack, 4, I, None, point, exact=True)
        assert abs(value) == 103680 and isinstance(value, Fraction)
        fvalue, _ = eval_G(stack, 4, I, None, butterfly_point(sign))
        assert rel(abs(fvalue), 103680) <= 1e-8


def test_degenerate_cusp_G3_vanish():
    f = load_problem("cusp_degenerate").field()
    stack = BGStack(f)
    point = {"x": 0, "y": 1, "alpha": 0, "beta": 1, "gamma": 0, "k": 1}
    for I in itertools.product((1, 2), repeat=2):
        value, _ = eval_G(stack, 3, I, ["alpha", "beta", "gamma"], point, exact=True)
        assert value == 0


def test_hadamard_bound_dominates_determinant(rng):
    for _ in range(50):
        a = rng.normal(size=(4, 4))
        assert abs(np.linalg.det(a)) <= hadamard_bound(a) * (1 + 1e-12)


@pytest.mark.parametrize("value, scale, zero", [(1e-9, 1.0, True), (1e-3, 1.0, False), (1e-5, 100.0, True),
                                                (1e-7, 0.0, True), (2e-6, 1.0, False)])
def test_scaled_zero_test(value, scale, zero):
    assert is_negligible(value, scale) is zero


# -- zero-set properties --------------------------------------------------------

@pytest.mark.parametrize("name, point, r", [
    ("swallowtail", SWALLOWTAIL, 3),
    ("butterfly", butterfly_point(1), 4),
    ("butterfly", butterfly_point(-1), 4),
])
def test_index_string_co_vanishing(name, point, r):
    f = load_problem(name).field()
    stack = BGStack(f)
    for s in range(1, r + 1):
        worst = max(abs(v) / max(h, 1.0) for v, h in (stack.B_value(s, point, I) for I in index_strings(f.n, s - 1)))
        assert worst <= 1e-6


def test_affine_change_of_variables_preserves_the_zero_set(rng):
    for _ in range(3):
        A = rng.integers(-3, 4, size=(2, 2))
        while round(np.linalg.det(A)) == 0:
            A = rng.integers(-3, 4, size=(2, 2))
        b = rng.integers(-2, 3, size=2)
        sub = {v: f"(({A[i, 0]})*z1 + ({A[i, 1]})*z2 + ({b[i]}))" for i, v in enumerate(("x", "y"))}
        comps = ["y + x^3 + alpha*x + beta", "y^2 + x + gamma"]
        comps = [c.replace("x", "{x}").replace("y", "{y}").format(**sub) for c in comps]
        g = parse_field(comps, ["z1", "z2"], ["alpha", "beta", "gamma"])
        z = np.linalg.solve(A.astype(float), np.array([SWALLOWTAIL["x"], SWALLOWTAIL["y"]]) - b)
        point = dict(SWALLOWTAIL, z1=z[0], z2=z[1])
        gstack = BGStack(g)
        for c in g.components:
            assert abs(E.evaluate(c, point)) <= 1e-8
        for s in (1, 2, 3):
            v, h = gstack.B_value(s, point)
            assert abs(v) / max(h, 1.0) <= 1e-8
