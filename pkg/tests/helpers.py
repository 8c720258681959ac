"""Closed forms and exact points shared by the tests."""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from catfind.parser import parse_field

# Exact coordinates of the cubic-quadratic swallowtail and the double-cubic butterfly.
SWALLOWTAIL = {
    "x": 1 / (3 * 2 ** 0.6),
    "y": 2 ** -0.8,
    "alpha": 5 / (6 * 2 ** 0.2),
    "beta": -35 / (27 * 2 ** 0.8),
    "gamma": -5 / (6 * 2 ** 0.6),
}
SWALLOWTAIL_G = {"11": 720.0, "12": -(2 ** 0.8) * 360, "21": 2 ** 0.6 * 360, "22": -(2 ** 0.4) * 360}


def butterfly_point(sign: int, exact: bool = False) -> dict:
    third = Fraction(sign, 3) if exact else sign / 3
    a = Fraction(2, 3) if exact else 2 / 3
    b = Fraction(-16 * sign, 27) if exact else -16 * sign / 27
    return {"x": third, "y": third, "alpha": a, "beta": b, "gamma": a, "delta": b}


STAR = {"x": 1 / 6, "y": 1 / 6, "alpha": -0.5, "gamma": -0.5, "beta": 13 / 108, "delta": 13 / 108,
        "rho": -5 / 12, "sigma": -5 / 12, "k": 1.0}
STAR_G = 3 ** 8 * 5 ** 2 * 7 / 2 ** 15


def swallowtail_fold(s, t):
    return {"x": s, "y": t, "alpha": (1 - 6 * s ** 2 * t) / (2 * t), "beta": 2 * s ** 3 - t - s / (2 * t),
            "gamma": -t ** 2 - s}


def swallowtail_cusp(t):
    return {"x": 1 / (24 * t ** 3), "y": t, "alpha": 1 / (2 * t) - 1 / (192 * t ** 6),
            "beta": 1 / (6912 * t ** 9) - 1 / (48 * t ** 4) - t, "gamma": -1 / (24 * t ** 3) - t ** 2}


def _a(s, t):
    return np.cbrt(s) / np.cbrt(t) - 3 * s ** 2


def _b(s, t):
    return 2 * s ** 3 - t - np.cbrt(s) ** 4 / np.cbrt(t)


def butterfly_swallowtail(u):
    """Swallowtail curve of the double cubic, parametrised by u (butterfly at u = 1)."""
    v = (np.cbrt(u) ** 2 + np.cbrt(u) ** -2) / 18
    s, t = np.sqrt(u * v), np.sqrt(v / u)
    return {"x": s, "y": t, "alpha": _a(s, t), "beta": _b(s, t), "gamma": _a(t, s), "delta": _b(t, s)}


def quadratic_fold(s, k=1.0, beta_factor=2.0):
    """Fold set of the double-quadratic cusp on the x > 0 sheet.

    ``beta_factor=2`` is the derived form beta^2 = 2 s (s - k)(2 s - k);
    ``beta_factor=1`` is the form without the factor 2.
    """
    x = np.sqrt(s * (s - k) / (2 * (2 * s - k)))
    return {"x": x, "y": s, "alpha": s * (k - 3 * s) / (2 * (2 * s - k)),
            "beta": np.sqrt(beta_factor * s * (s - k) * (2 * s - k))}


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def make_field(components, variables, parameters=(), name="t"):
    return parse_field(list(components), list(variables), list(parameters), name)


def primary_field(n, r, lams, ks, coeffs=None, psi=False):
    """phi(x1) + k.x, lambda_i x_i form; with ``psi`` the unfolding by x_2..x_{r+1}.

    ``coeffs`` are the coefficients of phi from x1^(r+1) down to x1^0 where
    the lower ones multiply parameters a_i; without them phi is monic.
    """
    xs = [f"x{i}" for i in range(1, n + 1)]
    al = [f"a{i}" for i in range(1, r + 1)]
    lead = "1" if coeffs is None else f"({coeffs[0]})"
    if psi:
        core = f"{lead}*x1^{r + 1}" + "".join(f" + x{i + 1}*x1^{i - 1}" for i in range(1, r + 1))
    else:
        core = f"{lead}*x1^{r + 1}" + "".join(f" + a{i}*x1^{i - 1}" for i in range(1, r + 1))
    f1 = core + "".join(f" + ({ks[j]})*x{j + 2}" for j in range(n - 1))
    comps = [f1]
    for i in range(2, n + 1):
        if psi:
            comps.append(f"x{i}" if i > r + 1 else f"({lams[i - 2]})*(x{i} - a{i - 1})")
        else:
            comps.append(f"({lams[i - 2]})*x{i}")
    return parse_field(comps, xs, al, "primary")


def phi_derivative(lead, r, avals, x1, s, psi_coeffs=None):
    """s-th derivative in x1 of lead*x1^(r+1) + sum c_i x1^(i-1), by numpy."""
    lower = psi_coeffs if psi_coeffs is not None else avals
    poly = np.zeros(r + 2)
    poly[0] = lead
    for i in range(1, r + 1):
        poly[r + 2 - i] = lower[i - 1]
    return np.polyval(np.polyder(poly, s), x1)
