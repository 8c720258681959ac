"""Locate, classify and continue underlying catastrophe points of vector fields.

A critical point of F(x; alpha) exhibits a codimension-r catastrophe when the
nested determinants B_1 = .. = B_r vanish there and B_{r+1} does not; it is
full when every extended determinant G_{r,I} is nonzero.
"""
from __future__ import annotations

from .detkit import BGStack, build_B, build_G_matrix, eval_G, jacobian, symbolic_det
from .expr import Expr, Symbol, differentiate, evaluate, simplify
from .locate import (AugmentedSystem, CatastrophePoint, NewtonConfig, classify_point, find_catastrophe,
                     fullness_sweep, newton_solve)
from .oracle import SearchBox, count_critical_points, region_census
from .parser import ParseError, VectorField, parse_expr, parse_field
from .problem import ProblemSpec, load_problem
from .trace import Branch, StepControl, continue_branch, tangent, validate_against_parametric

__version__ = "0.1.0"

__all__ = [
    "AugmentedSystem",
    "BGStack",
    "Branch",
    "CatastrophePoint",
    "Expr",
    "NewtonConfig",
    "ParseError",
    "ProblemSpec",
    "SearchBox",
    "StepControl",
    "Symbol",
    "VectorField",
    "build_B",
    "build_G_matrix",
    "classify_point",
    "continue_branch",
    "count_critical_points",
    "differentiate",
    "eval_G",
    "evaluate",
    "find_catastrophe",
    "fullness_sweep",
    "jacobian",
    "load_problem",
    "newton_solve",
    "parse_expr",
    "parse_field",
    "region_census",
    "simplify",
    "symbolic_det",
    "tangent",
    "validate_against_parametric",
]
