"""Problem files: a vector field with defaults, search boxes and tolerances, as JSON.

Numeric values may be JSON numbers or strings holding an exact rational such
as ``"2/3"``; strings stay strings on save so a file round-trips unchanged.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence, Union

from .parser import VectorField, parse_field

__all__ = [
    "DEFAULT_TOLERANCES",
    "ProblemSpec",
    "load_problem",
    "builtin_names",
    "to_number",
    "parse_assignment",
]

DEFAULT_TOLERANCES = {"eps_b": 1e-6, "eps_g": 1e-6, "residual": 1e-11}
_KEYS = ("name", "variables", "parameters", "components", "defaults", "seeds", "boxes", "tolerances")

Number = Union[int, float, Fraction]


def to_number(v) -> Number:
    """JSON value or assignment text to a number; rational text stays exact."""
    if isinstance(v, bool):
        raise ValueError(f"not a number: {v!r}")
    if isinstance(v, (int, Fraction)):
        return v
    if isinstance(v, float):
        return v
    if isinstance(v, str):
        t = v.strip()
        try:
            return Fraction(t) if ("/" in t or "." not in t and "e" not in t.lower()) else float(t)
        except (ValueError, ZeroDivisionError):
            pass
        try:
            return float(t)
        except ValueError:
            raise ValueError(f"not a number: {v!r}") from None
    raise ValueError(f"not a number: {v!r}")


def parse_assignment(text: str) -> dict[str, Number]:
    """``"x=1, y=-1/2, alpha=0.3"`` -> {name: number}."""
    out: dict[str, Number] = {}
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"expected name=value, got {part!r}")
        name, value = (s.strip() for s in part.split("=", 1))
        if not name.isidentifier():
            raise ValueError(f"bad name {name!r}")
        if name in out:
            raise ValueError(f"{name!r} assigned twice")
        out[name] = to_number(value)
    return out


@dataclass
class ProblemSpec:
    name: str
    variables: list[str]
    parameters: list[str]
    components: list[str]
    defaults: dict = field(default_factory=dict)
    seeds: list[dict] = field(default_factory=list)
    boxes: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.components) != len(self.variables):
            raise ValueError(f"{len(self.components)} components for {len(self.variables)} variables")
        declared = set(self.variables) | set(self.parameters)
        unknown = set(self.defaults) - set(self.parameters)
        if unknown:
            raise ValueError(f"defaults reference undeclared parameter(s): {sorted(unknown)}")
        for seed in self.seeds:
            bad = set(seed) - declared
            if bad:
                raise ValueError(f"seed references undeclared symbol(s): {sorted(bad)}")
        for name, box in self.boxes.items():
            if name not in declared:
                raise ValueError(f"box for undeclared symbol {name!r}")
            if len(box) != 2 or not float(to_number(box[0])) < float(to_number(box[1])):
                raise ValueError(f"box for {name!r} must be [lo, hi] with lo < hi")
        bad = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if bad:
            raise ValueError(f"unknown tolerance key(s): {sorted(bad)}")
        for v in list(self.defaults.values()) + [v for s in self.seeds for v in s.values()]:
            to_number(v)

    # -- views ---------------------------------------------------------------
    def field(self) -> VectorField:
        return parse_field(self.components, self.variables, self.parameters, self.name)

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def default_values(self) -> dict[str, Number]:
        return {k: to_number(v) for k, v in self.defaults.items()}

    def seed_values(self) -> list[dict[str, Number]]:
        return [{k: to_number(v) for k, v in s.items()} for s in self.seeds]

    def box(self, name: str) -> tuple[float, float]:
        lo, hi = self.boxes[name]
        return float(to_number(lo)), float(to_number(hi))

    def multistart(self, unknowns: Sequence[str], per_axis: int = 5, base: Mapping | None = None) -> list[dict]:
        """Grid seeds over the boxed unknowns; the rest come from ``base``.

        The grid uses interior points lo + (i + 1/2) * width / per_axis.
        """
        base = dict(base or {})
        axes = []
        for u in unknowns:
            if u in self.boxes:
                lo, hi = self.box(u)
                w = (hi - lo) / per_axis
                axes.append([(u, lo + w * (i + 0.5)) for i in range(per_axis)])
        missing = [u for u in unknowns if u not in self.boxes and u not in base]
        if missing:
            raise ValueError(f"no box or starting value for {missing}")
        return [dict(base, **dict(combo)) for combo in itertools.product(*axes)]

    # -- serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        out = {"name": self.name, "variables": list(self.variables), "parameters": list(self.parameters),
               "components": list(self.components), "defaults": dict(self.defaults)}
        if self.seeds:
            out["seeds"] = [dict(s) for s in self.seeds]
        if self.boxes:
            out["boxes"] = {k: list(v) for k, v in self.boxes.items()}
        if self.tolerances:
            out["tolerances"] = dict(self.tolerances)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> "ProblemSpec":
        extra = set(data) - set(_KEYS)
        if extra:
            raise ValueError(f"unknown problem key(s): {sorted(extra)}")
        for key in ("name", "variables", "components"):
            if key not in data:
                raise ValueError(f"problem file lacks {key!r}")
        return cls(
            name=str(data["name"]),
            variables=list(data["variables"]),
            parameters=list(data.get("parameters", [])),
            components=list(data["components"]),
            defaults=dict(data.get("defaults", {})),
            seeds=[dict(s) for s in data.get("seeds", [])],
            boxes={k: list(v) for k, v in data.get("boxes", {}).items()},
            tolerances=dict(data.get("tolerances", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def builtin_names() -> list[str]:
    root = resources.files("catfind") / "problems"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_problem(source: Union[str, Path]) -> ProblemSpec:
    """Load a problem file, or a built-in problem by name (see :func:`builtin_names`)."""
    path = Path(source)
    if path.exists():
        return ProblemSpec.from_json(path.read_text())
    name = str(source)
    if name.endswith(".json"):
        name = name[:-5]
    root = resources.files("catfind") / "problems"
    candidate = root / f"{name}.json"
    if candidate.is_file():
        return ProblemSpec.from_json(candidate.read_text())
    raise FileNotFoundError(f"no problem file or built-in problem named {source!r}")
