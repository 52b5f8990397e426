"""JSON round-trip for problems, points, and directions.

The on-disk schema is versioned and deliberately literal: expression trees
serialize node by node, so a loaded problem evaluates identically to the
saved one.  Dumps are deterministic (sorted keys, fixed separators), which
makes byte-level comparison of reports meaningful.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import expr as ex
from .dcalc import Direction
from .model import CompositeProblem, LayerMap, Point

SCHEMA_VERSION = 1


class FormatError(ValueError):
    """Malformed or mistyped input file."""


def expr_to_dict(e: ex.Expr) -> dict:
    d: dict = {"op": e.op}
    if e.op == "const":
        d["value"] = e.value
    elif e.op == "theta":
        d["ref"] = e.ref
    elif e.op == "u":
        d["layer"] = e.layer
        d["ref"] = e.ref
    if e.op == "leaky_relu":
        d["alpha"] = e.alpha
    if e.op in ("scaled", "affine"):
        d["coeffs"] = list(e.coeffs)
    if e.op == "affine":
        d["const"] = e.const
    if e.args:
        d["args"] = [expr_to_dict(a) for a in e.args]
    return d


def expr_from_dict(d: dict) -> ex.Expr:
    if not isinstance(d, dict) or "op" not in d:
        raise FormatError("expression node must be an object with an 'op' field")
    op = d["op"]
    if op not in ex.ALL_OPS:
        raise FormatError(f"unknown expression op {op!r}")
    args = tuple(expr_from_dict(a) for a in d.get("args", []))
    return ex.Expr(
        op,
        args=args,
        value=float(d.get("value", 0.0)),
        ref=int(d.get("ref", -1)),
        layer=int(d.get("layer", 0)),
        alpha=float(d.get("alpha", 0.0)),
        coeffs=tuple(float(c) for c in d.get("coeffs", [])),
        const=float(d.get("const", 0.0)),
    )


def problem_to_dict(p: CompositeProblem) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "problem",
        "n": p.n,
        "lam": p.lam,
        "layers": [
            {"index": lm.index, "exprs": [expr_to_dict(e) for e in lm.exprs]}
            for lm in p.layers
        ],
        "outer": expr_to_dict(p.outer),
        "meta": p.meta or {},
    }


def _expect_kind(d: dict, kind: str) -> None:
    if not isinstance(d, dict):
        raise FormatError(f"expected a JSON object describing a {kind}")
    if d.get("kind") != kind:
        raise FormatError(f"expected kind {kind!r}, found {d.get('kind')!r}")
    if int(d.get("schema_version", -1)) != SCHEMA_VERSION:
        raise FormatError(
            f"unsupported schema_version {d.get('schema_version')!r} (this build reads {SCHEMA_VERSION})"
        )


def problem_from_dict(d: dict) -> CompositeProblem:
    _expect_kind(d, "problem")
    try:
        layers = tuple(
            LayerMap(int(lm["index"]), tuple(expr_from_dict(e) for e in lm["exprs"]))
            for lm in d["layers"]
        )
        return CompositeProblem(
            int(d["n"]), layers, expr_from_dict(d["outer"]), float(d["lam"]), d.get("meta") or None
        )
    except KeyError as err:
        raise FormatError(f"problem file missing field {err}") from err


def point_to_dict(z: Point) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "point",
        "theta": np.asarray(z.theta, dtype=float).tolist(),
        "u": [np.asarray(b, dtype=float).tolist() for b in z.u],
    }


def point_from_dict(d: dict) -> Point:
    _expect_kind(d, "point")
    try:
        return Point(
            np.asarray(d["theta"], dtype=float),
            tuple(np.asarray(b, dtype=float) for b in d["u"]),
        )
    except KeyError as err:
        raise FormatError(f"point file missing field {err}") from err


def direction_to_dict(dd: Direction) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "direction",
        "dtheta": np.asarray(dd.dtheta, dtype=float).tolist(),
        "du": [np.asarray(b, dtype=float).tolist() for b in dd.du],
    }


def direction_from_dict(d: dict) -> Direction:
    _expect_kind(d, "direction")
    try:
        return Direction(
            np.asarray(d["dtheta"], dtype=float),
            tuple(np.asarray(b, dtype=float) for b in d["du"]),
        )
    except KeyError as err:
        raise FormatError(f"direction file missing field {err}") from err


def dumps(d: dict) -> str:
    return json.dumps(d, sort_keys=True, indent=2) + "\n"


def save(path: str | Path, d: dict) -> None:
    Path(path).write_text(dumps(d))


def load(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise FormatError(f"{path}: {err.strerror or err}") from err
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from err


def load_problem(path: str | Path) -> CompositeProblem:
    return problem_from_dict(load(path))


def load_point(path: str | Path) -> Point:
    return point_from_dict(load(path))


def load_direction(path: str | Path) -> Direction:
    return direction_from_dict(load(path))


def save_problem(path: str | Path, p: CompositeProblem) -> None:
    save(path, problem_to_dict(p))


def save_point(path: str | Path, z: Point) -> None:
    save(path, point_to_dict(z))


def save_direction(path: str | Path, dd: Direction) -> None:
    save(path, direction_to_dict(dd))
