"""Expression trees for piecewise-smooth functions of parameter and layer blocks.

The node set is deliberately small.  Affine combinations, products, squares,
inner products and squared norms cover the smooth side; max-of-two, absolute
value, plus-part and leaky relu cover the kinks.  Trees are built from
immutable nodes, so cycles are impossible by construction and sharing of
subtrees is safe.

Every node supports exact one-sided Taylor data along a ray: given input
curves ``x_i + tau*d_i + (tau^2/2)*e_i + o(tau^2)``, the propagation below
produces the value, the first-order coefficient and (on request) the
second-order coefficient of the node output.  At an active kink the rules
follow the winning branch, with first-order comparison breaking value ties
and a max of second-order coefficients breaking double ties.

Second-order results are flagged unsupported for nestings outside the
documented envelope: a max-family node at an active tie whose argument is
itself kinked along the ray, or a product whose two factors are both kinked
(including squares of a kinked argument).  First-order results are always
defined.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

# Gap below which a branch tie counts as active.
TIE_TOL = 1e-12

_LEAF_OPS = ("const", "theta", "u")
_SMOOTH_OPS = ("sum", "diff", "scaled", "affine", "product", "inner", "sqnorm", "square")
_KINK_OPS = ("max", "abs", "plus", "leaky_relu")
ALL_OPS = _LEAF_OPS + _SMOOTH_OPS + _KINK_OPS


@dataclass(frozen=True)
class Expr:
    """One node of an expression tree.

    ``op`` selects the rule; the payload fields are meaningful only for the
    ops that use them (``value`` for constants, ``ref``/``layer`` for leaves,
    ``alpha`` for leaky relu, ``coeffs``/``const`` for affine nodes).
    """

    op: str
    args: tuple["Expr", ...] = ()
    value: float = 0.0
    ref: int = -1
    layer: int = 0
    alpha: float = 0.0
    coeffs: tuple[float, ...] = ()
    const: float = 0.0


def const(v: float) -> Expr:
    return Expr("const", value=float(v))


def theta(i: int) -> Expr:
    if i < 0:
        raise ValueError("parameter index must be nonnegative")
    return Expr("theta", ref=int(i))


def uref(layer: int, i: int) -> Expr:
    """Component ``i`` of the layer-``layer`` block (layers are 1-based)."""
    if layer < 1:
        raise ValueError("layer references are 1-based")
    if i < 0:
        raise ValueError("component index must be nonnegative")
    return Expr("u", layer=int(layer), ref=int(i))


def add(*args: Expr) -> Expr:
    if not args:
        raise ValueError("sum needs at least one argument")
    return Expr("sum", args=tuple(args))


def sub(a: Expr, b: Expr) -> Expr:
    return Expr("diff", args=(a, b))


def scaled(c: float, a: Expr) -> Expr:
    return Expr("scaled", args=(a,), coeffs=(float(c),))


def affine(c0: float, coeffs: Sequence[float], args: Sequence[Expr]) -> Expr:
    if len(coeffs) != len(args):
        raise ValueError("affine needs one coefficient per argument")
    return Expr("affine", args=tuple(args), coeffs=tuple(float(c) for c in coeffs), const=float(c0))


def mul(a: Expr, b: Expr) -> Expr:
    return Expr("product", args=(a, b))


def dot(avec: Sequence[Expr], bvec: Sequence[Expr]) -> Expr:
    if len(avec) != len(bvec) or not avec:
        raise ValueError("inner product needs two argument lists of equal nonzero length")
    return Expr("inner", args=tuple(avec) + tuple(bvec))


def sqnorm(*args: Expr) -> Expr:
    if not args:
        raise ValueError("squared norm needs at least one argument")
    return Expr("sqnorm", args=tuple(args))


def vmax(a: Expr, b: Expr) -> Expr:
    return Expr("max", args=(a, b))


def vabs(a: Expr) -> Expr:
    return Expr("abs", args=(a,))


def plus(a: Expr) -> Expr:
    """Plus part, t -> max(t, 0)."""
    return Expr("plus", args=(a,))


def leaky(a: Expr, alpha: float) -> Expr:
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValueError("leaky slope must lie in [0, 1)")
    return Expr("leaky_relu", args=(a,), alpha=alpha)


def square(a: Expr) -> Expr:
    return Expr("square", args=(a,))


def validate(e: Expr, n: int, max_layer: int, widths: Sequence[int]) -> None:
    """Check leaf references against dimensions.

    ``max_layer`` is the largest layer index (1-based) the expression may
    reference; ``widths[j-1]`` is the width of layer ``j``.
    """
    if e.op not in ALL_OPS:
        raise ValueError(f"unknown node op {e.op!r}")
    if e.op == "theta":
        if not 0 <= e.ref < n:
            raise ValueError(f"parameter reference {e.ref} out of range for n={n}")
    elif e.op == "u":
        if not 1 <= e.layer <= max_layer:
            raise ValueError(f"layer reference {e.layer} not below layer {max_layer + 1}")
        if not 0 <= e.ref < widths[e.layer - 1]:
            raise ValueError(f"component {e.ref} out of range for layer {e.layer}")
    for a in e.args:
        validate(a, n, max_layer, widths)


def ops_used(e: Expr) -> set[str]:
    out = {e.op}
    for a in e.args:
        out |= ops_used(a)
    return out


def eval_one(e: Expr, th: np.ndarray, ublocks: Sequence[np.ndarray]) -> float:
    """Plain value evaluation; the fast path with no derivative bookkeeping."""
    op = e.op
    if op == "const":
        return e.value
    if op == "theta":
        return float(th[e.ref])
    if op == "u":
        return float(ublocks[e.layer - 1][e.ref])
    if op == "sum":
        return sum(eval_one(a, th, ublocks) for a in e.args)
    if op == "diff":
        return eval_one(e.args[0], th, ublocks) - eval_one(e.args[1], th, ublocks)
    if op == "scaled":
        return e.coeffs[0] * eval_one(e.args[0], th, ublocks)
    if op == "affine":
        acc = e.const
        for c, a in zip(e.coeffs, e.args):
            acc += c * eval_one(a, th, ublocks)
        return acc
    if op == "product":
        return eval_one(e.args[0], th, ublocks) * eval_one(e.args[1], th, ublocks)
    if op == "inner":
        k = len(e.args) // 2
        return sum(
            eval_one(e.args[i], th, ublocks) * eval_one(e.args[k + i], th, ublocks)
            for i in range(k)
        )
    if op == "sqnorm":
        return sum(eval_one(a, th, ublocks) ** 2 for a in e.args)
    if op == "square":
        v = eval_one(e.args[0], th, ublocks)
        return v * v
    if op == "max":
        return max(eval_one(e.args[0], th, ublocks), eval_one(e.args[1], th, ublocks))
    if op == "abs":
        return abs(eval_one(e.args[0], th, ublocks))
    if op == "plus":
        return max(eval_one(e.args[0], th, ublocks), 0.0)
    if op == "leaky_relu":
        v = eval_one(e.args[0], th, ublocks)
        return v if v >= 0.0 else e.alpha * v
    raise ValueError(f"unknown node op {op!r}")


def eval_many(exprs: Sequence[Expr], th: np.ndarray, ublocks: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([eval_one(e, th, ublocks) for e in exprs], dtype=float)


class Cell(NamedTuple):
    """One-sided Taylor data of a node along a batch of rays.

    ``first`` and ``second`` have shape (m,) for batch width m; ``second``
    is None for first-order evaluations.  ``kinked`` marks columns whose
    subtree hit an active kink; ``bad2`` marks columns whose second-order
    coefficient is outside the supported nesting envelope.
    """

    value: float
    first: np.ndarray
    second: np.ndarray | None
    kinked: np.ndarray
    bad2: np.ndarray | None


def taylor_cells(
    exprs: Sequence[Expr],
    th: np.ndarray,
    ublocks: Sequence[np.ndarray],
    dtheta: np.ndarray,
    dublocks: Sequence[np.ndarray],
    order: int = 1,
    etheta: np.ndarray | None = None,
    eublocks: Sequence[np.ndarray] | None = None,
    ukinked: Sequence[np.ndarray] | None = None,
    ubad2: Sequence[np.ndarray] | None = None,
    stats: dict | None = None,
) -> list[Cell]:
    """Propagate one-sided Taylor data through each expression.

    ``dtheta`` has shape (n, m) and each entry of ``dublocks`` shape
    (N_j, m); the optional ``etheta``/``eublocks`` carry second-order input
    curve coefficients (defaulting to zero).  ``ukinked``/``ubad2`` mark
    layer-input components whose feeding curves are themselves kinked or
    second-order unsupported, so the taint survives chaining across layers.
    ``stats``, when given, collects ``min_gap``: the smallest inactive branch
    gap seen, which callers use to reject configurations too close to a kink
    for finite differencing.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    m = dtheta.shape[1] if dtheta.ndim == 2 else 1
    dtheta = np.asarray(dtheta, dtype=float).reshape(len(th), m)
    want2 = order == 2

    zeros = np.zeros(m)
    false = np.zeros(m, dtype=bool)

    def leaf(
        val: float,
        f: np.ndarray,
        s: np.ndarray | None,
        kinked: np.ndarray | None = None,
        bad2: np.ndarray | None = None,
    ) -> Cell:
        return Cell(
            val,
            f,
            (s if s is not None else zeros) if want2 else None,
            kinked if kinked is not None else false,
            (bad2 if bad2 is not None else false) if want2 else None,
        )

    def note_gap(gap: float) -> None:
        if stats is not None and gap > TIE_TOL:
            stats["min_gap"] = min(stats.get("min_gap", np.inf), gap)

    def combine_max(a: Cell, b: Cell) -> Cell:
        gap = a.value - b.value
        note_gap(abs(gap))
        if gap > TIE_TOL:
            return a
        if gap < -TIE_TOL:
            return b
        # Active value tie: branch selection moves to first order.
        first = np.maximum(a.first, b.first)
        fgap = a.first - b.first
        kink_here = np.abs(fgap) > TIE_TOL
        kinked = a.kinked | b.kinked | kink_here
        second = None
        bad2 = None
        if want2:
            second = np.where(
                fgap > TIE_TOL,
                a.second,
                np.where(fgap < -TIE_TOL, b.second, np.maximum(a.second, b.second)),
            )
            sgap = a.second - b.second
            kinked = kinked | ((~kink_here) & (np.abs(sgap) > TIE_TOL))
            # Tie with a kinked argument is outside the supported envelope.
            bad2 = a.bad2 | b.bad2 | a.kinked | b.kinked
        return Cell(max(a.value, b.value), first, second, kinked, bad2)

    def cell(e: Expr) -> Cell:
        op = e.op
        if op == "const":
            return leaf(e.value, zeros, None)
        if op == "theta":
            return leaf(
                float(th[e.ref]),
                dtheta[e.ref],
                etheta[e.ref] if (want2 and etheta is not None) else None,
            )
        if op == "u":
            j, i = e.layer - 1, e.ref
            return leaf(
                float(ublocks[j][i]),
                dublocks[j][i],
                eublocks[j][i] if (want2 and eublocks is not None) else None,
                ukinked[j][i] if ukinked is not None else None,
                ubad2[j][i] if (want2 and ubad2 is not None) else None,
            )
        if op == "sum":
            cs = [cell(a) for a in e.args]
            return Cell(
                sum(c.value for c in cs),
                sum(c.first for c in cs),
                sum(c.second for c in cs) if want2 else None,
                np.logical_or.reduce([c.kinked for c in cs]),
                np.logical_or.reduce([c.bad2 for c in cs]) if want2 else None,
            )
        if op == "diff":
            a, b = cell(e.args[0]), cell(e.args[1])
            return Cell(
                a.value - b.value,
                a.first - b.first,
                a.second - b.second if want2 else None,
                a.kinked | b.kinked,
                a.bad2 | b.bad2 if want2 else None,
            )
        if op == "scaled":
            a = cell(e.args[0])
            c = e.coeffs[0]
            return Cell(c * a.value, c * a.first, c * a.second if want2 else None, a.kinked, a.bad2)
        if op == "affine":
            if not e.args:
                return leaf(e.const, zeros, None)
            cs = [cell(a) for a in e.args]
            val = e.const + sum(c * x.value for c, x in zip(e.coeffs, cs))
            first = sum(c * x.first for c, x in zip(e.coeffs, cs))
            second = sum(c * x.second for c, x in zip(e.coeffs, cs)) if want2 else None
            kinked = np.logical_or.reduce([x.kinked for x in cs])
            bad2 = np.logical_or.reduce([x.bad2 for x in cs]) if want2 else None
            return Cell(val, first + zeros, second + zeros if want2 else None, kinked, bad2)
        if op == "product":
            a, b = cell(e.args[0]), cell(e.args[1])
            first = a.first * b.value + a.value * b.first
            second = None
            bad2 = None
            if want2:
                second = a.second * b.value + 2.0 * a.first * b.first + a.value * b.second
                bad2 = a.bad2 | b.bad2 | (a.kinked & b.kinked)
            return Cell(a.value * b.value, first, second, a.kinked | b.kinked, bad2)
        if op == "inner":
            k = len(e.args) // 2
            val = 0.0
            first = zeros.copy()
            second = zeros.copy() if want2 else None
            kinked = false.copy()
            bad2 = false.copy() if want2 else None
            for i in range(k):
                a, b = cell(e.args[i]), cell(e.args[k + i])
                val += a.value * b.value
                first = first + a.first * b.value + a.value * b.first
                kinked = kinked | a.kinked | b.kinked
                if want2:
                    second = second + a.second * b.value + 2.0 * a.first * b.first + a.value * b.second
                    bad2 = bad2 | a.bad2 | b.bad2 | (a.kinked & b.kinked)
            return Cell(val, first, second, kinked, bad2)
        if op == "sqnorm":
            val = 0.0
            first = zeros.copy()
            second = zeros.copy() if want2 else None
            kinked = false.copy()
            bad2 = false.copy() if want2 else None
            for arg in e.args:
                a = cell(arg)
                val += a.value * a.value
                first = first + 2.0 * a.value * a.first
                kinked = kinked | a.kinked
                if want2:
                    second = second + 2.0 * a.first * a.first + 2.0 * a.value * a.second
                    bad2 = bad2 | a.bad2 | a.kinked
            return Cell(val, first, second, kinked, bad2)
        if op == "square":
            a = cell(e.args[0])
            first = 2.0 * a.value * a.first
            second = None
            bad2 = None
            if want2:
                second = 2.0 * a.first * a.first + 2.0 * a.value * a.second
                bad2 = a.bad2 | a.kinked
            return Cell(a.value * a.value, first, second, a.kinked, bad2)
        if op == "max":
            return combine_max(cell(e.args[0]), cell(e.args[1]))
        if op == "abs":
            a = cell(e.args[0])
            neg = Cell(-a.value, -a.first, -a.second if want2 else None, a.kinked, a.bad2)
            return combine_max(a, neg)
        if op == "plus":
            a = cell(e.args[0])
            zero = Cell(0.0, zeros, zeros if want2 else None, false, false if want2 else None)
            return combine_max(a, zero)
        if op == "leaky_relu":
            a = cell(e.args[0])
            alt = Cell(
                e.alpha * a.value,
                e.alpha * a.first,
                e.alpha * a.second if want2 else None,
                a.kinked,
                a.bad2,
            )
            return combine_max(a, alt)
        raise ValueError(f"unknown node op {op!r}")

    return [cell(e) for e in exprs]
