"""Tangent and radial cone tests for the lifted feasible set.

At a feasible point z the tangent cone of the layer-equation set is exactly
the set of directions whose u-blocks reproduce the chained first directional
derivatives of the layer maps; lifting a parameter direction through that
recursion always lands inside it.  The radial cone is smaller: staying on
the feasible set along a straight ray additionally forces the second
directional derivative of every layer map to vanish along the direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .dcalc import Direction, check_direction, lift_first
from .model import (
    CompositeProblem,
    DimensionError,
    InfeasiblePointError,
    Point,
    check_point,
    point_from_flat,
    residuals,
)

TANGENT_TOL = 1e-9
LIFT_TOL = 1e-12
RADIAL_TAUS = tuple(10.0**-k for k in range(1, 9))


@dataclass
class ConeMembership:
    in_tangent: bool
    in_radial: bool | None
    violations: list[np.ndarray]
    max_violation: float
    notes: list[str] = field(default_factory=list)


def _require_feasible(problem: CompositeProblem, z: Point) -> None:
    res = residuals(problem, z)
    if not res.feasible:
        raise InfeasiblePointError(
            f"point is infeasible (max residual {res.max_abs:.3e}); cones are defined at feasible points"
        )


def _tangent_violations(problem: CompositeProblem, z: Point, d: Direction) -> list[np.ndarray]:
    dth = d.dtheta.reshape(-1, 1)
    dus = [b.reshape(-1, 1) for b in d.du]
    out = []
    for k in range(1, problem.L + 1):
        cells = ex.taylor_cells(problem.layers[k - 1].exprs, z.theta, z.u, dth, dus, order=1)
        psi_first = np.array([c.first[0] for c in cells])
        out.append(d.du[k - 1] - psi_first)
    return out


def tangent_membership(
    problem: CompositeProblem, z: Point, d: Direction, tol: float = TANGENT_TOL
) -> ConeMembership:
    """Check the chained derivative equations defining the tangent cone."""
    check_point(problem, z)
    check_direction(problem, d)
    _require_feasible(problem, z)
    violations = _tangent_violations(problem, z, d)
    max_v = max(float(np.max(np.abs(v))) if v.size else 0.0 for v in violations)
    return ConeMembership(max_v <= tol, None, violations, max_v, ["radial membership not evaluated"])


def lift_direction(problem: CompositeProblem, z: Point, dtheta: np.ndarray) -> Direction:
    """Unique tangent direction over a parameter direction at a feasible z."""
    check_point(problem, z)
    _require_feasible(problem, z)
    dtheta = np.asarray(dtheta, dtype=float).ravel()
    if dtheta.size != problem.n:
        raise DimensionError(f"d_theta has length {dtheta.size}, expected {problem.n}")
    DU = lift_first(problem, z.theta, dtheta.reshape(-1, 1))
    return Direction(dtheta.copy(), tuple(b[:, 0] for b in DU))


def lift_direction_batch(problem: CompositeProblem, z: Point, DTH: np.ndarray) -> list[np.ndarray]:
    """Batched lift: DTH has one parameter direction per column."""
    check_point(problem, z)
    return lift_first(problem, z.theta, np.asarray(DTH, dtype=float))


def _degree(e: ex.Expr) -> int:
    """Upper bound on polynomial degree in the inputs, kinks transparent."""
    op = e.op
    if op == "const":
        return 0
    if op in ("theta", "u"):
        return 1
    if op in ("sum", "diff", "scaled", "affine", "max", "abs", "plus", "leaky_relu"):
        return max((_degree(a) for a in e.args), default=0)
    if op == "product":
        return _degree(e.args[0]) + _degree(e.args[1])
    if op == "inner":
        k = len(e.args) // 2
        return max(_degree(e.args[i]) + _degree(e.args[k + i]) for i in range(k))
    if op in ("square", "sqnorm"):
        return 2 * max((_degree(a) for a in e.args), default=0)
    raise ValueError(f"unknown node op {op!r}")


def ray_decidable(problem: CompositeProblem) -> bool:
    """True when every layer map is piecewise polynomial of degree at most 2.

    For such maps the residuals along a ray are piecewise quadratics in tau
    with finitely many breakpoints, so feasibility near tau = 0 is eventually
    constant and a decreasing tau grid settles it.
    """
    return all(_degree(e) <= 2 for lm in problem.layers for e in lm.exprs)


def _feasible_at(problem: CompositeProblem, z: Point, d: Direction, tau: float) -> bool:
    moved = point_from_flat(problem, z.flat() + tau * d.flat())
    try:
        return residuals(problem, moved).feasible
    except Exception:
        return False


def radial_membership(
    problem: CompositeProblem,
    z: Point,
    d: Direction,
    taus: tuple[float, ...] = RADIAL_TAUS,
    tol: float = TANGENT_TOL,
) -> ConeMembership:
    """Decide whether the feasible set contains a ray segment along d.

    The test is two-staged.  A nonzero second directional derivative of any
    layer map along d rules membership out (the necessary condition for
    radial directions).  When all of them vanish, feasibility of z + tau*d is
    checked on the tau grid; for problems whose layer maps are piecewise
    polynomial of degree at most 2 the smallest grid points decide, because
    any remaining violation grows linearly out of a kink switch.  Otherwise
    the verdict is unknown.
    """
    membership = tangent_membership(problem, z, d)
    if not membership.in_tangent:
        membership.in_radial = False
        membership.notes = ["not tangent, hence not radial"]
        return membership
    dth = d.dtheta.reshape(-1, 1)
    dus = [b.reshape(-1, 1) for b in d.du]
    notes: list[str] = []
    second_known = True
    for k in range(1, problem.L + 1):
        cells = ex.taylor_cells(problem.layers[k - 1].exprs, z.theta, z.u, dth, dus, order=2)
        if any(bool(c.bad2[0]) for c in cells):
            second_known = False
            notes.append(f"layer {k} second derivative unsupported along d")
            continue
        psi2 = np.array([c.second[0] for c in cells])
        if np.max(np.abs(psi2)) > tol:
            notes.append(f"layer {k} second derivative nonzero along d")
            membership.in_radial = False
            membership.notes = notes
            return membership
    feas = [_feasible_at(problem, z, d, tau) for tau in taus]
    tail = feas[-3:]
    if ray_decidable(problem) and second_known:
        if all(tail):
            membership.in_radial = True
        elif not any(tail):
            membership.in_radial = False
            notes.append("ray leaves the feasible set at every small tau probed")
        else:
            membership.in_radial = None
            notes.append("tau grid did not settle; near a branch switch")
    else:
        membership.in_radial = None
        notes.append("layer maps outside the decidable family; returning unknown")
    membership.notes = notes
    return membership
