"""Exact first and second directional derivatives, and a finite-difference oracle.

All derivative values here are one-sided: for a function f and direction d,

    first  = lim (f(x + tau d) - f(x)) / tau                        (tau -> 0+)
    second = lim (f(x + tau d) - f(x) - tau*first) / (tau^2 / 2)    (tau -> 0+)

The structural routines (``dd_expr``, ``dd_Psi``, ``dd_F``, ``dd_Theta``)
compute these exactly from the expression trees.  ``fd_oracle`` estimates
the same limits from difference quotients with Richardson extrapolation and
is kept free of any shared code path with the structural rules, so the two
can check each other.

Batched variants accept a matrix of directions (one per column) and return
per-column arrays; the scalar API wraps batch width one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .model import (
    FEAS_TOL,
    CompositeProblem,
    DimensionError,
    Point,
    check_beta,
    check_point,
    eval_F,
    eval_g,
    eval_Theta,
    layer_values,
    residuals,
)

# Residual-derivative magnitudes below this count as zero when classifying
# the tie-breaking index sets.
KINK_TOL = 1e-12

ORACLE_TAU0 = 1e-2
ORACLE_HALVINGS = 20
ORACLE_TOL = 1e-6


@dataclass(frozen=True)
class Direction:
    """A lifted direction d = (d_theta, d_u) in block form."""

    dtheta: np.ndarray
    du: tuple[np.ndarray, ...]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dtheta] + [b for b in self.du])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))


def direction_from_flat(problem: CompositeProblem, v: np.ndarray) -> Direction:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != problem.nbar:
        raise DimensionError(f"flat direction has length {v.size}, expected {problem.nbar}")
    blocks = []
    off = problem.n
    for w in problem.widths:
        blocks.append(v[off : off + w].copy())
        off += w
    return Direction(v[: problem.n].copy(), tuple(blocks))


def zeros_direction(problem: CompositeProblem) -> Direction:
    return Direction(np.zeros(problem.n), tuple(np.zeros(w) for w in problem.widths))


def check_direction(problem: CompositeProblem, d: Direction) -> None:
    if d.dtheta.shape != (problem.n,):
        raise DimensionError(f"d_theta has shape {d.dtheta.shape}, expected ({problem.n},)")
    if len(d.du) != problem.L:
        raise DimensionError(f"direction has {len(d.du)} blocks, expected {problem.L}")
    for block, w, k in zip(d.du, problem.widths, range(1, problem.L + 1)):
        if block.shape != (w,):
            raise DimensionError(f"direction block {k} has shape {block.shape}, expected ({w},)")


@dataclass
class DDValue:
    """Function value plus one-sided derivative data along one direction."""

    value: float
    first: float
    second: float | None = None
    smooth: bool = True
    second_reason: str | None = None


@dataclass
class IndexSets:
    """Residual sign classification per layer, and the direction-level split.

    ``plus``/``minus``/``zero`` partition the components of each layer by the
    sign of the residual at z.  When a direction is supplied, ``zero_plus``/
    ``zero_minus``/``zero_zero`` partition each ``zero`` set by the sign of
    the residual's first derivative along the direction.
    """

    plus: list[np.ndarray]
    minus: list[np.ndarray]
    zero: list[np.ndarray]
    zero_plus: list[np.ndarray] | None = None
    zero_minus: list[np.ndarray] | None = None
    zero_zero: list[np.ndarray] | None = None


def _as_batch(problem: CompositeProblem, d: Direction) -> tuple[np.ndarray, list[np.ndarray]]:
    check_direction(problem, d)
    dth = np.asarray(d.dtheta, dtype=float).reshape(problem.n, 1)
    dus = [np.asarray(b, dtype=float).reshape(-1, 1) for b in d.du]
    return dth, dus


def _stack(cells: Sequence[ex.Cell], attr: str) -> np.ndarray:
    return np.array([getattr(c, attr) for c in cells])


def _pick(first: np.ndarray, second, bad, kinked, value: float, order: int, col: int = 0) -> DDValue:
    out = DDValue(value, float(first[col]), smooth=not bool(kinked[col]))
    if order == 2:
        if bad is not None and bool(bad[col]):
            out.second = None
            out.second_reason = "second order unsupported for this nesting at this point"
        else:
            out.second = float(second[col])
    return out


# ---------------------------------------------------------------------------
# Plain expressions over the parameter space


def dd_expr(e: ex.Expr, x: np.ndarray, d: np.ndarray, order: int = 1) -> DDValue:
    """Directional derivatives of a single expression over parameter leaves."""
    x = np.asarray(x, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    if x.shape != d.shape:
        raise DimensionError("point and direction dimensions differ")
    cell = ex.taylor_cells([e], x, [], d.reshape(-1, 1), [], order=order)[0]
    return _pick(cell.first, cell.second, cell.bad2, cell.kinked, cell.value, order)


def dd_expr_batch(e: ex.Expr, x: np.ndarray, D: np.ndarray, order: int = 1) -> ex.Cell:
    x = np.asarray(x, dtype=float).ravel()
    return ex.taylor_cells([e], x, [], np.asarray(D, dtype=float), [], order=order)[0]


# ---------------------------------------------------------------------------
# Lifted objective F and penalized objective Theta


def dd_F_batch(problem: CompositeProblem, z: Point, DTH: np.ndarray, DU: Sequence[np.ndarray], order: int = 1):
    """Batched F derivatives: returns (first, second, bad, kinked) arrays."""
    gcell = ex.taylor_cells([problem.outer], z.theta, z.u, DTH, DU, order=order)[0]
    first = gcell.first + 2.0 * problem.lam * (z.theta @ DTH)
    second = None
    if order == 2:
        second = gcell.second + 2.0 * problem.lam * np.sum(DTH * DTH, axis=0)
    return first, second, gcell.bad2, gcell.kinked


def dd_F(problem: CompositeProblem, z: Point, d: Direction, order: int = 1) -> DDValue:
    check_point(problem, z)
    dth, dus = _as_batch(problem, d)
    first, second, bad, kinked = dd_F_batch(problem, z, dth, dus, order)
    return _pick(first, second, bad, kinked, eval_F(problem, z), order)


def index_sets(problem: CompositeProblem, z: Point, d: Direction | None = None) -> IndexSets:
    check_point(problem, z)
    res = residuals(problem, z)
    plus, minus, zero = [], [], []
    for rho in res.per_layer:
        plus.append(np.flatnonzero(rho > FEAS_TOL))
        minus.append(np.flatnonzero(rho < -FEAS_TOL))
        zero.append(np.flatnonzero(np.abs(rho) <= FEAS_TOL))
    sets = IndexSets(plus, minus, zero)
    if d is None:
        return sets
    dth, dus = _as_batch(problem, d)
    zp, zm, zz = [], [], []
    for k in range(1, problem.L + 1):
        cells = ex.taylor_cells(problem.layers[k - 1].exprs, z.theta, z.u, dth, dus, order=1)
        w = dus[k - 1][:, 0] - _stack(cells, "first")[:, 0]
        zk = sets.zero[k - 1]
        zp.append(zk[w[zk] > KINK_TOL])
        zm.append(zk[w[zk] < -KINK_TOL])
        zz.append(zk[np.abs(w[zk]) <= KINK_TOL])
    sets.zero_plus, sets.zero_minus, sets.zero_zero = zp, zm, zz
    return sets


def dd_Theta_batch(
    problem: CompositeProblem,
    z: Point,
    DTH: np.ndarray,
    DU: Sequence[np.ndarray],
    beta: np.ndarray,
    order: int = 1,
):
    """Batched Theta derivatives: returns (first, second, bad, kinked) arrays.

    The penalty contribution follows the exact expansion of each l1 term:
    components with strictly signed residual contribute the signed residual
    derivative at first order and the signed negative of the layer map's
    second derivative at second order; components with zero residual
    contribute the absolute residual derivative, with the tie broken by its
    sign at second order.
    """
    first, second, bad, kinked = dd_F_batch(problem, z, DTH, DU, order)
    first = first.copy()
    if order == 2:
        second = second.copy()
        bad = bad.copy()
    kinked = kinked.copy()
    for k in range(1, problem.L + 1):
        cells = ex.taylor_cells(problem.layers[k - 1].exprs, z.theta, z.u, DTH, DU, order=order)
        psi_val = _stack(cells, "value")
        psi_first = _stack(cells, "first")
        rho = z.u[k - 1] - psi_val
        w = DU[k - 1] - psi_first
        pos = rho > FEAS_TOL
        neg = rho < -FEAS_TOL
        zer = ~(pos | neg)
        bk = beta[k - 1]
        first += bk * (
            np.sum(w[pos], axis=0) - np.sum(w[neg], axis=0) + np.sum(np.abs(w[zer]), axis=0)
        )
        kinked = kinked | np.logical_or.reduce(
            [np.abs(w[i]) > KINK_TOL for i in np.flatnonzero(zer)] or [np.zeros(w.shape[1], bool)]
        )
        if order == 2:
            psi_second = _stack(cells, "second")
            bad = bad | np.logical_or.reduce([c.bad2 for c in cells])
            zsel = np.where(
                w > KINK_TOL, -psi_second, np.where(w < -KINK_TOL, psi_second, np.abs(psi_second))
            )
            second += bk * (
                -np.sum(psi_second[pos], axis=0)
                + np.sum(psi_second[neg], axis=0)
                + np.sum(zsel[zer], axis=0)
            )
    return first, second, bad, kinked


def dd_Theta(
    problem: CompositeProblem, z: Point, d: Direction, beta: Sequence[float], order: int = 1
) -> DDValue:
    b = check_beta(problem, beta)
    check_point(problem, z)
    dth, dus = _as_batch(problem, d)
    first, second, bad, kinked = dd_Theta_batch(problem, z, dth, dus, b, order)
    return _pick(first, second, bad, kinked, eval_Theta(problem, z, b), order)


# ---------------------------------------------------------------------------
# Nested objective along curves of lifted blocks


def forward_curves(problem: CompositeProblem, th: np.ndarray, DTH: np.ndarray, order: int = 1):
    """Forward pass with one-sided Taylor data chained through the layers.

    Feeds each layer the value, first and second coefficients of the curves
    tau -> u_j(theta + tau d), so the result describes the nested objective.
    Returns (ublocks, DU, EU, kinked, bad) with EU/bad None at first order.
    """
    m = DTH.shape[1]
    ublocks: list[np.ndarray] = []
    DU: list[np.ndarray] = []
    EU: list[np.ndarray] | None = [] if order == 2 else None
    KU: list[np.ndarray] = []
    BU: list[np.ndarray] | None = [] if order == 2 else None
    eth = np.zeros((problem.n, m)) if order == 2 else None
    for k in range(1, problem.L + 1):
        cells = ex.taylor_cells(
            problem.layers[k - 1].exprs,
            th,
            ublocks,
            DTH,
            DU,
            order=order,
            etheta=eth,
            eublocks=EU,
            ukinked=KU,
            ubad2=BU,
        )
        ublocks.append(_stack(cells, "value"))
        DU.append(_stack(cells, "first"))
        KU.append(_stack(cells, "kinked"))
        if order == 2:
            EU.append(_stack(cells, "second"))
            BU.append(_stack(cells, "bad2"))
    return ublocks, DU, EU, KU, BU


def dd_Psi_batch(problem: CompositeProblem, th: np.ndarray, DTH: np.ndarray, order: int = 1):
    ublocks, DU, EU, KU, BU = forward_curves(problem, th, DTH, order)
    gcell = ex.taylor_cells(
        [problem.outer], th, ublocks, DTH, DU, order=order, eublocks=EU, ukinked=KU, ubad2=BU
    )[0]
    first = gcell.first + 2.0 * problem.lam * (th @ DTH)
    second = None
    if order == 2:
        second = gcell.second + 2.0 * problem.lam * np.sum(DTH * DTH, axis=0)
    kinked = gcell.kinked | np.logical_or.reduce(
        [k.any(axis=0) for k in KU] or [np.zeros(DTH.shape[1], bool)]
    )
    value = eval_g(problem, ublocks) + problem.lam * float(th @ th)
    return value, first, second, gcell.bad2, kinked


def dd_Psi(problem: CompositeProblem, th: np.ndarray, dtheta: np.ndarray, order: int = 1) -> DDValue:
    """Derivatives of the nested objective Psi + lambda*||.||^2 at theta."""
    th = np.asarray(th, dtype=float).ravel()
    dtheta = np.asarray(dtheta, dtype=float).ravel()
    if th.size != problem.n or dtheta.size != problem.n:
        raise DimensionError(f"theta and direction must have length {problem.n}")
    value, first, second, bad, kinked = dd_Psi_batch(problem, th, dtheta.reshape(-1, 1), order)
    return _pick(first, second, bad, kinked, value, order)


def lift_first(problem: CompositeProblem, th: np.ndarray, DTH: np.ndarray) -> list[np.ndarray]:
    """First-order curve coefficients of each block along theta-directions."""
    _, DU, _, _, _ = forward_curves(problem, th, DTH, order=1)
    return DU


# ---------------------------------------------------------------------------
# Finite-difference oracle


@dataclass
class OracleResult:
    value: float
    error: float
    converged: bool
    order: int
    quotients: np.ndarray
    taus: np.ndarray


def fd_oracle(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    d: np.ndarray,
    order: int = 1,
    tau0: float = ORACLE_TAU0,
    halvings: int = ORACLE_HALVINGS,
    tol: float = ORACLE_TOL,
) -> OracleResult:
    """Estimate a one-sided directional derivative from difference quotients.

    First order uses forward quotients; second order uses the one-sided
    three-point quotient (f(x+2*tau*d) - 2f(x+tau*d) + f(x)) / tau^2, which
    shares the limit of the defining quotient without needing the first
    derivative.  A small Neville table extrapolates in tau; the entry with
    the most settled neighborhood wins.  Non-convergence is reported in the
    result, never raised.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    x = np.asarray(x, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    taus = tau0 * 0.5 ** np.arange(halvings)
    f0 = f(x)
    q = np.empty(halvings)
    for k, tau in enumerate(taus):
        if order == 1:
            q[k] = (f(x + tau * d) - f0) / tau
        else:
            q[k] = (f(x + 2.0 * tau * d) - 2.0 * f(x + tau * d) + f0) / (tau * tau)
    # Neville extrapolation, two levels.  An entry's error estimate is its
    # gap to both neighbors (left in the row, up in the column); raw entries
    # are never selected directly, which keeps roundoff plateaus in the raw
    # column from posing as settled values.  Stop once a whole row is far
    # worse than the best seen: smaller tau only adds noise from there.
    best_val, best_err = float(q[0]), np.inf
    prev_row = [float(q[0])]
    for k in range(1, halvings):
        row = [float(q[k])]
        for j in range(1, min(k, 2) + 1):
            w = 2.0**j
            row.append((w * row[j - 1] - prev_row[j - 1]) / (w - 1.0))
        row_best = np.inf
        for j in range(1, len(row)):
            if not (np.isfinite(row[j]) and np.isfinite(row[j - 1]) and np.isfinite(prev_row[j - 1])):
                continue
            err = max(abs(row[j] - row[j - 1]), abs(row[j] - prev_row[j - 1]))
            row_best = min(row_best, err)
            if err <= best_err:
                best_err, best_val = err, row[j]
        if k >= 4 and row_best > 4.0 * best_err + 1e-300:
            break
        prev_row = row
    converged = bool(best_err <= tol * (1.0 + abs(best_val)))
    return OracleResult(float(best_val), float(best_err), converged, order, q, taus)


def ray_quotients(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    v_fn: Callable[[float], np.ndarray],
    first_fn: Callable[[np.ndarray], float],
    taus: Sequence[float],
    order: int = 2,
) -> np.ndarray:
    """Raw defining quotients along tau -> x + tau * v(tau).

    For order 2 this is (f(x + tau v) - f(x) - tau * first_fn(v)) / (tau^2/2)
    with v = v_fn(tau); the direction may move with tau, which is exactly the
    regime where one-sided second derivatives can fail to be limits of
    moving-direction quotients.  ``first_fn`` must supply the exact first
    directional derivative at x for the given direction.
    """
    x = np.asarray(x, dtype=float).ravel()
    f0 = f(x)
    out = np.empty(len(taus))
    for k, tau in enumerate(taus):
        v = np.asarray(v_fn(tau), dtype=float).ravel()
        if order == 1:
            out[k] = (f(x + tau * v) - f0) / tau
        else:
            out[k] = (f(x + tau * v) - f0 - tau * first_fn(v)) / (tau * tau / 2.0)
    return out
