"""Exponential-order cones on histories and their lift through the operator.

A quasipositive matrix A (off-diagonal entries nonnegative) and a horizon
define the cone of histories v with v >= 0 and
v(t) >= exp(A (t - s)) v(s) for s <= t inside the horizon. Because
exp(A h) is entrywise nonnegative, checking consecutive grid nodes chains
to every node pair, so membership on a grid costs O(J).

With the infinite horizon the matrix must additionally be Hurwitz; this is
verified exactly for triangular matrices and by the Gershgorin row test
otherwise, unless the caller explicitly vouches for it.

The transformed order compares two histories by lifting both through a
difference operator first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .base_flow import TorusPoint
from .d_operator import DOperatorSpec, eval_Dhat_segment
from .errors import DimensionMismatchError, HorizonError
from .history import HistoryGrid, TailPolicy

_SNAP = 1e-9


def is_quasipositive(A: np.ndarray) -> bool:
    """True iff all off-diagonal entries are >= 0."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    off = A - np.diag(np.diagonal(A))
    return bool(np.all(off >= 0.0))


def matrix_exp(A: np.ndarray, t: float) -> np.ndarray:
    """exp(A t) for t >= 0; diagonal matrices are exponentiated exactly."""
    if t < 0:
        raise ValueError("matrix_exp requires t >= 0")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.any(A - np.diag(np.diagonal(A))):
        return np.diag(np.exp(np.diagonal(A) * t))
    return scipy.linalg.expm(A * t)


def _is_triangular(A: np.ndarray) -> bool:
    return not np.any(np.triu(A, 1)) or not np.any(np.tril(A, -1))


def _certify_hurwitz(A: np.ndarray, assume: bool) -> None:
    if _is_triangular(A):
        if np.all(np.diagonal(A) < 0):
            return
        raise ValueError("infinite-horizon cone needs all eigenvalues negative")
    radii = np.sum(np.abs(A - np.diag(np.diagonal(A))), axis=1)
    if np.all(np.diagonal(A) + radii < 0):
        return
    if assume:
        return
    raise ValueError(
        "cannot certify a negative spectrum for this matrix; "
        "pass assume_hurwitz=True to override"
    )


@dataclass(frozen=True)
class ConeSpec:
    """Cone data: quasipositive matrix and a finite or infinite horizon."""

    A: np.ndarray
    horizon: float = math.inf
    assume_hurwitz: bool = False

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float)).copy()
        if not is_quasipositive(A):
            raise ValueError("cone matrix must be quasipositive")
        if not (self.horizon > 0):
            raise ValueError("cone horizon must be positive")
        if math.isinf(self.horizon):
            _certify_hurwitz(A, self.assume_hurwitz)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def infinite(self) -> bool:
        return math.isinf(self.horizon)


@dataclass(frozen=True)
class OrderReport:
    """Outcome of a membership check.

    min_margin is the most negative slack found (0 when every check holds);
    witness locates the worst violation as (s, t, component).
    """

    ordered: bool
    min_margin: float
    witness: Optional[tuple]


def _raw_cone_margin(v: np.ndarray, cone: ConeSpec, step: float):
    """Smallest slack over the sign check and the consecutive-pair checks."""
    J = v.shape[0] - 1
    expAh = matrix_exp(cone.A, step)
    idx_flat = int(np.argmin(v))
    j_a, c_a = divmod(idx_flat, v.shape[1])
    best = float(v[j_a, c_a])
    witness = (-j_a * step, -j_a * step, c_a)
    if cone.infinite:
        npairs = J
    else:
        npairs = min(J, int(np.floor(cone.horizon / step + _SNAP)))
    if npairs >= 1:
        newer = v[:npairs]
        older = v[1 : npairs + 1]
        slack = newer - older @ expAh.T
        idx = int(np.argmin(slack))
        jp, cp = divmod(idx, v.shape[1])
        worst = float(slack[jp, cp])
        if worst < best:
            best = worst
            witness = (-(jp + 1) * step, -jp * step, cp)
    if cone.infinite:
        # constant tail: one self-pair certifies every pair reaching into it
        tail_slack = v[J] - expAh @ v[J]
        worst = float(np.min(tail_slack))
        if worst < best:
            best = worst
            witness = (-math.inf, -J * step, int(np.argmin(tail_slack)))
    return best, witness


def cone_membership(
    x: HistoryGrid, y: HistoryGrid, cone: ConeSpec, tol_cone: float = 1e-9
) -> OrderReport:
    """Is y - x in the cone, up to tol_cone, on the sampled grid?

    Checks the componentwise sign on the whole grid and the exponential
    decay condition on consecutive nodes within the horizon; chaining
    extends the pairwise condition to all node pairs because exp(A h) is
    entrywise nonnegative.
    """
    if x.m != y.m or cone.m != x.m:
        raise DimensionMismatchError("state dimensions disagree")
    if abs(x.step - y.step) > 1e-12 or x.J != y.J:
        raise DimensionMismatchError("histories must share one grid")
    if not cone.infinite and cone.horizon > x.horizon + _SNAP:
        raise HorizonError(
            f"grid horizon {x.horizon:.6g} does not cover cone horizon {cone.horizon:.6g}"
        )
    v = y.samples - x.samples
    raw, witness = _raw_cone_margin(v, cone, x.step)
    return OrderReport(raw >= -tol_cone, min(0.0, raw), witness)


def transformed_cone_membership(
    dspec: DOperatorSpec,
    p: TorusPoint,
    x: HistoryGrid,
    y: HistoryGrid,
    cone: ConeSpec,
    tol_cone: float = 1e-9,
) -> OrderReport:
    """Membership of the pair after lifting both histories through the operator.

    The lift is evaluated on the part of the grid where it needs no tail
    data: depth = J - ceil(support / step).
    """
    if abs(x.step - y.step) > 1e-12 or x.J != y.J:
        raise DimensionMismatchError("histories must share one grid")
    n_s = int(np.ceil(dspec.support / x.step - _SNAP)) if dspec.support > 0 else 0
    depth = x.J - n_s
    if depth < 1:
        raise HorizonError("history too short to evaluate the lifted order")
    Dx = eval_Dhat_segment(dspec, p, x, depth)
    Dy = eval_Dhat_segment(dspec, p, y, depth)
    return cone_membership(Dx, Dy, cone, tol_cone)


@dataclass(frozen=True)
class ComparisonUpper:
    """A strictly positive cone member used to sandwich bounded data."""

    hist: HistoryGrid
    k0: float


def make_comparison_upper(
    cone: ConeSpec, m: int, step: float = 0.01, horizon: Optional[float] = None
) -> ComparisonUpper:
    """Canonical upper comparison history.

    Infinite horizon: the constant -A^{-1} 1 (requires A invertible, which
    the Hurwitz certification guarantees). Finite horizon rho: the solution
    of v' = A v + 1 started from the constant 1 at -rho, with 1 kept for
    older offsets. Both satisfy the cone conditions with positive slack and
    have all components at least k0 > 0.
    """
    if cone.m != m:
        raise DimensionMismatchError("cone matrix dimension does not match m")
    ones = np.ones(m)
    if cone.infinite:
        val = np.linalg.solve(cone.A, -ones)
        H = horizon if horizon is not None else 1.0
        J = int(np.ceil(H / step - _SNAP))
        rows = np.tile(val, (J + 1, 1))
        k0 = float(np.min(val))
    else:
        rho = cone.horizon
        H = max(horizon if horizon is not None else rho, rho)
        J = int(np.ceil(H / step - _SNAP))
        rows = np.ones((J + 1, m))
        # exp of the augmented block matrix yields the forced solution exactly
        M = np.zeros((2 * m, 2 * m))
        M[:m, :m] = cone.A
        M[:m, m:] = np.eye(m)
        for j in range(J + 1):
            s = -j * step
            tau = s + rho
            if tau <= _SNAP:
                break
            EM = scipy.linalg.expm(M * tau)
            rows[j] = EM[:m, :].sum(axis=1)
        k0 = float(min(np.min(rows), 1.0))
    if k0 <= 0:
        raise ValueError("comparison history is not strictly positive")
    return ComparisonUpper(HistoryGrid(step, rows, TailPolicy.CONSTANT), k0)
