"""Compartmental transport networks and their monotonicity condition checkers.

Material moves between m compartments through pipes with discrete transit
time distributions; each transport rate is a phase-dependent gain times a
fixed shape of the donor content. The neutral-diagonal family couples each
compartment to its own delayed content through a coefficient c_i below one
in absolute size, one delay alpha_i per compartment, and a transit lag
rho_ij per pipe, with no exchange with the environment.

Condition checkers evaluate closed-form inequalities in the gains, the
delayed self-coupling coefficients, and an exponential rate vector a <= 0
over a sampled set of driving phases. Margins are reported per component
and per sub-inequality with the worst sampled phase as witness. Identifiers
G3, G4, G5, G8, G9 name the alternative sufficient conditions accepted by
`check_condition`; they differ in the structural relation they require
between rho_ii and alpha_i and in whether the coefficients c_i must be
differentiable along the flow.

Because transport shapes have closed-form derivative ranges, all margins
here are exact at the sampled phases rather than sampled in the state
variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .base_flow import (
    TorusFlow,
    TorusPoint,
    TrigPoly,
    advance,
    advance_many,
    derivative_along_flow_many,
    eval_trig,
    eval_trig_many,
)
from .d_operator import (
    AtomicMeasureFamily,
    DOperatorSpec,
    MeasureAtom,
    SamplingConfig,
    eval_D,
    identity_poly_matrix,
    invert_Dhat,
    sample_thetas,
)
from .errors import (
    DimensionMismatchError,
    HorizonError,
    StructuralPreconditionError,
)
from .history import HistoryGrid

_SNAP = 1e-9

CONDITIONS = ("G3", "G4", "G5", "G8", "G9")


@dataclass(frozen=True)
class ShapeFn:
    """Shape factor of a transport rate: C^1, nondecreasing, zero at zero.

    identity:   s(v) = v,              derivative range (1, 1)
    sine_bend:  s(v) = v + eps sin v,  derivative range (1-eps, 1+eps)
    saturate:   s(v) = v / (1 + |v|),  derivative range (0, 1)
    """

    kind: str = "identity"
    eps: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "sine_bend", "saturate"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.kind == "sine_bend" and not (0.0 <= self.eps < 1.0):
            raise ValueError("sine_bend needs eps in [0, 1)")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def sine_bend(cls, eps: float):
        return cls("sine_bend", eps)

    @classmethod
    def saturate(cls):
        return cls("saturate")

    def value(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return v
        if self.kind == "sine_bend":
            return v + self.eps * np.sin(v)
        return v / (1.0 + np.abs(v))

    def value_scalar(self, v: float) -> float:
        if self.kind == "identity":
            return v
        if self.kind == "sine_bend":
            return v + self.eps * math.sin(v)
        return v / (1.0 + abs(v))

    def deriv_bounds(self) -> tuple:
        if self.kind == "identity":
            return (1.0, 1.0)
        if self.kind == "sine_bend":
            return (1.0 - self.eps, 1.0 + self.eps)
        return (0.0, 1.0)


@dataclass(frozen=True)
class TransportSpec:
    """Transport rate g(w, v) = gain(w) * shape(v); gain must stay >= 0."""

    gain: TrigPoly
    shape: ShapeFn = field(default_factory=ShapeFn.identity)

    def is_zero(self) -> bool:
        return self.gain.is_zero()

    def eval_at(self, thetas: np.ndarray, v) -> np.ndarray:
        return eval_trig_many(self.gain, thetas) * self.shape.value(v)

    @classmethod
    def zero(cls):
        return cls(TrigPoly.const(0.0))

    @classmethod
    def linear(cls, gain) -> "TransportSpec":
        if not isinstance(gain, TrigPoly):
            gain = TrigPoly.const(gain)
        return cls(gain, ShapeFn.identity())


@dataclass(frozen=True)
class PipeSpec:
    """Discrete transit-time distribution: positive weights at lags, summing to 1."""

    atoms: tuple = ((0.0, 1.0),)

    def __post_init__(self):
        atoms = tuple((float(r), float(w)) for r, w in self.atoms)
        if not atoms:
            raise ValueError("a pipe needs at least one atom")
        if any(r < 0 for r, _ in atoms):
            raise ValueError("transit lags must be >= 0")
        if any(w <= 0 for _, w in atoms):
            raise ValueError("transit weights must be positive")
        if abs(sum(w for _, w in atoms) - 1.0) > 1e-12:
            raise ValueError("transit weights must sum to 1")
        object.__setattr__(self, "atoms", atoms)

    @property
    def max_lag(self) -> float:
        return max(r for r, _ in self.atoms)

    @classmethod
    def instant(cls):
        return cls(((0.0, 1.0),))

    @classmethod
    def delta(cls, lag: float):
        return cls(((float(lag), 1.0),))


def _as_transport_grid(transports, m: int):
    grid = tuple(tuple(row) for row in transports)
    if len(grid) != m or any(len(row) != m for row in grid):
        raise DimensionMismatchError("transports must form an m x m grid")
    return grid


@dataclass(frozen=True)
class CompartmentalSystem:
    """General network: transports g_ij (from j into i), pipes, in/outflows.

    The balance law for compartment i reads

        d/dt D_i(w . t, z_t) = -g_0i(w . t, z_i) - sum_j g_ji(w . t, z_i)
                               + sum_j sum_pipe w_k g_ij(w . (t - r_k), z_j(t - r_k))
                               + I_i(w . t).
    """

    m: int
    transports: tuple  # [i][j] -> TransportSpec, flow from j into i
    outflows: tuple  # per compartment, toward the environment
    inflows: tuple  # per compartment, TrigPoly
    pipes: tuple  # [i][j] -> PipeSpec for the j -> i pipe
    dspec: DOperatorSpec
    flow: TorusFlow

    def __post_init__(self):
        object.__setattr__(self, "transports", _as_transport_grid(self.transports, self.m))
        pipes = tuple(tuple(row) for row in self.pipes)
        if len(pipes) != self.m or any(len(row) != self.m for row in pipes):
            raise DimensionMismatchError("pipes must form an m x m grid")
        object.__setattr__(self, "pipes", pipes)
        if len(self.outflows) != self.m or len(self.inflows) != self.m:
            raise DimensionMismatchError("outflows and inflows must have length m")
        object.__setattr__(self, "outflows", tuple(self.outflows))
        object.__setattr__(self, "inflows", tuple(self.inflows))
        if self.dspec.m != self.m:
            raise DimensionMismatchError("operator dimension does not match m")
        self.dspec.stability()  # raises when the delayed part is not a contraction

    @property
    def max_pipe_lag(self) -> float:
        lags = [
            self.pipes[i][j].max_lag
            for i in range(self.m)
            for j in range(self.m)
            if not self.transports[i][j].is_zero()
        ]
        return max(lags, default=0.0)

    def is_closed(self) -> bool:
        return all(t.is_zero() for t in self.outflows) and all(
            p.is_zero() for p in self.inflows
        )


def _induced_dspec(m, c, alpha, flow) -> DOperatorSpec:
    zero = TrigPoly.const(0.0)
    by_lag: dict = {}
    for i in range(m):
        if c[i].is_zero():
            continue
        by_lag.setdefault(float(alpha[i]), []).append(i)
    atoms = []
    for lag, idxs in sorted(by_lag.items()):
        weight = [[zero] * m for _ in range(m)]
        for i in idxs:
            weight[i][i] = c[i]
        atoms.append(MeasureAtom(lag, weight))
    return DOperatorSpec(m, identity_poly_matrix(m), AtomicMeasureFamily(tuple(atoms)), flow)


@dataclass(frozen=True)
class NeutralDiagSystem:
    """Closed network whose operator couples each z_i to its own delayed value:

        D_i(w, x) = x_i(0) - c_i(w) x_i(-alpha_i),   0 <= c_i(w) < 1.

    Setting g6=True additionally demands sum_i c_i(w) < 1 at the sampled
    phases, which the differentiable-coefficient conditions (G8, G9) need.
    """

    m: int
    c: tuple  # per-compartment TrigPoly
    alpha: np.ndarray
    rho: np.ndarray  # (m, m) transit lags, rho[i][j] for the j -> i pipe
    transports: tuple
    flow: TorusFlow
    g6: bool = False

    def __post_init__(self):
        if len(self.c) != self.m:
            raise DimensionMismatchError("need one coefficient per compartment")
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy()
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float)).copy()
        if alpha.shape != (self.m,):
            raise DimensionMismatchError("alpha must have shape (m,)")
        if rho.shape != (self.m, self.m):
            raise DimensionMismatchError("rho must have shape (m, m)")
        if np.any(alpha <= 0):
            raise StructuralPreconditionError("alpha must be strictly positive")
        if np.any(rho < 0):
            raise StructuralPreconditionError("rho must be nonnegative")
        alpha.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "transports", _as_transport_grid(self.transports, self.m))
        object.__setattr__(self, "c", tuple(self.c))
        thetas = sample_thetas(self.flow)
        cvals = np.stack([eval_trig_many(ci, thetas) for ci in self.c], axis=1)
        if np.any(cvals < -1e-12):
            raise StructuralPreconditionError("coefficients c_i must be >= 0")
        if self.g6:
            if np.any(cvals.sum(axis=1) >= 1.0 - 1e-12):
                raise StructuralPreconditionError(
                    "sum of c_i must stay below 1 when g6 is requested"
                )
        elif np.any(cvals >= 1.0 - 1e-12):
            raise StructuralPreconditionError("each c_i must stay below 1")
        object.__setattr__(self, "_c_sup", np.max(cvals, axis=0))
        object.__setattr__(self, "_c_inf", np.min(cvals, axis=0))
        dspec = _induced_dspec(self.m, self.c, alpha, self.flow)
        zero_t = TransportSpec.zero()
        zero_p = TrigPoly.const(0.0)
        pipes = tuple(
            tuple(PipeSpec.delta(rho[i][j]) for j in range(self.m))
            for i in range(self.m)
        )
        comp = CompartmentalSystem(
            m=self.m,
            transports=self.transports,
            outflows=(zero_t,) * self.m,
            inflows=(zero_p,) * self.m,
            pipes=pipes,
            dspec=dspec,
            flow=self.flow,
        )
        object.__setattr__(self, "compartmental", comp)

    @property
    def dspec(self) -> DOperatorSpec:
        return self.compartmental.dspec

    @property
    def c_sup(self) -> np.ndarray:
        return self._c_sup

    @property
    def c_inf(self) -> np.ndarray:
        return self._c_inf


def _general(sys) -> CompartmentalSystem:
    return sys.compartmental if isinstance(sys, NeutralDiagSystem) else sys


def eval_F(sys, p: TorusPoint, hist) -> np.ndarray:
    """Net balance rate at one phase from a supplied history."""
    g = _general(sys)
    if hist.m != g.m:
        raise DimensionMismatchError("history dimension does not match the system")
    maxlag = g.max_pipe_lag
    if hasattr(hist, "horizon") and maxlag > hist.horizon + _SNAP:
        raise HorizonError(
            f"history horizon {hist.horizon:.6g} does not cover pipe lag {maxlag:.6g}"
        )
    x0 = hist.sample_at(0.0)
    th0 = p.theta[None, :]
    F = np.zeros(g.m)
    for i in range(g.m):
        total_out = 0.0
        if not g.outflows[i].is_zero():
            total_out += float(g.outflows[i].eval_at(th0, x0[i])[0])
        for j in range(g.m):
            tr = g.transports[j][i]
            if not tr.is_zero():
                total_out += float(tr.eval_at(th0, x0[i])[0])
        F[i] = -total_out + float(eval_trig_many(g.inflows[i], th0)[0])
        for j in range(g.m):
            tr = g.transports[i][j]
            if tr.is_zero():
                continue
            for r, w in g.pipes[i][j].atoms:
                th_r = advance_many(g.flow, p, [-r])
                zjr = hist.sample_at(-r)[j]
                F[i] += w * float(tr.eval_at(th_r, zjr)[0])
    return F


def eval_G(sys, p: TorusPoint, yhat: HistoryGrid, tol: float = 1e-8) -> np.ndarray:
    """Right-hand side of the transformed equation: F after inverting the lift."""
    g = _general(sys)
    x = invert_Dhat(g.dspec, p, yhat, tol)
    return eval_F(g, p, x)


def _transit_integral(g, p, hist, tr, donor, r) -> float:
    """Trapezoid of the in-transit rate over [-r, 0] at the history grid step."""
    h = hist.step
    Q = int(np.floor(r / h + _SNAP))
    s = -h * np.arange(Q + 1)
    thetas = advance_many(g.flow, p, s)
    vals = tr.eval_at(thetas, hist.sample_many(s)[:, donor])
    total = float(np.trapezoid(vals[::-1], dx=h)) if Q >= 1 else 0.0
    rem = r - Q * h
    if rem > _SNAP * max(1.0, r):
        th_r = advance_many(g.flow, p, [-r])
        f_r = float(tr.eval_at(th_r, hist.sample_at(-r)[donor])[0])
        total += 0.5 * rem * (f_r + float(vals[-1]))
    return total


def total_mass(sys, p: TorusPoint, hist) -> float:
    """Stored mass (sum of operator components) plus mass in transit."""
    g = _general(sys)
    maxlag = g.max_pipe_lag
    if hasattr(hist, "horizon") and maxlag > hist.horizon + _SNAP:
        raise HorizonError(
            f"history horizon {hist.horizon:.6g} does not cover pipe lag {maxlag:.6g}"
        )
    total = float(np.sum(eval_D(g.dspec, p, hist)))
    for donor in range(g.m):
        for dest in range(g.m):
            tr = g.transports[dest][donor]
            if tr.is_zero():
                continue
            for r, w in g.pipes[dest][donor].atoms:
                if r <= _SNAP:
                    continue
                total += w * _transit_integral(g, p, hist, tr, donor, r)
    return total


def mass_balance_residual(sys, log) -> np.ndarray:
    """Deviation of the logged mass from the integrated net exchange.

    r(t) = M(t) - M(0) - integral_0^t sum_i (I_i - g_0i(., z_i)); the
    integral uses the trapezoid rule on the log times. Closed systems
    should show r identically zero up to integrator and quadrature error.
    """
    g = _general(sys)
    thetas = advance_many(g.flow, log.p0, log.t)
    net = np.zeros(log.t.size)
    for i in range(g.m):
        net += eval_trig_many(g.inflows[i], thetas)
        if not g.outflows[i].is_zero():
            net -= g.outflows[i].eval_at(thetas, log.z[:, i])
    dt = np.diff(log.t)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * dt * (net[1:] + net[:-1]))])
    return log.M - log.M[0] - integral


@dataclass(frozen=True)
class LipschitzBounds:
    """Derivative ranges of the transports at one phase.

    l_minus[i][j] and l_plus[i][j] bound d g_ij / dv; L_plus[i] sums the
    outgoing bounds l_plus[j][i] over destinations j.
    """

    l_minus: np.ndarray
    l_plus: np.ndarray
    L_plus: np.ndarray


def lipschitz_bounds(sys: NeutralDiagSystem, p: TorusPoint) -> LipschitzBounds:
    m = sys.m
    l_minus = np.zeros((m, m))
    l_plus = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            tr = sys.transports[i][j]
            gain = eval_trig(tr.gain, p)
            if gain < -1e-12:
                raise ValueError(f"negative transport gain at {p} for pair ({i},{j})")
            lo, hi = tr.shape.deriv_bounds()
            l_minus[i, j] = gain * lo
            l_plus[i, j] = gain * hi
    return LipschitzBounds(l_minus, l_plus, l_plus.sum(axis=0))


def c_product(sys: NeutralDiagSystem, p: TorusPoint, i: int, n: int) -> float:
    """Product of c_i along the backward orbit: prod_{j<n} c_i(w . (-j alpha_i))."""
    if n < 0:
        raise ValueError("n must be >= 0")
    prod = 1.0
    for j in range(n):
        prod *= eval_trig(sys.c[i], advance(sys.flow, p, -j * sys.alpha[i]))
    return prod


def pq_sequence(sys: NeutralDiagSystem, p: TorusPoint, i: int, a: float, N: int):
    """Coefficient sequences of the accumulated monotonicity inequality.

    q[0] = -L_plus_i(w) - a and, for n >= 1,

        p[n] = -L_plus_i(w) C_i^n(w)
               + exp(a (alpha_i - rho_ii)) l_minus_ii(w . (-rho_ii)) C_i^{n-1}(w . (-rho_ii))
        q[n] = q[n-1] exp(a alpha_i) + p[n],

    where C_i^n is the backward product of c_i. Returns (p[1..N], q[0..N]).
    """
    if a > 0:
        raise ValueError("a must be <= 0")
    if N < 0:
        raise ValueError("N must be >= 0")
    lb = lipschitz_bounds(sys, p)
    L = lb.L_plus[i]
    alpha_i = sys.alpha[i]
    rho_ii = sys.rho[i][i]
    p_shift = advance(sys.flow, p, -rho_ii)
    lm = lipschitz_bounds(sys, p_shift).l_minus[i, i]
    q = np.empty(N + 1)
    pv = np.empty(N)
    q[0] = -L - a
    fac = math.exp(a * (alpha_i - rho_ii))
    ea = math.exp(a * alpha_i)
    for n in range(1, N + 1):
        pn = -L * c_product(sys, p, i, n) + fac * lm * c_product(sys, p_shift, i, n - 1)
        pv[n - 1] = pn
        q[n] = q[n - 1] * ea + pn
    return pv, q


# --- condition checking ----------------------------------------------------


@dataclass(frozen=True)
class SubMargin:
    name: str
    min_margin: float
    witness: TorusPoint
    strict_everywhere: bool


@dataclass(frozen=True)
class ComponentVerdict:
    index: int
    skipped: bool
    prescribed_a: Optional[float]
    subs: tuple
    passed: bool
    note: str = ""
    n0_max: Optional[int] = None
    tail_certified: Optional[bool] = None


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    a: np.ndarray
    components: tuple
    passed: bool
    notes: tuple


class _Precomp:
    """Phase-sampled ingredients shared across components and trial rates."""

    def __init__(self, sys: NeutralDiagSystem, thetas: np.ndarray):
        self.sys = sys
        self.thetas = thetas
        m = sys.m
        n = thetas.shape[0]
        self.c = np.stack([eval_trig_many(ci, thetas) for ci in sys.c], axis=1)
        lp = np.zeros((n, m, m))
        for i in range(m):
            for j in range(m):
                tr = sys.transports[i][j]
                gain = eval_trig_many(tr.gain, thetas)
                if np.any(gain < -1e-12):
                    raise ValueError(f"negative transport gain for pair ({i},{j})")
                lp[:, i, j] = gain * tr.shape.deriv_bounds()[1]
        self.L_plus = lp.sum(axis=1)  # (n, m): column sums l_plus[j][i]
        self._lm_shift = {}
        self._c_shift = {}
        self._gamma = None

    def l_minus_shifted(self, i: int) -> np.ndarray:
        """l_minus_ii evaluated at phases shifted back by rho_ii."""
        if i not in self._lm_shift:
            rho_ii = self.sys.rho[i][i]
            sh = np.mod(self.thetas - rho_ii * self.sys.flow.freqs[None, :], 1.0)
            tr = self.sys.transports[i][i]
            self._lm_shift[i] = (
                eval_trig_many(tr.gain, sh) * tr.shape.deriv_bounds()[0]
            )
        return self._lm_shift[i]

    def c_shifted(self, i: int, shift: float) -> np.ndarray:
        key = (i, float(shift))
        if key not in self._c_shift:
            sh = np.mod(self.thetas - shift * self.sys.flow.freqs[None, :], 1.0)
            self._c_shift[key] = eval_trig_many(self.sys.c[i], sh)
        return self._c_shift[key]

    def gamma(self) -> np.ndarray:
        if self._gamma is None:
            self._gamma = np.stack(
                [
                    derivative_along_flow_many(ci, self.sys.flow, self.thetas)
                    for ci in self.sys.c
                ],
                axis=1,
            )
        return self._gamma

    def c_products(self, i: int, base_shift: float, count: int) -> np.ndarray:
        """Backward products of c_i from phases shifted by base_shift; (n, count+1)."""
        alpha_i = self.sys.alpha[i]
        shifts = base_shift + alpha_i * np.arange(count)
        n = self.thetas.shape[0]
        vals = np.empty((n, count))
        for k, s in enumerate(shifts):
            vals[:, k] = self.c_shifted(i, s)
        prods = np.ones((n, count + 1))
        if count:
            prods[:, 1:] = np.cumprod(vals, axis=1)
        return prods


def _nmin(x):
    return np.minimum(x, 0.0)


def _check_structural(sys: NeutralDiagSystem, cond: str, active) -> None:
    for i in active:
        rho_ii, alpha_i = sys.rho[i][i], sys.alpha[i]
        if cond == "G3" and abs(rho_ii - 2.0 * alpha_i) > 1e-12:
            raise StructuralPreconditionError(
                f"G3 needs rho_ii = 2 alpha_i for component {i}"
            )
        if cond == "G5" and abs(rho_ii - alpha_i) > 1e-12:
            raise StructuralPreconditionError(
                f"G5 needs rho_ii = alpha_i for component {i}"
            )
        if cond in ("G4", "G9") and rho_ii > alpha_i + 1e-12:
            raise StructuralPreconditionError(
                f"{cond} needs rho_ii <= alpha_i for component {i}"
            )


def _g4_component(pre: _Precomp, i: int, a_i: float, n_check: int):
    """Margins for the accumulated-sequence condition on one component.

    Returns (margins (n,), n0 (n,), found mask, tail_certified).
    """
    sys = pre.sys
    alpha_i, rho_ii = sys.alpha[i], sys.rho[i][i]
    L = pre.L_plus[:, i]
    lm = pre.l_minus_shifted(i)
    fac = math.exp(a_i * (alpha_i - rho_ii))
    ea = math.exp(a_i * alpha_i)
    C = pre.c_products(i, 0.0, n_check)  # (n, n_check+1)
    C_sh = pre.c_products(i, rho_ii, n_check)
    n_pts = C.shape[0]
    pvals = np.empty((n_pts, n_check + 1))
    pvals[:, 0] = np.nan
    for nn in range(1, n_check + 1):
        pvals[:, nn] = -L * C[:, nn] + fac * lm * C_sh[:, nn - 1]
    qvals = np.empty((n_pts, n_check + 1))
    qvals[:, 0] = -L - a_i
    for nn in range(1, n_check + 1):
        qvals[:, nn] = qvals[:, nn - 1] * ea + pvals[:, nn]
    # prefix: all q[0..n-1] >= 0; suffix: all p[n+1..] >= 0
    q_pref_min = np.full((n_pts, n_check + 1), np.inf)
    for nn in range(1, n_check + 1):
        q_pref_min[:, nn] = np.minimum(q_pref_min[:, nn - 1], qvals[:, nn - 1])
    p_suff_min = np.full((n_pts, n_check + 1), np.inf)
    for nn in range(n_check - 1, -1, -1):
        p_suff_min[:, nn] = np.minimum(p_suff_min[:, nn + 1], pvals[:, nn + 1])
    feasible = (q_pref_min >= 0.0) & (qvals > 0.0) & (p_suff_min >= 0.0)
    found = feasible.any(axis=1)
    n0 = np.where(found, np.argmax(feasible, axis=1), -1)
    rows = np.arange(n_pts)
    margins = np.where(
        found,
        np.minimum(
            np.minimum(qvals[rows, n0], p_suff_min[rows, n0]),
            np.where(n0 > 0, q_pref_min[rows, n0], np.inf),
        ),
        -np.inf,
    )
    # sound tail certificate: needs rho_ii = alpha_i or a constant coefficient
    cert_vals = -pre.L_plus[:, i] * sys.c_sup[i] + fac * np.min(lm)
    sound = abs(rho_ii - alpha_i) <= 1e-12 or sys.c[i].is_constant()
    tail_certified = bool(sound and np.min(cert_vals) >= 0.0)
    return margins, n0, found, tail_certified


def condition_margins(
    sys: NeutralDiagSystem,
    cond: str,
    a,
    thetas: np.ndarray,
    n_check: int = 50,
):
    """Per-sampled-phase margin arrays, keyed by sub-inequality name.

    Returns a dict: component index -> dict of name -> (n,) array, with key
    "_g4" mapping to (margins, n0, found, tail_certified) for that variant.
    Components with identically zero c_i are omitted (their conditions are
    vacuous; the canonical rate for them is -sup L_plus - 1).
    """
    if cond not in CONDITIONS:
        raise ValueError(f"unknown condition {cond!r}")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (sys.m,):
        raise DimensionMismatchError("need one rate a_i per component")
    if np.any(a > 0):
        raise ValueError("rates a_i must be <= 0")
    active = [i for i in range(sys.m) if not sys.c[i].is_zero()]
    _check_structural(sys, cond, active)
    pre = _Precomp(sys, thetas)
    if cond in ("G8", "G9"):
        csum = pre.c.sum(axis=1)
        if np.any(csum >= 1.0 - 1e-12):
            raise StructuralPreconditionError(
                f"{cond} needs sum_i c_i < 1 at every sampled phase"
            )
    out = {}
    for i in active:
        alpha_i, rho_ii = sys.alpha[i], sys.rho[i][i]
        L = pre.L_plus[:, i]
        ci = pre.c[:, i]
        entry = {}
        if cond == "G3":
            lm = pre.l_minus_shifted(i)
            c2 = ci * pre.c_shifted(i, alpha_i)
            entry["G3.1"] = (-a[i] - L) * math.exp(a[i] * alpha_i) - L * ci
            entry["G3.2"] = lm - L * c2
        elif cond == "G5":
            entry["G5"] = pre.l_minus_shifted(i) - L * ci
        elif cond == "G8":
            gam = pre.gamma()[:, i]
            entry["G8"] = (
                -L - a[i] + _nmin(a[i] * ci + gam) * math.exp(-a[i] * alpha_i)
            )
        elif cond == "G9":
            gam = pre.gamma()[:, i]
            lm = pre.l_minus_shifted(i)
            entry["G9.1"] = -a[i] - L
            entry["G9.2"] = (
                math.exp(a[i] * rho_ii) * (-a[i] - L)
                + lm
                + math.exp(a[i] * (rho_ii - alpha_i)) * _nmin(a[i] * ci + gam)
            )
        else:  # G4
            entry["_g4"] = _g4_component(pre, i, a[i], n_check)
        out[i] = entry
    return out


def _prescribed_a(sys: NeutralDiagSystem, i: int, thetas: np.ndarray) -> float:
    pre = _Precomp(sys, thetas)
    return float(-np.max(pre.L_plus[:, i]) - 1.0)


def check_condition(
    sys: NeutralDiagSystem,
    cond: str,
    a,
    sampling: Optional[SamplingConfig] = None,
    n_check: int = 50,
    strictness_tol: float = 1e-9,
) -> ConditionReport:
    """Evaluate one sufficient monotonicity condition over sampled phases.

    Reports the minimum margin per component and sub-inequality with the
    worst phase as witness. Components with c_i identically zero are
    skipped as vacuous, with the canonical rate -sup L_plus_i - 1 attached.
    Strictness is flagged when a margin clears strictness_tol everywhere.
    """
    thetas = sample_thetas(sys.flow, sampling)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    margins = condition_margins(sys, cond, a, thetas, n_check)
    components = []
    all_pass = True
    notes = []
    offdiag = [
        (i, j)
        for i in range(sys.m)
        for j in range(sys.m)
        if i != j and not sys.transports[i][j].is_zero() and sys.rho[i][j] > 0
    ]
    if offdiag:
        notes.append(
            "off-diagonal transit lags are not constrained by these conditions "
            f"(present for pairs {offdiag})"
        )
    for i in range(sys.m):
        if i not in margins:
            components.append(
                ComponentVerdict(
                    index=i,
                    skipped=True,
                    prescribed_a=_prescribed_a(sys, i, thetas),
                    subs=(),
                    passed=True,
                    note="coefficient identically zero: condition vacuous",
                )
            )
            continue
        entry = margins[i]
        if cond == "G4":
            marg, n0, found, certified = entry["_g4"]
            idx = int(np.argmin(marg))
            ok = bool(np.all(found) and np.min(marg) >= 0.0)
            sub = SubMargin(
                name="G4",
                min_margin=float(np.min(marg)),
                witness=TorusPoint(thetas[idx]),
                strict_everywhere=bool(np.all(found) and np.min(marg) > strictness_tol),
            )
            note = "" if certified else f"tail verified to depth {n_check} only"
            components.append(
                ComponentVerdict(
                    index=i,
                    skipped=False,
                    prescribed_a=None,
                    subs=(sub,),
                    passed=ok,
                    note=note,
                    n0_max=int(np.max(n0)) if np.all(found) else None,
                    tail_certified=certified,
                )
            )
            all_pass &= ok
            continue
        subs = []
        strict_flags = []
        mins = []
        for name, arr in entry.items():
            idx = int(np.argmin(arr))
            mn = float(arr[idx])
            strict = bool(mn > strictness_tol)
            subs.append(SubMargin(name, mn, TorusPoint(thetas[idx]), strict))
            strict_flags.append(strict)
            mins.append(mn)
        if cond == "G8":
            ok = mins[0] > 0.0
        elif cond == "G5":
            ok = min(mins) >= 0.0
        else:  # G3, G9: all hold, at least one strict everywhere
            ok = min(mins) >= 0.0 and any(strict_flags)
        components.append(
            ComponentVerdict(
                index=i,
                skipped=False,
                prescribed_a=None,
                subs=tuple(subs),
                passed=bool(ok),
            )
        )
        all_pass &= bool(ok)
    return ConditionReport(
        condition=cond,
        a=a,
        components=tuple(components),
        passed=bool(all_pass),
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class SuggestAReport:
    a: np.ndarray
    trials: np.ndarray
    margins: np.ndarray  # (n_trials, m); NaN for skipped components
    prescribed: tuple  # indices that received the canonical rate directly


def suggest_a(
    sys: NeutralDiagSystem,
    cond: str,
    sampling: Optional[SamplingConfig] = None,
    trial_a=None,
    n_check: int = 50,
) -> SuggestAReport:
    """Scan candidate rates a_i <= 0 and keep the best worst-case margin.

    The canonical rate -sup L_plus_i - 1 is always added to the scan. Ties
    within 1e-12 resolve toward zero. Components with c_i identically zero
    receive the canonical rate directly.
    """
    thetas = sample_thetas(sys.flow, sampling)
    if trial_a is None:
        trial_a = np.linspace(-8.0, 0.0, 33)
    trial_a = np.atleast_1d(np.asarray(trial_a, dtype=float))
    if trial_a.size == 0:
        raise ValueError("trial grid must be nonempty")
    if np.any(trial_a > 0):
        raise ValueError("trial rates must be <= 0")
    pre = _Precomp(sys, thetas)
    best = np.zeros(sys.m)
    prescribed = []
    canon = -np.max(pre.L_plus, axis=0) - 1.0
    trials_per_comp = []
    for i in range(sys.m):
        cand = np.unique(np.concatenate([trial_a, [canon[i]]]))
        trials_per_comp.append(cand)
    n_tr = max(c.size for c in trials_per_comp)
    surface = np.full((n_tr, sys.m), np.nan)
    for i in range(sys.m):
        if sys.c[i].is_zero():
            best[i] = canon[i]
            prescribed.append(i)
            continue
        cand = trials_per_comp[i]
        vals = np.empty(cand.size)
        for k, a_i in enumerate(cand):
            a_vec = np.where(np.arange(sys.m) == i, a_i, -0.0)
            entry = condition_margins(sys, cond, a_vec, thetas, n_check)[i]
            if cond == "G4":
                marg, _, found, _ = entry["_g4"]
                vals[k] = float(np.min(marg)) if np.all(found) else -np.inf
            else:
                vals[k] = min(float(np.min(arr)) for arr in entry.values())
        surface[: cand.size, i] = vals
        top = np.max(vals)
        tied = np.nonzero(vals >= top - 1e-12)[0]
        best[i] = float(cand[tied].max())  # toward zero
    return SuggestAReport(
        a=best,
        trials=trial_a,
        margins=surface,
        prescribed=tuple(prescribed),
    )
