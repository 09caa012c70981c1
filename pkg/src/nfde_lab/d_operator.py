"""The non-autonomous difference operator, its history lift, and its inverse.

The operator acts on a history x as

    D(w, x) = B(w) x(0) - sum_k W_k(w) x(-s_k) - integral of the density,

with B and the delayed weights W_k matrices of trigonometric polynomials
over the driving torus and all delays strictly positive. Lifting along the
flow gives the history-to-history map

    (Dhat x)(s) = D(w . s, x_s),

which factors as Bhat o (I - Lhat) with Lhat the delayed part premultiplied
by B^{-1}. When the sampled sup of ||Lhat|| is below one the lift is
invertible and the inverse is the Neumann series sum_n Lhat^n o Bhat^{-1};
truncation depth is chosen a priori from the geometric tail bound.

Sups over the torus are estimated by sampling a uniform phase grid plus a
long orbit; the worst sampled phase is reported alongside the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .base_flow import TorusFlow, TorusPoint, TrigPoly, advance_many, eval_trig_many
from .errors import (
    DimensionMismatchError,
    SingularBError,
    UnstableMarginError,
)
from .history import FunctionHistory, HistoryGrid, TailPolicy, cubic_rows, sup_norm

_SNAP = 1e-9


def const_poly_matrix(values) -> list:
    """Matrix of constant polynomials from a numeric matrix."""
    arr = np.atleast_2d(np.asarray(values, dtype=float))
    return [[TrigPoly.const(v) for v in row] for row in arr]


def identity_poly_matrix(m: int) -> list:
    return const_poly_matrix(np.eye(m))


def eval_poly_matrix_many(mat, thetas: np.ndarray) -> np.ndarray:
    """Evaluate an m x m matrix of polynomials at (n, d) phases -> (n, m, m)."""
    thetas = np.atleast_2d(thetas)
    m = len(mat)
    out = np.empty((thetas.shape[0], m, m))
    for i, row in enumerate(mat):
        if len(row) != m:
            raise DimensionMismatchError("polynomial matrix is not square")
        for j, poly in enumerate(row):
            out[:, i, j] = eval_trig_many(poly, thetas)
    return out


@dataclass(frozen=True)
class MeasureAtom:
    """Point mass of the delayed part: weight matrix at a positive lag."""

    lag: float
    weight: list  # m x m nested list of TrigPoly

    def __post_init__(self):
        if self.lag <= 0:
            raise ValueError("delayed atoms must have strictly positive lag")
        object.__setattr__(self, "lag", float(self.lag))


@dataclass(frozen=True)
class MeasureDensity:
    """Piecewise-constant matrix density on [-n_cells*step, 0).

    Cell l covers (-(l+1)*step, -l*step]; integration uses midpoints.
    """

    values: np.ndarray  # (n_cells, m, m)
    step: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3 or vals.shape[1] != vals.shape[2]:
            raise ValueError("density values must have shape (n_cells, m, m)")
        if self.step <= 0:
            raise ValueError("density step must be positive")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "step", float(self.step))

    @property
    def support(self) -> float:
        return self.values.shape[0] * self.step

    @property
    def midpoints(self) -> np.ndarray:
        return -(np.arange(self.values.shape[0]) + 0.5) * self.step


@dataclass(frozen=True)
class AtomicMeasureFamily:
    """Delayed part of the operator: atoms plus an optional density.

    No atom may sit at lag zero; the instantaneous part belongs to B.
    """

    atoms: tuple = ()
    density: Optional[MeasureDensity] = None

    def __post_init__(self):
        atoms = tuple(self.atoms)
        lags = [a.lag for a in atoms]
        if len(set(lags)) != len(lags):
            raise ValueError("atom lags must be distinct")
        object.__setattr__(self, "atoms", atoms)

    @property
    def support(self) -> float:
        s = max((a.lag for a in self.atoms), default=0.0)
        if self.density is not None:
            s = max(s, self.density.support)
        return s

    def is_empty(self) -> bool:
        return not self.atoms and self.density is None


@dataclass(frozen=True)
class StabilityEstimate:
    """Sampled contraction estimate for the lifted delayed part."""

    lam: float
    k_bound: float
    sup_Binv: float
    sample_count: int
    worst_point: TorusPoint


@dataclass(frozen=True)
class SamplingConfig:
    """Phase-sampling plan: a uniform grid per torus dimension plus one orbit."""

    grid_per_dim: int = 64
    orbit_points: int = 512
    orbit_step: float = 0.37
    origin: Optional[TorusPoint] = None


def sample_thetas(flow: TorusFlow, sampling: Optional[SamplingConfig] = None) -> np.ndarray:
    """Phases used for sup estimation; shape (N, dim)."""
    sampling = sampling or SamplingConfig()
    d = flow.dim
    g = max(1, sampling.grid_per_dim)
    axes = [np.arange(g) / g] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([ax.ravel() for ax in mesh], axis=1)
    origin = sampling.origin or TorusPoint(np.zeros(d))
    ts = (np.arange(sampling.orbit_points) + 1) * sampling.orbit_step
    orbit = advance_many(flow, origin, ts)
    return np.vstack([grid, orbit])


@dataclass(frozen=True)
class DOperatorSpec:
    """Difference operator data: instantaneous matrix, delayed family, flow."""

    m: int
    B: list  # m x m nested list of TrigPoly
    nu: AtomicMeasureFamily
    flow: TorusFlow

    def __post_init__(self):
        if len(self.B) != self.m or any(len(row) != self.m for row in self.B):
            raise DimensionMismatchError("B must be an m x m polynomial matrix")
        for atom in self.nu.atoms:
            if len(atom.weight) != self.m or any(
                len(row) != self.m for row in atom.weight
            ):
                raise DimensionMismatchError("atom weights must be m x m")
        if self.nu.density is not None and self.nu.density.values.shape[1] != self.m:
            raise DimensionMismatchError("density blocks must be m x m")

    @property
    def support(self) -> float:
        return self.nu.support

    def stability(self, sampling: Optional[SamplingConfig] = None, guard: float = 1e-6):
        """Cached stability estimate with the default sampling plan."""
        if sampling is None:
            cached = getattr(self, "_stab_cache", None)
            if cached is not None:
                return cached
            est = stability_margin(self, guard=guard)
            object.__setattr__(self, "_stab_cache", est)
            return est
        return stability_margin(self, sampling, guard=guard)


def _batch_inverse(Bv: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    dets = np.linalg.det(Bv)
    scale = np.maximum(1.0, np.max(np.abs(Bv), axis=(1, 2)) ** Bv.shape[1])
    bad = np.abs(dets) < 1e-14 * scale
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SingularBError(TorusPoint(thetas[i]), float(dets[i]))
    return np.linalg.inv(Bv)


def stability_margin(
    spec: DOperatorSpec,
    sampling: Optional[SamplingConfig] = None,
    guard: float = 1e-6,
) -> StabilityEstimate:
    """Sampled sup of the weighted delayed mass, and the induced norm bound.

    lam is the max over sampled phases of the max row sum of
    sum_k |B^-1 W_k| plus the integrated |B^-1 density|; k_bound is
    sup||B^-1|| / (1 - lam). Raises when lam is not safely below one.
    """
    thetas = sample_thetas(spec.flow, sampling)
    Bv = eval_poly_matrix_many(spec.B, thetas)
    Binv = _batch_inverse(Bv, thetas)
    sup_Binv = float(np.max(np.sum(np.abs(Binv), axis=2)))
    rows = np.zeros((thetas.shape[0], spec.m))
    for atom in spec.nu.atoms:
        Wv = eval_poly_matrix_many(atom.weight, thetas)
        rows += np.sum(np.abs(np.einsum("nab,nbc->nac", Binv, Wv)), axis=2)
    if spec.nu.density is not None:
        dens = spec.nu.density
        for l in range(dens.values.shape[0]):
            prod = np.abs(np.einsum("nab,bc->nac", Binv, dens.values[l]))
            rows += dens.step * np.sum(prod, axis=2)
    per_point = np.max(rows, axis=1)
    idx = int(np.argmax(per_point))
    lam = float(per_point[idx])
    if lam >= 1.0 - guard:
        raise UnstableMarginError(lam)
    return StabilityEstimate(
        lam=lam,
        k_bound=sup_Binv / (1.0 - lam),
        sup_Binv=sup_Binv,
        sample_count=thetas.shape[0],
        worst_point=TorusPoint(thetas[idx]),
    )


def check_monotone_structure(
    spec: DOperatorSpec, sampling: Optional[SamplingConfig] = None
) -> bool:
    """True when B^-1 and every B^-1-weighted delayed block are entrywise
    nonnegative at all sampled phases (the structure that makes the inverse
    lift preserve nonnegativity)."""
    thetas = sample_thetas(spec.flow, sampling)
    Bv = eval_poly_matrix_many(spec.B, thetas)
    Binv = _batch_inverse(Bv, thetas)
    if np.min(Binv) < -1e-12:
        return False
    for atom in spec.nu.atoms:
        Wv = eval_poly_matrix_many(atom.weight, thetas)
        if np.min(np.einsum("nab,nbc->nac", Binv, Wv)) < -1e-12:
            return False
    if spec.nu.density is not None:
        for l in range(spec.nu.density.values.shape[0]):
            prod = np.einsum("nab,bc->nac", Binv, spec.nu.density.values[l])
            if np.min(prod) < -1e-12:
                return False
    return True


def eval_D(spec: DOperatorSpec, p: TorusPoint, hist) -> np.ndarray:
    """Apply the operator at one phase: B(w) x(0) minus the delayed mass."""
    if hist.m != spec.m:
        raise DimensionMismatchError(
            f"history dim {hist.m} does not match operator dim {spec.m}"
        )
    th = p.theta[None, :]
    out = eval_poly_matrix_many(spec.B, th)[0] @ hist.sample_at(0.0)
    for atom in spec.nu.atoms:
        Wv = eval_poly_matrix_many(atom.weight, th)[0]
        out -= Wv @ hist.sample_at(-atom.lag)
    if spec.nu.density is not None:
        dens = spec.nu.density
        vals = hist.sample_many(dens.midpoints)  # (L, m)
        out -= dens.step * np.einsum("lab,lb->a", dens.values, vals)
    return out


def eval_Dhat_segment(
    spec: DOperatorSpec, p: TorusPoint, hist: HistoryGrid, depth: int
) -> HistoryGrid:
    """Lift along the flow: node j holds D(w . (-j h), x_{-j h}), j = 0..depth."""
    if hist.m != spec.m:
        raise DimensionMismatchError(
            f"history dim {hist.m} does not match operator dim {spec.m}"
        )
    if depth < 1:
        raise ValueError("depth must be at least 1")
    h = hist.step
    s_nodes = -h * np.arange(depth + 1)
    thetas = advance_many(spec.flow, p, s_nodes)
    Bv = eval_poly_matrix_many(spec.B, thetas)
    out = np.einsum("jab,jb->ja", Bv, hist.sample_many(s_nodes))
    for atom in spec.nu.atoms:
        Wv = eval_poly_matrix_many(atom.weight, thetas)
        out -= np.einsum("jab,jb->ja", Wv, hist.sample_many(s_nodes - atom.lag))
    if spec.nu.density is not None:
        dens = spec.nu.density
        for l, mid in enumerate(dens.midpoints):
            vals = hist.sample_many(s_nodes + mid)
            out -= dens.step * np.einsum("ab,jb->ja", dens.values[l], vals)
    return HistoryGrid(h, out, hist.tail)


def _shift_rows(vals: np.ndarray, off: float, tail: TailPolicy) -> np.ndarray:
    """Rows of `vals` re-read at index j + off; beyond the end, tail policy."""
    K = vals.shape[0]
    tail_row = vals[-1] if tail is TailPolicy.CONSTANT else np.zeros(vals.shape[1])
    io = int(round(off))
    if abs(off - io) <= _SNAP * max(1.0, abs(off)):
        if io == 0:
            return vals.copy()
        out = np.empty_like(vals)
        if io < K:
            out[: K - io] = vals[io:]
            out[K - io :] = tail_row
        else:
            out[:] = tail_row
        return out
    pos = np.arange(K) + off
    out = np.empty_like(vals)
    inside = pos <= K - 1 + _SNAP
    out[~inside] = tail_row
    if np.any(inside):
        out[inside] = cubic_rows(vals, np.clip(pos[inside], 0.0, K - 1))
    return out


def invert_Dhat(
    spec: DOperatorSpec,
    p: TorusPoint,
    yhat: HistoryGrid,
    tol: float,
    n_terms: Optional[int] = None,
) -> HistoryGrid:
    """Invert the lift by the truncated Neumann series.

    The series is evaluated on a working grid extended far enough into the
    past that every returned node is free of tail effects; the returned
    horizon exceeds the input's by the measure support, so a round trip
    through eval_Dhat_segment at the input depth stays within tol plus
    interpolation error.
    """
    if spec.m != yhat.m:
        raise DimensionMismatchError(
            f"target dim {yhat.m} does not match operator dim {spec.m}"
        )
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    est = spec.stability()
    lam = est.lam
    h = yhat.step
    Jy = yhat.J
    ynorm = sup_norm(yhat)
    S = spec.support
    n_s = int(np.ceil(S / h - _SNAP)) if S > 0 else 0
    if n_terms is not None:
        N = max(0, int(n_terms))
    elif lam <= 0.0 or ynorm == 0.0 or spec.nu.is_empty():
        N = 0
    else:
        target = tol * (1.0 - lam) / (est.sup_Binv * ynorm)
        N = 0 if target >= 1.0 else int(np.ceil(np.log(target) / np.log(lam)))
    J_ret = Jy + n_s
    J_work = J_ret + N * n_s
    s_nodes = -h * np.arange(J_work + 1)
    y_ext = yhat.sample_many(s_nodes)
    thetas = advance_many(spec.flow, p, s_nodes)
    Bv = eval_poly_matrix_many(spec.B, thetas)
    Binv = _batch_inverse(Bv, thetas)
    term = np.einsum("jab,jb->ja", Binv, y_ext)
    acc = term.copy()
    if N > 0:
        atom_data = [
            (atom.lag / h, eval_poly_matrix_many(atom.weight, thetas))
            for atom in spec.nu.atoms
        ]
        dens = spec.nu.density
        for _ in range(N):
            z = np.zeros_like(term)
            for off, Wv in atom_data:
                z += np.einsum("jab,jb->ja", Wv, _shift_rows(term, off, yhat.tail))
            if dens is not None:
                for l, mid in enumerate(dens.midpoints):
                    shifted = _shift_rows(term, -mid / h, yhat.tail)
                    z += dens.step * np.einsum("ab,jb->ja", dens.values[l], shifted)
            term = np.einsum("jab,jb->ja", Binv, z)
            acc += term
    return HistoryGrid(h, acc[: J_ret + 1], yhat.tail)


def dstar_eval(
    spec: DOperatorSpec, p: TorusPoint, yhat: HistoryGrid, tol: float = 1e-8
) -> np.ndarray:
    """Point evaluation of the inverse lift at offset zero."""
    return invert_Dhat(spec, p, yhat, tol).samples[0]


def extract_atom_at_zero(spec: DOperatorSpec, p: TorusPoint, rho: float) -> np.ndarray:
    """Recover the instantaneous matrix by probing with short plateau functions.

    The probe is 1 on (-rho, 0], falls linearly to 0 on (-2 rho, -rho], and
    vanishes earlier; column i is the operator applied to probe * e_i. For
    atom-only delayed parts with 2 rho below the smallest lag this equals
    B(w) exactly.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")

    def phi(s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= -2.0 * rho, 0.0, np.where(s <= -rho, s / rho + 2.0, 1.0))

    out = np.empty((spec.m, spec.m))
    for i in range(spec.m):
        e = np.zeros(spec.m)
        e[i] = 1.0
        probe = FunctionHistory(lambda s, e=e: phi(s)[:, None] * e[None, :], spec.m)
        out[:, i] = eval_D(spec, p, probe)
    return out
