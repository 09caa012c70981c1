"""Torus rotations and trigonometric coefficient maps.

Every model in this package is driven by a rotation flow on a d-torus:
phases advance linearly at fixed frequencies and are reduced modulo one.
Coefficients that vary with the driving phase (neutral-term gains,
transport gains, inflows) are real trigonometric polynomials evaluated
along the rotation.

Phases are stored in cycles, i.e. in [0, 1), so modular reduction stays
exact for decimal inputs. Minimality of the rotation requires the
frequencies to be rationally independent together with 1; that is the
caller's obligation and is not machine-checked. The shipped default
GOLDEN_FREQ = (sqrt(5) - 1) / 2 satisfies it in one dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError

GOLDEN_FREQ = (np.sqrt(5.0) - 1.0) / 2.0


def _frozen_array(values, dtype=float, ndim=None):
    arr = np.array(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TorusFlow:
    """Rotation flow on the d-torus, d = len(freqs)."""

    freqs: np.ndarray

    def __post_init__(self):
        freqs = _frozen_array(np.atleast_1d(self.freqs), ndim=1)
        if freqs.size < 1:
            raise ValueError("at least one frequency is required")
        if not np.all(np.isfinite(freqs)):
            raise ValueError("frequencies must be finite")
        object.__setattr__(self, "freqs", freqs)

    @property
    def dim(self) -> int:
        return self.freqs.size


@dataclass(frozen=True)
class TorusPoint:
    """A phase on the torus, componentwise reduced to [0, 1)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.mod(np.atleast_1d(np.asarray(self.theta, dtype=float)), 1.0)
        object.__setattr__(self, "theta", _frozen_array(theta, ndim=1))

    @property
    def dim(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class TrigPoly:
    """Real trigonometric polynomial on the torus.

    value(theta) = constant
                 + sum_k [cos_coeffs[k] * cos(2*pi*<k_vecs[k], theta>)
                        + sin_coeffs[k] * sin(2*pi*<k_vecs[k], theta>)]

    An empty term list represents a constant map and is dimension-agnostic.
    """

    constant: float = 0.0
    k_vecs: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=int))
    cos_coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sin_coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.k_vecs, dtype=int))
        c = np.atleast_1d(np.asarray(self.cos_coeffs, dtype=float))
        s = np.atleast_1d(np.asarray(self.sin_coeffs, dtype=float))
        if k.shape[0] != c.size or c.size != s.size:
            raise ValueError("k_vecs, cos_coeffs, sin_coeffs must have equal length")
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "k_vecs", _frozen_array(k, dtype=int, ndim=2))
        object.__setattr__(self, "cos_coeffs", _frozen_array(c, ndim=1))
        object.__setattr__(self, "sin_coeffs", _frozen_array(s, ndim=1))

    @classmethod
    def const(cls, value: float) -> "TrigPoly":
        return cls(constant=float(value))

    @classmethod
    def from_terms(cls, constant, terms) -> "TrigPoly":
        """Build from [(k_vec, cos_coeff, sin_coeff), ...]."""
        if not terms:
            return cls(constant=constant)
        ks = np.array([np.atleast_1d(t[0]) for t in terms], dtype=int)
        cs = np.array([t[1] for t in terms], dtype=float)
        ss = np.array([t[2] for t in terms], dtype=float)
        return cls(constant=constant, k_vecs=ks, cos_coeffs=cs, sin_coeffs=ss)

    @property
    def n_terms(self) -> int:
        return self.cos_coeffs.size

    @property
    def dim(self):
        """Torus dimension the terms refer to, or None for pure constants."""
        return None if self.n_terms == 0 else self.k_vecs.shape[1]

    def is_zero(self) -> bool:
        return (
            self.constant == 0.0
            and not np.any(self.cos_coeffs)
            and not np.any(self.sin_coeffs)
        )

    def is_constant(self) -> bool:
        return self.n_terms == 0 or (
            not np.any(self.cos_coeffs) and not np.any(self.sin_coeffs)
        )

    def sup_bound(self) -> float:
        """Certified upper bound: constant + sum(|cos| + |sin|)."""
        return self.constant + float(
            np.sum(np.abs(self.cos_coeffs)) + np.sum(np.abs(self.sin_coeffs))
        )

    def inf_bound(self) -> float:
        """Certified lower bound: constant - sum(|cos| + |sin|)."""
        return self.constant - float(
            np.sum(np.abs(self.cos_coeffs)) + np.sum(np.abs(self.sin_coeffs))
        )


def _check_dim(poly: TrigPoly, dim: int):
    if poly.dim is not None and poly.dim != dim:
        raise DimensionMismatchError(
            f"polynomial over a {poly.dim}-torus evaluated on a {dim}-torus"
        )


def advance(flow: TorusFlow, p: TorusPoint, t: float) -> TorusPoint:
    """Rotate: (theta + t * freqs) mod 1, componentwise."""
    if p.dim != flow.dim:
        raise DimensionMismatchError(
            f"point dim {p.dim} does not match flow dim {flow.dim}"
        )
    return TorusPoint(np.mod(p.theta + t * flow.freqs, 1.0))


def advance_many(flow: TorusFlow, p: TorusPoint, ts) -> np.ndarray:
    """Phases along the orbit at each time in ts; shape (len(ts), dim)."""
    if p.dim != flow.dim:
        raise DimensionMismatchError(
            f"point dim {p.dim} does not match flow dim {flow.dim}"
        )
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    return np.mod(p.theta[None, :] + ts[:, None] * flow.freqs[None, :], 1.0)


def eval_trig_many(poly: TrigPoly, thetas: np.ndarray) -> np.ndarray:
    """Evaluate at an (n, d) array of phases; returns shape (n,)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if poly.n_terms == 0:
        return np.full(thetas.shape[0], poly.constant)
    _check_dim(poly, thetas.shape[1])
    angles = 2.0 * np.pi * (thetas @ poly.k_vecs.T)  # (n, n_terms)
    return (
        poly.constant
        + np.cos(angles) @ poly.cos_coeffs
        + np.sin(angles) @ poly.sin_coeffs
    )


def eval_trig(poly: TrigPoly, x: TorusPoint) -> float:
    """Evaluate at a single torus point."""
    return float(eval_trig_many(poly, x.theta[None, :])[0])


def derivative_along_flow_many(
    poly: TrigPoly, flow: TorusFlow, thetas: np.ndarray
) -> np.ndarray:
    """d/dt of the evaluation along the rotation, at t = 0, for each phase row."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if poly.n_terms == 0:
        return np.zeros(thetas.shape[0])
    _check_dim(poly, thetas.shape[1])
    if thetas.shape[1] != flow.dim:
        raise DimensionMismatchError(
            f"phases of dim {thetas.shape[1]} with a flow of dim {flow.dim}"
        )
    rates = 2.0 * np.pi * (poly.k_vecs @ flow.freqs)  # (n_terms,)
    angles = 2.0 * np.pi * (thetas @ poly.k_vecs.T)
    return (-np.sin(angles) * rates) @ poly.cos_coeffs + (
        np.cos(angles) * rates
    ) @ poly.sin_coeffs


def derivative_along_flow(poly: TrigPoly, flow: TorusFlow, x: TorusPoint) -> float:
    """Chain rule: sum_k 2*pi*<k, freqs> * (-cos_k sin(..) + sin_k cos(..))."""
    return float(derivative_along_flow_many(poly, flow, x.theta[None, :])[0])


def torus_distance(a: TorusPoint, b: TorusPoint) -> float:
    """Max over components of the circle distance between phases."""
    if a.dim != b.dim:
        raise DimensionMismatchError("points live on tori of different dimension")
    d = np.abs(a.theta - b.theta)
    return float(np.max(np.minimum(d, 1.0 - d)))
