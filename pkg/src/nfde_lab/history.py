"""Finite representations of histories on (-inf, 0].

A history is a bounded, uniformly continuous function of a nonpositive
time offset. Computationally it is held on a uniform grid with a finite
horizon and a tail policy that extends it to the full half line: constant
extension repeats the oldest sample (and keeps the function continuous),
zero extension pads with zeros.

Between nodes the value is the cubic through the four nearest nodes, with
the stencil shifted one-sided at either end of the grid, so polynomials of
degree <= 3 are reproduced on the whole open horizon. Grids with fewer
than four nodes fall back to linear interpolation. Node queries return the
stored sample bit-exactly.

Norms are grid sups: interpolation overshoot between nodes is ignored.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError

_NODE_SNAP = 1e-9  # relative tolerance for treating a query as on-node


class TailPolicy(enum.Enum):
    CONSTANT = "constant"
    ZERO = "zero"


def _cubic_weights(u: np.ndarray):
    """Lagrange weights for nodes at offsets 0..3, parameter u in [0, 3]."""
    w0 = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0
    w1 = u * (u - 2.0) * (u - 3.0) / 2.0
    w2 = -u * (u - 1.0) * (u - 3.0) / 2.0
    w3 = u * (u - 1.0) * (u - 2.0) / 6.0
    return w0, w1, w2, w3


def cubic_rows(values: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Interpolate rows of `values` at fractional row indices `pos`.

    pos must lie in [0, K-1]. Near-integer positions return the row
    exactly; otherwise the cubic through four neighbouring rows is used
    (one-sided at the ends), or the linear interpolant when K < 4.
    """
    K = values.shape[0]
    pos = np.asarray(pos, dtype=float)
    out = np.empty((pos.size,) + values.shape[1:], dtype=values.dtype)
    ipos = np.rint(pos)
    on_node = np.abs(pos - ipos) <= _NODE_SNAP * np.maximum(1.0, np.abs(pos))
    if np.any(on_node):
        out[on_node] = values[ipos[on_node].astype(int)]
    mid = ~on_node
    if np.any(mid):
        p = pos[mid]
        if K >= 4:
            b = np.clip(np.floor(p).astype(int) - 1, 0, K - 4)
            u = p - b
            w0, w1, w2, w3 = _cubic_weights(u)
            vals = (
                w0[:, None] * values[b]
                + w1[:, None] * values[b + 1]
                + w2[:, None] * values[b + 2]
                + w3[:, None] * values[b + 3]
            )
        else:
            j0 = np.clip(np.floor(p).astype(int), 0, K - 2)
            u = (p - j0)[:, None]
            vals = (1.0 - u) * values[j0] + u * values[j0 + 1]
        out[mid] = vals
    return out


@dataclass(frozen=True)
class HistoryGrid:
    """Uniformly sampled history; row j holds the value at offset -j*step."""

    step: float
    samples: np.ndarray
    tail: TailPolicy = TailPolicy.CONSTANT

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.shape[0] < 2:
            raise ValueError("a history grid needs at least two samples")
        if not np.all(np.isfinite(samples)):
            raise ValueError("history samples must be finite")
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "step", float(self.step))

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def J(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def horizon(self) -> float:
        return self.J * self.step

    def _tail_value(self) -> np.ndarray:
        if self.tail is TailPolicy.CONSTANT:
            return self.samples[-1]
        return np.zeros(self.m)

    def sample_many(self, s) -> np.ndarray:
        """Values at each offset in s (all <= 0); shape (len(s), m)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s > _NODE_SNAP):
            raise ValueError("history offsets must be <= 0")
        pos = np.maximum(-s / self.step, 0.0)
        J = self.J
        ipos = np.rint(pos)
        on_node = np.abs(pos - ipos) <= _NODE_SNAP * np.maximum(1.0, pos)
        eff = np.where(on_node, ipos, pos)
        beyond = eff > J
        out = np.empty((s.size, self.m))
        if np.any(beyond):
            out[beyond] = self._tail_value()
        inside = ~beyond
        if np.any(inside):
            out[inside] = cubic_rows(self.samples, eff[inside])
        return out

    def sample_at(self, s: float) -> np.ndarray:
        """Value at a single offset s <= 0; shape (m,)."""
        return self.sample_many([s])[0]


class SegmentView:
    """Window of a history shifted to an earlier origin.

    sample_at(view, s) equals sample_at(base, offset + s).
    """

    def __init__(self, base, offset: float):
        if offset > _NODE_SNAP:
            raise ValueError("segment offset must be <= 0")
        self.base = base
        self.offset = float(offset)

    @property
    def m(self) -> int:
        return self.base.m

    def sample_many(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return self.base.sample_many(self.offset + s)

    def sample_at(self, s: float) -> np.ndarray:
        return self.sample_many([s])[0]


class FunctionHistory:
    """Adapter wrapping an exact vectorized function of the offset."""

    def __init__(self, fn, m: int):
        self.fn = fn
        self.m = int(m)

    def sample_many(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s > _NODE_SNAP):
            raise ValueError("history offsets must be <= 0")
        vals = np.asarray(self.fn(s), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape != (s.size, self.m):
            raise DimensionMismatchError(
                f"history function returned shape {vals.shape}, "
                f"expected {(s.size, self.m)}"
            )
        return vals

    def sample_at(self, s: float) -> np.ndarray:
        return self.sample_many([s])[0]


def from_function(fn, step: float, horizon: float, tail=TailPolicy.CONSTANT) -> HistoryGrid:
    """Sample a vectorized function of the offset onto a fresh grid."""
    J = int(np.ceil(horizon / step - _NODE_SNAP))
    s = -step * np.arange(J + 1)
    vals = np.asarray(fn(s), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return HistoryGrid(step, vals, tail)


def constant_history(value, step: float, horizon: float, tail=TailPolicy.CONSTANT) -> HistoryGrid:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    J = int(np.ceil(horizon / step - _NODE_SNAP))
    return HistoryGrid(step, np.tile(value, (J + 1, 1)), tail)


def resample(hist, step: float, horizon: float, tail=TailPolicy.CONSTANT) -> HistoryGrid:
    """Re-sample any history-like object onto a uniform grid."""
    J = int(np.ceil(horizon / step - _NODE_SNAP))
    s = -step * np.arange(J + 1)
    return HistoryGrid(step, hist.sample_many(s), tail)


def sup_norm(hist: HistoryGrid) -> float:
    """Grid sup of the max-norm over the whole horizon."""
    return float(np.max(np.abs(hist.samples)))


def seminorm_n(hist: HistoryGrid, n: int) -> float:
    """Grid sup of the max-norm over offsets in [-n, 0]."""
    if n <= 0:
        raise ValueError("seminorm index must be positive")
    jmax = min(hist.J, int(np.floor(n / hist.step + _NODE_SNAP)))
    return float(np.max(np.abs(hist.samples[: jmax + 1])))


def compact_open_metric(x: HistoryGrid, y: HistoryGrid, n_max: int = 30) -> float:
    """Truncated weighted-seminorm metric.

    Sums 2^-n * u_n / (1 + u_n) for n = 1..n_max, u_n the grid seminorm of
    the difference over [-n, 0], and closes with the tail bound
    2^-n_max * u / (1 + u) with u the full sup. The result is within
    2^-n_max of the untruncated series.
    """
    if x.m != y.m:
        raise DimensionMismatchError("histories have different state dimensions")
    hc = min(x.step, y.step)
    H = max(x.horizon, y.horizon)
    Jc = int(round(H / hc))
    s = -hc * np.arange(Jc + 1)
    diff = x.sample_many(s) - y.sample_many(s)
    rownorm = np.max(np.abs(diff), axis=1)
    # difference of the two tail values, relevant once both grids are exhausted
    tailnorm = float(np.max(np.abs(x._tail_value() - y._tail_value())))
    prefix = np.maximum.accumulate(rownorm)
    full = max(float(prefix[-1]), tailnorm)
    total = 0.0
    for n in range(1, n_max + 1):
        if n >= H - _NODE_SNAP:
            u = full
        else:
            jcut = min(Jc, int(np.floor(n / hc + _NODE_SNAP)))
            u = float(prefix[jcut])
        total += 0.5**n * u / (1.0 + u)
    total += 0.5**n_max * full / (1.0 + full)
    return total


def shift_append(hist: HistoryGrid, new_samples) -> HistoryGrid:
    """Advance the grid: append samples at the recent end, drop the oldest.

    new_samples are given oldest to newest; the last row becomes the new
    offset-zero sample. Capacity (J + 1 rows) is preserved, so the time
    origin advances by count * step.
    """
    new = np.atleast_2d(np.asarray(new_samples, dtype=float))
    if new.shape[1] != hist.m:
        raise DimensionMismatchError(
            f"appended samples have dim {new.shape[1]}, history has {hist.m}"
        )
    rows = np.vstack([new[::-1], hist.samples])[: hist.J + 1]
    return HistoryGrid(hist.step, rows, hist.tail)


def _fmt(v: float) -> str:
    return format(v, ".17g")


def export_csv(hist: HistoryGrid, path) -> None:
    """Write `s,z1,...,zm` rows with s decreasing from 0."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["s"] + [f"z{i + 1}" for i in range(hist.m)])
    for j in range(hist.J + 1):
        writer.writerow([_fmt(-j * hist.step)] + [_fmt(v) for v in hist.samples[j]])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def import_csv(path, tail=TailPolicy.CONSTANT) -> HistoryGrid:
    """Read a history written by export_csv; validates the uniform grid."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ValueError("history CSV needs a header and at least two rows")
    header = rows[0]
    if header[0] != "s":
        raise ValueError("history CSV must start with an 's' column")
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    s = data[:, 0]
    steps = -np.diff(s)
    if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, steps[0]):
        raise ValueError("history CSV offsets must decrease uniformly from 0")
    if abs(s[0]) > 1e-12:
        raise ValueError("history CSV must start at offset 0")
    return HistoryGrid(float(steps[0]), data[:, 1:], tail)
