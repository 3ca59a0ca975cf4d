"""Panelized quadrature on [0, T] with a geometrically graded terminal tail.

The closed-form coefficient functions develop a boundary layer of width
a/alpha at the horizon when the terminal penalty is large (h2 climbs from
O(a) to alpha inside it), so uniform composite rules cannot be pushed to
tolerance there.  All time integrals in the solvers therefore run on a
grid of uniform panels plus a geometric refinement of the last panel, with
a fixed-degree Chebyshev interpolant integrated exactly on each panel.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as cheb

_N_NODES = 16

# fixed interpolation/antidifferentiation operators on [-1, 1]
_PTS = cheb.chebpts2(_N_NODES)
_FIT = np.linalg.inv(cheb.chebvander(_PTS, _N_NODES - 1))


def _int_matrix() -> np.ndarray:
    out = np.zeros((_N_NODES + 1, _N_NODES))
    for j in range(_N_NODES):
        e = np.zeros(_N_NODES)
        e[j] = 1.0
        anti = cheb.chebint(e, lbnd=-1.0)
        out[:len(anti), j] = anti
    return out


_AINT = _int_matrix()


class TimeGrid:
    """Panel decomposition of [0, T]: uniform knots, graded tail before T."""

    def __init__(self, horizon: float, n_uniform: int, tail_ratio: float = 0.5,
                 tail_min_width: float = 1e-12):
        if horizon <= 0.0 or n_uniform < 2:
            raise ValueError("need horizon > 0 and at least 2 uniform panels")
        uniform = np.linspace(0.0, horizon, n_uniform + 1)
        tail = []
        width = (uniform[-1] - uniform[-2]) * tail_ratio
        while width > tail_min_width * horizon:
            tail.append(horizon - width)
            width *= tail_ratio
        knots = np.concatenate([uniform[:-1], np.sort(tail), [horizon]])
        self.horizon = float(horizon)
        self.n_uniform = int(n_uniform)
        self.knots = np.unique(knots)

    @property
    def uniform_knots(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_uniform + 1)

    def uniform_knot_indices(self) -> np.ndarray:
        idx = np.searchsorted(self.knots, self.uniform_knots)
        return np.clip(idx, 0, len(self.knots) - 1)


class CumulativeIntegral:
    """F(s) = integral of f from 0 to s, evaluable at any s in [0, T].

    Per panel the integrand is sampled at Chebyshev points, interpolated
    exactly, and the antiderivative stored; prefix sums chain the panels.
    Spectrally accurate for integrands smooth within each panel.
    """

    def __init__(self, grid: TimeGrid, f):
        knots = grid.knots
        self._lo = knots[:-1]
        self._hi = knots[1:]
        half = 0.5 * (self._hi - self._lo)
        nodes = half[:, None] * (_PTS + 1.0)[None, :] + self._lo[:, None]
        fv = np.asarray(f(nodes.ravel()), dtype=float).reshape(nodes.shape)
        coeffs = fv @ _FIT.T
        self._anti = half[:, None] * (coeffs @ _AINT.T)
        totals = self._anti.sum(axis=1)  # chebval at +1 is the coefficient sum
        self._prefix = np.concatenate([[0.0], np.cumsum(totals)])

    def __call__(self, s):
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        idx = np.clip(np.searchsorted(self._hi, s_arr, side="left"), 0,
                      len(self._lo) - 1)
        out = np.empty_like(s_arr)
        for i in np.unique(idx):
            m = idx == i
            a, b = self._lo[i], self._hi[i]
            u = np.clip(2.0 * (s_arr[m] - a) / (b - a) - 1.0, -1.0, 1.0)
            out[m] = self._prefix[i] + cheb.chebval(u, self._anti[i])
        return out if np.ndim(s) else float(out[0])

    def at_knots(self) -> np.ndarray:
        return self._prefix.copy()

    @property
    def total(self) -> float:
        return float(self._prefix[-1])


def suffix_weights(knots: np.ndarray, start_index: int) -> np.ndarray:
    """Weights integrating knot samples over [knots[start_index], T].

    Composite three-point Newton-Cotes (Simpson on equal spacings) over
    panel pairs, with a leading trapezoid panel when the count is odd.
    """
    pts = knots[start_index:]
    n = len(pts)
    w = np.zeros(n)
    if n < 2:
        return w
    i = 0
    if (n - 1) % 2 == 1:
        h = pts[1] - pts[0]
        w[0] += 0.5 * h
        w[1] += 0.5 * h
        i = 1
    while i + 2 <= n - 1:
        h0 = pts[i + 1] - pts[i]
        h1 = pts[i + 2] - pts[i + 1]
        s = h0 + h1
        w[i] += s * (2.0 * h0 - h1) / (6.0 * h0)
        w[i + 1] += s**3 / (6.0 * h0 * h1)
        w[i + 2] += s * (2.0 * h1 - h0) / (6.0 * h1)
        i += 2
    return w
