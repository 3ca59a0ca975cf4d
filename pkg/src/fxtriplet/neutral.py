"""Ambiguity-neutral closed-form solution and optimal speeds.

The value function separates as cash + H0 with

    H0 = x(q_x + q_z) + y q_y
         - h0_x x - h0_y y
         - h1_x x q_x - h1_y y q_y - h1_z x q_z
         - h2_x x q_x^2 - h2_y y q_y^2 - h2_z x q_z^2,

where the h2 coefficients solve Riccati equations with terminal value
alpha_k, the h1 coefficients a linear ODE driven by the net client-flow
drift, and the h0 terms are quadratures over the horizon.  The z-pair
coefficients ride on the x rate, so their ODEs discount at mu_x.

Optimal speed per pair: nu_k = (h1_k + 2 h2_k q_k) / (2 a_k) -- positive
speed sells the pair, and the speed in one pair never depends on the
inventory of the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import (MU_BRANCH_TOL, PAIRS, ExecutionParams, FlowParams,
                     TripletParams, validate_solvability)
from .quadrature import CumulativeIntegral, TimeGrid


def h2_closed(tau, mu_hat: float, a: float, alpha: float):
    """h2 at time-to-go ``tau``; branch-correct and continuous in mu_hat.

    For mu_hat != 0:  a mu / (1 - upsilon e^{-mu tau}), upsilon = 1 - (a/alpha) mu.
    For mu_hat == 0:  (alpha^-1 + a^-1 tau)^-1.
    alpha = 0 is accepted only with mu_hat = 0 (h2 vanishes identically).
    """
    tau = np.asarray(tau, dtype=float)
    if a <= 0.0:
        raise ValueError("temporary impact a must be positive for the closed forms")
    if alpha == 0.0:
        if abs(mu_hat) >= MU_BRANCH_TOL:
            raise ValueError("alpha = 0 with nonzero quote drift has no solution branch")
        return np.zeros_like(tau)
    if abs(mu_hat) < MU_BRANCH_TOL:
        return 1.0 / (1.0 / alpha + tau / a)
    # 1 - upsilon e^{-mu tau} = -expm1(-mu tau) + (a/alpha) mu e^{-mu tau}
    denom = -np.expm1(-mu_hat * tau) + (a / alpha) * mu_hat * np.exp(-mu_hat * tau)
    return a * mu_hat / denom


def h1_closed(tau, mu_hat: float, a: float, alpha: float, gamma_minus: float):
    """h1 at time-to-go ``tau``; terminal value 0, continuous in mu_hat."""
    tau = np.asarray(tau, dtype=float)
    if a <= 0.0:
        raise ValueError("temporary impact a must be positive for the closed forms")
    if alpha == 0.0:
        if abs(mu_hat) >= MU_BRANCH_TOL:
            raise ValueError("alpha = 0 with nonzero quote drift has no solution branch")
        return np.zeros_like(tau)
    if abs(mu_hat) < MU_BRANCH_TOL:
        return 2.0 * gamma_minus * tau / (1.0 / alpha + tau / a)
    ups = 1.0 - (a / alpha) * mu_hat
    em1 = -np.expm1(-mu_hat * tau)  # 1 - e^{-mu tau}
    denom = em1 + (a / alpha) * mu_hat * np.exp(-mu_hat * tau)
    num = -(1.0 - 2.0 * a * gamma_minus) * mu_hat * tau + ups * em1
    return num / denom


@dataclass(frozen=True)
class PairCoeffs:
    pair: str
    a: float
    alpha: float
    mu_hat: float
    gamma_minus: float
    delta: float
    psi: float


@dataclass(frozen=True)
class H0Evaluation:
    value: float
    dx: float
    dy: float
    dq_x: float
    dq_y: float
    dq_z: float

    def dq(self, pair: str) -> float:
        return getattr(self, f"dq_{pair}")


class HSolution:
    """Closed-form h-coefficients tabulated on the simulation grid.

    h2/h1 are evaluated exactly anywhere from their closed forms; the h0
    quadratures are panel-exact cumulative integrals, refined by doubling
    the uniform panel count until the knot values change by no more than
    ``h0_tol`` relative.
    """

    def __init__(self, triplet: TripletParams, execution: ExecutionParams,
                 flow: FlowParams, horizon: float, n_steps: int = 1000,
                 h0_tol: float = 1e-10):
        report = validate_solvability(triplet, execution)
        if not report.ok:
            raise ValueError(f"solvability condition violated:\n{report}")
        for k in PAIRS:
            if execution.a(k) <= 0.0:
                raise ValueError(f"pair {k}: a must be positive (frictionless "
                                 "pairs have unbounded speed)")
        self.triplet = triplet
        self.execution = execution
        self.flow = flow
        self.horizon = float(horizon)
        self.n_steps = int(n_steps)
        self.pairs = {
            k: PairCoeffs(pair=k, a=execution.a(k), alpha=execution.alpha(k),
                          mu_hat=triplet.mu_hat(k),
                          gamma_minus=flow.gamma_minus(k),
                          delta=flow.delta(k),
                          psi=flow.psi(k, execution))
            for k in PAIRS
        }
        self.grid = self._build_h0(h0_tol)
        # tabulation always sits on the simulation grid, even if the h0
        # quadrature refined itself onto a finer panelization
        self.knots = np.linspace(0.0, self.horizon, self.n_steps + 1)
        self.tables = self._tabulate()

    # -- closed forms -------------------------------------------------------

    def h2(self, pair: str, t):
        c = self.pairs[pair]
        return h2_closed(self.horizon - np.asarray(t, float), c.mu_hat, c.a, c.alpha)

    def h1(self, pair: str, t):
        c = self.pairs[pair]
        return h1_closed(self.horizon - np.asarray(t, float), c.mu_hat, c.a,
                         c.alpha, c.gamma_minus)

    # -- h0 quadratures ------------------------------------------------------

    def _component_integrands(self, pair: str):
        c = self.pairs[pair]
        mu = c.mu_hat

        def disc(u):
            return np.exp(mu * u)

        return (
            lambda u: -disc(u) * c.psi,
            lambda u: disc(u) * c.gamma_minus * self.h1(pair, u),
            lambda u: disc(u) * c.delta * self.h2(pair, u),
            lambda u: -disc(u) * self.h1(pair, u)**2 / (4.0 * c.a),
        )

    def _build_cumulatives(self, grid: TimeGrid) -> dict:
        return {k: [CumulativeIntegral(grid, f)
                    for f in self._component_integrands(k)]
                for k in PAIRS}

    def _build_h0(self, tol: float) -> TimeGrid:
        n = self.n_steps
        grid = TimeGrid(self.horizon, n)
        self._h0_cum = self._build_cumulatives(grid)
        for _ in range(4):
            probe = grid.uniform_knots[:: max(1, grid.n_uniform // 100)]
            ref = np.stack([self.h0_x(probe), self.h0_y(probe)])
            n *= 2
            fine = TimeGrid(self.horizon, n)
            fine_cum = self._build_cumulatives(fine)
            prev_cum, self._h0_cum = self._h0_cum, fine_cum
            new = np.stack([self.h0_x(probe), self.h0_y(probe)])
            scale = np.max(np.abs(new)) + 1e-30
            if np.max(np.abs(new - ref)) <= tol * scale:
                self._h0_cum = prev_cum
                return grid
            grid = fine
        raise RuntimeError("h0 quadrature did not converge under panel doubling")

    def h0_component(self, pair: str, j: int, t):
        """Quadrature component j in 1..4 of the pair's h0 contribution."""
        cum = self._h0_cum[pair][j - 1]
        mu = self.pairs[pair].mu_hat
        t = np.asarray(t, dtype=float)
        return np.exp(-mu * t) * (cum.total - cum(t))

    def _h0_pair(self, pair: str, t):
        t = np.asarray(t, dtype=float)
        cums = self._h0_cum[pair]
        mu = self.pairs[pair].mu_hat
        total = sum(c.total - c(t) for c in cums)
        return np.exp(-mu * t) * total

    def h0_x(self, t):
        return self._h0_pair("x", t) + self._h0_pair("z", t)

    def h0_y(self, t):
        return self._h0_pair("y", t)

    def h0(self, pair: str, t):
        """The h0 weight multiplying the pair's quote rate (z rides on x)."""
        if pair == "y":
            return self.h0_y(t)
        return self.h0_x(t)

    # -- tabulation -----------------------------------------------------------

    def _tabulate(self) -> dict:
        t = self.knots
        cols = {"t": t}
        for k in PAIRS:
            cols[f"h2_{k}"] = np.asarray(self.h2(k, t))
            cols[f"h1_{k}"] = np.asarray(self.h1(k, t))
        cols["h0_x"] = np.asarray(self.h0_x(t))
        cols["h0_y"] = np.asarray(self.h0_y(t))
        return cols

    # -- controls and value ----------------------------------------------------

    def speed(self, pair: str, t, q):
        """Optimal neutral speed; a function of (pair, t, own inventory) only."""
        c = self.pairs[pair]
        return (self.h1(pair, t) + 2.0 * self.h2(pair, t) * np.asarray(q)) \
            / (2.0 * c.a)

    def twap_limit_speed(self, pair: str, t, q):
        """Leading-order speed in the alpha -> infinity limit, (T-t)^-1 q + gamma.

        With client flow on, the limiting strategy has infinite expected
        energy near T and is not admissible; this is the displayed leading
        term only.
        """
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr >= self.horizon):
            raise ValueError("twap limit speed requires t < T")
        return np.asarray(q) / (self.horizon - t_arr) \
            + self.pairs[pair].gamma_minus

    def eval_H0(self, t: float, x: float, y: float, q) -> H0Evaluation:
        """H0 and all first partials at one state point."""
        qx, qy, qz = q
        for name, v in (("t", t), ("x", x), ("y", y), ("qx", qx), ("qy", qy),
                        ("qz", qz)):
            if not math.isfinite(float(v)):
                raise ValueError(f"non-finite state input {name}")
        h1x, h1y, h1z = (float(self.h1(k, t)) for k in PAIRS)
        h2x, h2y, h2z = (float(self.h2(k, t)) for k in PAIRS)
        h0x, h0y = float(self.h0_x(t)), float(self.h0_y(t))
        dx = (qx + qz) - h0x - h1x * qx - h1z * qz - h2x * qx**2 - h2z * qz**2
        dy = qy - h0y - h1y * qy - h2y * qy**2
        value = x * dx + y * dy
        return H0Evaluation(
            value=value, dx=dx, dy=dy,
            dq_x=x * (1.0 - h1x - 2.0 * h2x * qx),
            dq_y=y * (1.0 - h1y - 2.0 * h2y * qy),
            dq_z=x * (1.0 - h1z - 2.0 * h2z * qz),
        )

    def table_columns(self) -> list:
        return ["t", "h2_x", "h2_y", "h2_z", "h1_x", "h1_y", "h1_z",
                "h0_x", "h0_y"]
