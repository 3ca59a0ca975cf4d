"""Trading strategies as precomputed per-knot tables.

A strategy is a pure function of the step index and current state.  The
neutral rule is affine in own inventory, nu_k = (h1_k + 2 h2_k Q_k)/(2 a_k);
the robust rule adds -phi d_{q_k}H1 / (2 a_k khat), which couples every
pair to all three inventories and both rates.  The worst-case drift
adjustments kappa are evaluated alongside for recording; they do not feed
the simulated dynamics, which run under the statistical measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .config import RunConfig
from .neutral import HSolution
from .params import PAIRS
from .robust import RobustCorrection

STRATEGY_NAMES = ("neutral", "robust", "illiquid-only")


@dataclass
class RobustTables:
    c11: np.ndarray
    c12: np.ndarray
    c13: np.ndarray
    d11x: np.ndarray
    d11z: np.ndarray
    d12y: np.ndarray
    d13x: np.ndarray
    d13z: np.ndarray
    d13y: np.ndarray


@dataclass
class StrategyTables:
    """Per-knot coefficient arrays; picklable, shared read-only by workers."""

    phi: float
    knots: np.ndarray
    lin: np.ndarray        # (K, 3) h1_k/(2 a_k), columns x, y, z
    quad: np.ndarray       # (K, 3) h2_k/a_k
    h1: np.ndarray         # (K, 3)
    h2: np.ndarray         # (K, 3)
    h00x: np.ndarray
    h00y: np.ndarray
    inv2a: np.ndarray      # (3,)
    sigma_x: float
    sigma_y: float
    sigma_z: float
    rho: float
    robust: RobustTables | None = None

    def controls(self, j: int, X, Y, Qx, Qy, Qz, want_kappa: bool):
        nux = self.lin[j, 0] + self.quad[j, 0] * Qx
        nuy = self.lin[j, 1] + self.quad[j, 1] * Qy
        nuz = self.lin[j, 2] + self.quad[j, 2] * Qz
        phi = self.phi
        rb = self.robust
        kx = ky = kz = 0.0
        if phi != 0.0 and rb is not None:
            d11x = P.polyval2d(Qx, Qz, rb.d11x[j])
            d11z = P.polyval2d(Qx, Qz, rb.d11z[j])
            d12y = P.polyval(Qy, rb.d12y[j])
            d13x = P.polyval3d(Qx, Qz, Qy, rb.d13x[j])
            d13z = P.polyval3d(Qx, Qz, Qy, rb.d13z[j])
            d13y = P.polyval3d(Qx, Qz, Qy, rb.d13y[j])
            nux = nux - phi * (d11x * X + d13x * Y) * self.inv2a[0]
            nuy = nuy - phi * (d12y * Y + d13y * X) * self.inv2a[1]
            nuz = nuz - phi * (d11z * X + d13z * Y) * self.inv2a[2]
        if want_kappa and phi != 0.0:
            dH0x = ((Qx + Qz) - self.h00x[j]
                    - self.h1[j, 0] * Qx - self.h1[j, 2] * Qz
                    - self.h2[j, 0] * Qx**2 - self.h2[j, 2] * Qz**2)
            dH0y = (Qy - self.h00y[j] - self.h1[j, 1] * Qy
                    - self.h2[j, 1] * Qy**2)
            gx = dH0x
            gy = dH0y
            if rb is not None:
                v11 = P.polyval2d(Qx, Qz, rb.c11[j])
                v12 = P.polyval(Qy, rb.c12[j])
                v13 = P.polyval3d(Qx, Qz, Qy, rb.c13[j])
                gx = gx + phi * (2.0 * v11 * X + v13 * Y)
                gy = gy + phi * (2.0 * v12 * Y + v13 * X)
            wx = self.sigma_x * X * gx
            wy = self.sigma_y * Y * gy
            kx = -phi * (wx + self.rho * wy)
            ky = -phi * (self.rho * wx + wy)
            kz = (self.sigma_x * kx - self.sigma_y * ky) / self.sigma_z
        if want_kappa and phi == 0.0:
            zeros = np.zeros_like(np.asarray(X))
            kx = ky = kz = zeros
        return nux, nuy, nuz, kx, ky, kz


def tables_from_solutions(hsol: HSolution, rc: RobustCorrection | None,
                          phi: float) -> StrategyTables:
    t = hsol.knots
    K = len(t)
    lin = np.zeros((K, 3))
    quad = np.zeros((K, 3))
    h1 = np.zeros((K, 3))
    h2 = np.zeros((K, 3))
    inv2a = np.zeros(3)
    for idx, k in enumerate(PAIRS):
        a = hsol.pairs[k].a
        h1[:, idx] = np.asarray(hsol.h1(k, t))
        h2[:, idx] = np.asarray(hsol.h2(k, t))
        lin[:, idx] = h1[:, idx] / (2.0 * a)
        quad[:, idx] = h2[:, idx] / a
        inv2a[idx] = 1.0 / (2.0 * a)
    robust = None
    if rc is not None and phi != 0.0:
        robust = RobustTables(c11=rc.c11, c12=rc.c12, c13=rc.c13,
                              d11x=rc.c11_dx, d11z=rc.c11_dz,
                              d12y=rc.c12_dy, d13x=rc.c13_dx,
                              d13z=rc.c13_dz, d13y=rc.c13_dy)
    trip = hsol.triplet
    return StrategyTables(
        phi=phi, knots=t, lin=lin, quad=quad, h1=h1, h2=h2,
        h00x=np.asarray(hsol.h0_x(t)), h00y=np.asarray(hsol.h0_y(t)),
        inv2a=inv2a, sigma_x=trip.sigma_x, sigma_y=trip.sigma_y,
        sigma_z=trip.sigma_z, rho=trip.rho, robust=robust)


def make_strategy(cfg: RunConfig, name: str):
    """Build (tables, effective config) for a named strategy.

    ``illiquid-only`` zeroes the liquid-pair client flow and trades
    ambiguity-neutrally; ``neutral`` is phi = 0 with full flow; ``robust``
    uses the configured phi.
    """
    if name not in STRATEGY_NAMES:
        raise ValueError(f"unknown strategy {name!r}; expected one of "
                         f"{STRATEGY_NAMES}")
    eff = cfg.illiquid_only() if name == "illiquid-only" else cfg
    hsol = HSolution(eff.reference, eff.execution, eff.flow,
                     horizon=eff.sim.horizon, n_steps=eff.sim.n_steps)
    if name == "robust" and cfg.ambiguity.phi != 0.0:
        rc = RobustCorrection(hsol)
        tables = tables_from_solutions(hsol, rc, cfg.ambiguity.phi)
    else:
        tables = tables_from_solutions(hsol, None, 0.0)
    return tables, eff
