"""First-order ambiguity correction H1 and the approximate robust controls.

H1 = H11(t, q_x, q_z) x^2 + H12(t, q_y) y^2 + H13(t, q_x, q_y, q_z) x y,
with each component a time integral of expected squared (or crossed)
rate-gradients of H0 along independent auxiliary inventory processes

    dQ^k_u = -(h1_k(u) + 2 h2_k(u) Q^k_u) / (2 a_k) du + client jumps.

The affine drift gives the exact flow Q_u = D(u,t) q + b(u,t) + M with
D(u,t) = exp(-int_t^u h2/a) and M an integral of the jump measure against
D(u, .), so raw moments of Q_u up to order 4 are polynomials in the start
inventory q with coefficients built from quadratures of the flow.  Squaring
the H0 gradients over those moments turns each H1 component into a
polynomial in inventories with time-tabulated coefficients, and all
inventory derivatives are exact.

Approximate robust speed and worst-case drift adjustment:

    nu~_k   = [(khat - d_{q_k} H0) - phi d_{q_k} H1] / (2 a_k khat)
    kappa~  = -phi [[1, rho], [rho, 1]] (sigma_x x (d_x H0 + phi d_x H1),
                                         sigma_y y (d_y H0 + phi d_y H1))^T
    kappa_z = (sigma_x kappa_x - sigma_y kappa_y) / sigma_z
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .neutral import HSolution
from .params import PAIRS, ExecutionParams, FlowParams, TripletParams
from .quadrature import CumulativeIntegral, suffix_weights

_MOM_ORDERS = (1, 2, 3, 4)


class AuxiliaryFlow:
    """Deterministic flow of the auxiliary inventory SDEs.

    D_k(u, t) = exp(-int_t^u h2_k/a_k) and
    b_k(u, t) = -int_t^u D_k(u, s) h1_k(s) / (2 a_k) ds,
    so that the jump-free mean is D q + b.  Cumulants of the jump part are
    kappa_n(t, u) = lambda_n int_t^u D(u, s)^n ds with lambda_n the signed
    n-th moment rate of the net client flow.
    """

    def __init__(self, hsol: HSolution):
        self.hsol = hsol
        grid = hsol.grid
        self.grid = grid
        self._phi_int = {}
        self._b_int = {}
        self._s_int = {}
        for k in PAIRS:
            a = hsol.pairs[k].a
            phi_k = CumulativeIntegral(grid, lambda u, k=k, a=a:
                                       np.asarray(hsol.h2(k, u)) / a)
            self._phi_int[k] = phi_k
            self._b_int[k] = CumulativeIntegral(
                grid, lambda u, k=k, a=a, p=phi_k:
                np.asarray(hsol.h1(k, u)) * np.exp(p(u)) / (2.0 * a))
            self._s_int[k] = {
                n: CumulativeIntegral(grid, lambda u, n=n, p=phi_k:
                                      np.exp(n * p(u)))
                for n in _MOM_ORDERS
            }

    def log_decay(self, pair: str, u):
        """Phi(u) = int_0^u h2/a; D(u, t) = exp(Phi(t) - Phi(u))."""
        return self._phi_int[pair](u)

    def D(self, pair: str, u, t):
        return np.exp(self.log_decay(pair, t) - self.log_decay(pair, u))

    def b(self, pair: str, u, t):
        cum = self._b_int[pair]
        return -np.exp(-self.log_decay(pair, u)) * (cum(u) - cum(t))

    def jump_cumulant(self, pair: str, n: int, t, u, flow: FlowParams):
        lam_n = flow.lambda_n(pair, n)
        cum = self._s_int[pair][n]
        return lam_n * np.exp(-n * self.log_decay(pair, u)) * (cum(u) - cum(t))

    def knot_arrays(self, pair: str):
        """(Phi, B, S1..S4) sampled at the quadrature grid knots."""
        phi = self._phi_int[pair].at_knots()
        b = self._b_int[pair].at_knots()
        s = {n: self._s_int[pair][n].at_knots() for n in _MOM_ORDERS}
        return phi, b, s


def _jump_raw_moments(k1, k2, k3, k4):
    """Raw moments of the jump integral from its cumulants."""
    m1 = k1
    m2 = k2 + k1**2
    m3 = k3 + 3.0 * k2 * k1 + k1**3
    m4 = k4 + 4.0 * k3 * k1 + 3.0 * k2**2 + 6.0 * k2 * k1**2 + k1**4
    return m1, m2, m3, m4


def _moment_coeffs(D, b, em):
    """Coefficient rows of E[Q_u^n] as polynomials in the start inventory q.

    E[(b + D q + M)^n] expanded binomially; ``em[j]`` are raw moments of M.
    Returns matrices of shape (len(u), n+1) for n = 1..4.
    """
    e1, e2, e3, e4 = em
    one = np.ones_like(D)
    m1 = np.stack([b + e1, D], axis=-1)
    m2 = np.stack([b**2 + 2 * b * e1 + e2,
                   2 * D * (b + e1),
                   D**2], axis=-1)
    m3 = np.stack([b**3 + 3 * b**2 * e1 + 3 * b * e2 + e3,
                   3 * D * (b**2 + 2 * b * e1 + e2),
                   3 * D**2 * (b + e1),
                   D**3], axis=-1)
    m4 = np.stack([b**4 + 4 * b**3 * e1 + 6 * b**2 * e2 + 4 * b * e3 + e4,
                   D * (4 * b**3 + 12 * b**2 * e1 + 12 * b * e2 + 4 * e3),
                   D**2 * (6 * b**2 + 12 * b * e1 + 6 * e2),
                   D**3 * (4 * b + 4 * e1),
                   D**4], axis=-1)
    del one
    return m1, m2, m3, m4


@dataclass(frozen=True)
class MomentTrajectory:
    """Raw moments of one auxiliary process, polynomial in start inventory."""

    pair: str
    t: float
    q: float
    u: np.ndarray
    coeffs: tuple  # (m1, m2, m3, m4) coefficient matrices, (len(u), n+1)

    def moment(self, n: int):
        c = self.coeffs[n - 1]
        powers = self.q ** np.arange(c.shape[1])
        return c @ powers

    def moments_at(self, u_index: int):
        return tuple(float(self.moment(n)[u_index]) for n in _MOM_ORDERS)


def propagate_moments(pair: str, t: float, q: float, flow: FlowParams,
                      aux: AuxiliaryFlow) -> MomentTrajectory:
    """Moments m1..m4 of the auxiliary inventory started at (t, q).

    Solves the closed linear moment system through the exact affine flow;
    non-finite output aborts with a diagnostic.
    """
    knots = aux.grid.knots
    i0 = int(np.searchsorted(knots, t))
    if not np.isclose(knots[i0], t, rtol=0.0, atol=1e-12):
        u = np.concatenate([[t], knots[knots > t]])
    else:
        u = knots[i0:]
    phi_t = aux.log_decay(pair, t)
    phi_u = aux.log_decay(pair, u)
    D = np.exp(phi_t - phi_u)
    bcum = aux._b_int[pair]
    b = -np.exp(-phi_u) * (bcum(u) - bcum(t))
    kap = [aux.jump_cumulant(pair, n, t, u, flow) for n in _MOM_ORDERS]
    em = _jump_raw_moments(*kap)
    coeffs = _moment_coeffs(D, b, em)
    for c in coeffs:
        if not np.all(np.isfinite(c)):
            raise FloatingPointError(
                f"non-finite moment coefficients for pair {pair} at t={t}")
    return MomentTrajectory(pair=pair, t=t, q=q, u=u, coeffs=coeffs)


def _grad_poly(m, h1_u, h2_u):
    """E[(1 - h1) Q - h2 Q^2] as q-polynomial rows, shape (nu, 3)."""
    m1, m2 = m[0], m[1]
    out = np.zeros((m2.shape[0], 3))
    out[:, :2] += (1.0 - h1_u)[:, None] * m1
    out -= h2_u[:, None] * m2
    return out


def _grad_sq_poly(m, h1_u, h2_u):
    """E[((1 - h1) Q - h2 Q^2)^2] as q-polynomial rows, shape (nu, 5)."""
    m2, m3, m4 = m[1], m[2], m[3]
    w = 1.0 - h1_u
    out = np.zeros((m2.shape[0], 5))
    out[:, :3] += (w**2)[:, None] * m2
    out[:, :4] -= (2.0 * w * h2_u)[:, None] * m3
    out += (h2_u**2)[:, None] * m4
    return out


class RobustCorrection:
    """Tabulated polynomial coefficients of H11, H12, H13 and their partials.

    H11 coefficients index (q_x^i q_z^j); H13 coefficients index
    (q_x^i q_z^j q_y^k).  Rows sit on the simulation knots; linear
    interpolation is used between rows for off-knot queries.
    """

    def __init__(self, hsol: HSolution, flow: FlowParams | None = None):
        self.hsol = hsol
        self.flow = hsol.flow if flow is None else flow
        self.knots = hsol.knots
        trip = hsol.triplet
        self.sigma_x, self.sigma_y = trip.sigma_x, trip.sigma_y
        self.rho, self.sigma_z = trip.rho, trip.sigma_z
        self.mu_x, self.mu_y = trip.mu_x, trip.mu_y
        self.aux = AuxiliaryFlow(hsol)
        self._build_tables()
        self._differentiate()

    # -- construction ---------------------------------------------------------

    def _build_tables(self) -> None:
        hsol = self.hsol
        grid = hsol.grid
        knots_all = grid.knots
        tab = self.knots
        idx = np.searchsorted(knots_all, tab)
        if not np.allclose(knots_all[idx], tab, rtol=0.0, atol=1e-12):
            raise RuntimeError("tabulation knots missing from quadrature grid")

        phis, bs, ss, lam_n = {}, {}, {}, {}
        h1_u, h2_u = {}, {}
        for k in PAIRS:
            phis[k], bs[k], ss[k] = self.aux.knot_arrays(k)
            lam_n[k] = {n: self.flow.lambda_n(k, n) for n in _MOM_ORDERS}
            h1_u[k] = np.asarray(hsol.h1(k, knots_all))
            h2_u[k] = np.asarray(hsol.h2(k, knots_all))
        h00x = np.asarray(hsol.h0_x(knots_all))
        h00y = np.asarray(hsol.h0_y(knots_all))

        sx2, sy2 = self.sigma_x**2, self.sigma_y**2
        w11_rate = 2.0 * self.mu_x + sx2
        w12_rate = 2.0 * self.mu_y + sy2
        w13_rate = self.mu_x + self.mu_y + self.rho * self.sigma_x * self.sigma_y

        K = len(tab)
        self.c11 = np.zeros((K, 5, 5))
        self.c12 = np.zeros((K, 5))
        self.c13 = np.zeros((K, 3, 3, 3))

        for i in range(K):
            j0 = idx[i]
            sl = slice(j0, len(knots_all))
            u = knots_all[sl]
            if len(u) < 2:
                continue  # terminal row stays identically zero
            w = suffix_weights(knots_all, j0)

            mom, grad, gradsq = {}, {}, {}
            for k in PAIRS:
                D = np.exp(phis[k][j0] - phis[k][sl])
                b = -np.exp(-phis[k][sl]) * (bs[k][sl] - bs[k][j0])
                kap = [lam_n[k][n] * np.exp(-n * phis[k][sl])
                       * (ss[k][n][sl] - ss[k][n][j0]) for n in _MOM_ORDERS]
                em = _jump_raw_moments(*kap)
                mom[k] = _moment_coeffs(D, b, em)
                grad[k] = _grad_poly(mom[k], h1_u[k][sl], h2_u[k][sl])
                gradsq[k] = _grad_sq_poly(mom[k], h1_u[k][sl], h2_u[k][sl])

            du = u - u[0]
            w11 = w * np.exp(w11_rate * du) * 0.5 * sx2
            w12 = w * np.exp(w12_rate * du) * 0.5 * sy2
            w13 = w * np.exp(w13_rate * du) * self.rho * self.sigma_x * self.sigma_y
            hx, hy = h00x[sl], h00y[sl]

            # x^2 block: E[(g_x)^2], g_x = P_x(Qx) + P_z(Qz) - h0_x(u)
            c = np.zeros((5, 5))
            c[:, 0] += gradsq["x"].T @ w11
            c[0, :] += gradsq["z"].T @ w11
            c[:3, :3] += 2.0 * np.einsum("j,ja,jb->ab", w11, grad["x"], grad["z"])
            c[:3, 0] -= 2.0 * (grad["x"].T @ (w11 * hx))
            c[0, :3] -= 2.0 * (grad["z"].T @ (w11 * hx))
            c[0, 0] += w11 @ hx**2
            self.c11[i] = -c

            # y^2 block
            cy = gradsq["y"].T @ w12
            cy[:3] -= 2.0 * (grad["y"].T @ (w12 * hy))
            cy[0] += w12 @ hy**2
            self.c12[i] = -cy

            # x y block: E[g_x] E[g_y], axes (q_x, q_z, q_y)
            gx = np.zeros((len(u), 3, 3))
            gx[:, :, 0] += grad["x"]
            gx[:, 0, :] += grad["z"]
            gx[:, 0, 0] -= hx
            gy = np.zeros((len(u), 3))
            gy[:, :] += grad["y"]
            gy[:, 0] -= hy
            self.c13[i] = -np.einsum("j,jab,jc->abc", w13, gx, gy)

    def _differentiate(self) -> None:
        self.c11_dx = P.polyder(self.c11, axis=1)
        self.c11_dz = P.polyder(self.c11, axis=2)
        self.c12_dy = P.polyder(self.c12, axis=1)
        self.c13_dx = P.polyder(self.c13, axis=1)
        self.c13_dz = P.polyder(self.c13, axis=2)
        self.c13_dy = P.polyder(self.c13, axis=3)

    # -- coefficient lookup ----------------------------------------------------

    def _rows(self, table: np.ndarray, t: float) -> np.ndarray:
        knots = self.knots
        if t <= knots[0]:
            return table[0]
        if t >= knots[-1]:
            return table[-1]
        j = int(np.searchsorted(knots, t, side="right")) - 1
        if knots[j] == t:
            return table[j]
        lam = (t - knots[j]) / (knots[j + 1] - knots[j])
        return (1.0 - lam) * table[j] + lam * table[j + 1]

    # -- evaluation --------------------------------------------------------------

    def H11(self, t, qx, qz):
        return P.polyval2d(qx, qz, self._rows(self.c11, t))

    def H12(self, t, qy):
        return P.polyval(qy, self._rows(self.c12, t))

    def H13(self, t, qx, qy, qz):
        return P.polyval3d(qx, qz, qy, self._rows(self.c13, t))

    def H1(self, t, x, y, q):
        qx, qy, qz = q
        return (self.H11(t, qx, qz) * x**2 + self.H12(t, qy) * y**2
                + self.H13(t, qx, qy, qz) * x * y)

    def dH1_dq(self, pair: str, t, x, y, q):
        qx, qy, qz = q
        if pair == "x":
            return (P.polyval2d(qx, qz, self._rows(self.c11_dx, t)) * x**2
                    + P.polyval3d(qx, qz, qy, self._rows(self.c13_dx, t)) * x * y)
        if pair == "z":
            return (P.polyval2d(qx, qz, self._rows(self.c11_dz, t)) * x**2
                    + P.polyval3d(qx, qz, qy, self._rows(self.c13_dz, t)) * x * y)
        return (P.polyval(qy, self._rows(self.c12_dy, t)) * y**2
                + P.polyval3d(qx, qz, qy, self._rows(self.c13_dy, t)) * x * y)

    def dH1_dx(self, t, x, y, q):
        qx, qy, qz = q
        return (2.0 * self.H11(t, qx, qz) * x + self.H13(t, qx, qy, qz) * y)

    def dH1_dy(self, t, x, y, q):
        qx, qy, qz = q
        return (2.0 * self.H12(t, qy) * y + self.H13(t, qx, qy, qz) * x)

    # -- controls ------------------------------------------------------------------

    def robust_speed(self, pair: str, t, x, y, q, phi: float):
        """Approximate robust speed; reduces to the neutral speed at phi = 0."""
        khat = x if pair in ("x", "z") else y
        if np.any(np.asarray(khat) <= 0.0):
            raise ValueError("quote rates must stay positive")
        qk = q[0] if pair == "x" else (q[1] if pair == "y" else q[2])
        base = self.hsol.speed(pair, t, qk)
        if phi == 0.0:
            return base
        a = self.hsol.pairs[pair].a
        return base - phi * self.dH1_dq(pair, t, x, y, q) / (2.0 * a * khat)

    def drift_adjustment(self, t, x, y, q, phi: float):
        """Worst-case Girsanov drifts (kappa_x, kappa_y, kappa_z)."""
        ev = self.hsol.eval_H0(t, x, y, q)
        gx = ev.dx
        gy = ev.dy
        if phi != 0.0:
            gx = gx + phi * self.dH1_dx(t, x, y, q)
            gy = gy + phi * self.dH1_dy(t, x, y, q)
        wx = self.sigma_x * x * gx
        wy = self.sigma_y * y * gy
        kx = -phi * (wx + self.rho * wy)
        ky = -phi * (self.rho * wx + wy)
        kz = (self.sigma_x * kx - self.sigma_y * ky) / self.sigma_z
        return kx, ky, kz


def solve_robust(hsol: HSolution) -> RobustCorrection:
    return RobustCorrection(hsol)


def prop6_C(x: float, y: float, q, triplet: TripletParams,
            execution: ExecutionParams) -> tuple[float, float]:
    """Near-horizon asymptotic constants (C_x, C_y); C_x + C_y >= 0 always."""
    qx, qy, qz = q
    sx, sy, rho = triplet.sigma_x, triplet.sigma_y, triplet.rho
    xblock = execution.a_x * x * qx**2 + execution.a_z * x * qz**2
    yblock = execution.a_y * y * qy**2
    c_x = sx * xblock + rho * sy * yblock
    c_y = rho * sx * xblock + sy * yblock
    return c_x, c_y
