"""Path simulator under the statistical measure with client order flow.

Each path owns counter-based RNG streams keyed by (master seed, path index,
stream label), so a path's draws do not depend on batch size, chunking or
worker count, and identical streams can be replayed across strategies for
common-random-number comparisons.

Step loop (default ordering): query the strategy at the step's left
endpoint, apply the broker's Exchange trade over [t, t+dt), fill client
orders at the pre-update mid-rates, then advance the rates by an exact
log-Euler GBM step with Z = X/Y enforced identically.  A config flag moves
the fills after the rate update instead.

Accounting is marked to market in currency 1 and carried in rate-times-lot
units; reported P&L is converted to currency-1 units per lot of the initial
illiquid position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .config import RunConfig
from .params import LOT_UNITS, PAIRS, SIDES

STREAM_NORMALS = 0
STREAM_FILLS = {
    ("x", "minus"): 1, ("x", "plus"): 2,
    ("y", "minus"): 3, ("y", "plus"): 4,
    ("z", "minus"): 5, ("z", "plus"): 6,
}
_M64 = 0xFFFFFFFFFFFFFFFF


def path_stream(seed: int, path_index: int, label: int) -> np.random.Generator:
    """Philox stream keyed by (seed, path, label); order-independent."""
    key = np.array([seed & _M64,
                    (((path_index & 0xFFFFFFFFFFFF) << 8) | label) & _M64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class PathFailure(RuntimeError):
    def __init__(self, path_index: int, message: str):
        self.path_index = path_index
        super().__init__(f"path {path_index}: {message}")


@dataclass
class Trajectory:
    """Full recording of one path, sufficient to replay the accounting."""

    path_index: int
    t: np.ndarray          # (n_steps + 1,)
    rates: np.ndarray      # (n_steps + 1, 3) X, Y, Z
    q: np.ndarray          # (n_steps + 1, 3)
    nu: np.ndarray         # (n_steps, 3)
    kappa: np.ndarray      # (n_steps, 3)
    fill_s1: np.ndarray    # (n_steps, 3, 2) sum of sizes, sides (minus, plus)
    fill_s2: np.ndarray    # (n_steps, 3, 2) sum of squared sizes
    cash: np.ndarray       # (n_steps + 1,)
    unwind: float
    pnl_per_lot: float


@dataclass
class MeanAccumulator:
    n: int
    rates: np.ndarray
    q: np.ndarray
    nu: np.ndarray
    kappa: np.ndarray

    @classmethod
    def zeros(cls, n_steps: int) -> "MeanAccumulator":
        return cls(n=0,
                   rates=np.zeros((n_steps + 1, 3)),
                   q=np.zeros((n_steps + 1, 3)),
                   nu=np.zeros((n_steps + 1, 3)),
                   kappa=np.zeros((n_steps + 1, 3)))

    def merge(self, other: "MeanAccumulator") -> None:
        self.n += other.n
        self.rates += other.rates
        self.q += other.q
        self.nu += other.nu
        self.kappa += other.kappa

    def means(self) -> dict:
        d = max(self.n, 1)
        return {"rates": self.rates / d, "q": self.q / d,
                "nu": self.nu / d, "kappa": self.kappa / d}


@dataclass
class BatchResult:
    n_paths: int
    pnl_per_lot: np.ndarray
    pnl_total: np.ndarray
    cash: np.ndarray
    unwind: np.ndarray
    q_terminal: np.ndarray          # (n, 3)
    max_noarb_violation: float
    mean_traj: MeanAccumulator | None = None
    trajectories: list = field(default_factory=list)
    knots: np.ndarray | None = None


@dataclass(frozen=True)
class SimKernel:
    """Plain-array view of the configuration consumed by the step loop."""

    n_steps: int
    dt: float
    x0: float
    y0: float
    q0: tuple
    log_drift_x: float
    log_drift_y: float
    vol_x: float
    vol_y: float
    rho_tilde: float
    a: tuple                 # (a_x, a_y, a_z)
    c_minus: tuple
    c_plus: tuple
    lam: dict                # (pair, side) -> intensity
    theta: dict              # (pair, side) -> exponential mean (0 if inactive)
    unwind_dt: float
    fill_timing: str
    pnl_divisor: float

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "SimKernel":
        st = cfg.statistical
        sim = cfg.sim
        dt = sim.dt
        lam, theta = {}, {}
        for k in PAIRS:
            for s in SIDES:
                lam[(k, s)] = cfg.flow.intensity(k, s)
                theta[(k, s)] = getattr(cfg.flow.law[(k, s)], "theta", 0.0)
        q0 = cfg.sim.q0
        divisor = abs(q0.q_z) if abs(q0.q_z) > 0.0 else 1.0
        return cls(
            n_steps=sim.n_steps, dt=dt, x0=st.x0, y0=st.y0,
            q0=(q0.q_x, q0.q_y, q0.q_z),
            log_drift_x=(st.mu_x - 0.5 * st.sigma_x**2) * dt,
            log_drift_y=(st.mu_y - 0.5 * st.sigma_y**2) * dt,
            vol_x=st.sigma_x * math.sqrt(dt),
            vol_y=st.sigma_y * math.sqrt(dt),
            rho_tilde=st.rho,
            a=(cfg.execution.a_x, cfg.execution.a_y, cfg.execution.a_z),
            c_minus=tuple(cfg.execution.c(k, "minus") for k in PAIRS),
            c_plus=tuple(cfg.execution.c(k, "plus") for k in PAIRS),
            lam=lam, theta=theta,
            unwind_dt=sim.unwind_dt, fill_timing=sim.fill_timing,
            pnl_divisor=divisor,
        )


def _pregenerate(kernel: SimKernel, seed: int, start: int, n: int):
    steps = kernel.n_steps
    normals = np.empty((n, steps, 2))
    fills = {}
    active = [(key, lab) for key, lab in STREAM_FILLS.items()
              if kernel.lam[key] > 0.0]
    for key, _ in active:
        fills[key] = (np.zeros((n, steps)), np.zeros((n, steps)))
    for i in range(n):
        p = start + i
        normals[i] = path_stream(seed, p, STREAM_NORMALS) \
            .standard_normal((steps, 2))
        for key, label in active:
            g = path_stream(seed, p, label)
            counts = g.poisson(kernel.lam[key] * kernel.dt, steps)
            total = int(counts.sum())
            if total == 0:
                continue
            sizes = g.exponential(kernel.theta[key], total)
            ends = np.cumsum(counts)
            starts = ends - counts
            cs1 = np.concatenate([[0.0], np.cumsum(sizes)])
            cs2 = np.concatenate([[0.0], np.cumsum(sizes * sizes)])
            fills[key][0][i] = cs1[ends] - cs1[starts]
            fills[key][1][i] = cs2[ends] - cs2[starts]
    return normals, fills


def terminal_unwind(q, x_T, y_T, a, unwind_dt):
    """Proceeds of dumping terminal inventory over one interval of length
    unwind_dt, clamped at zero executed rate."""
    out = 0.0
    for qk, rate, ak in zip(q, (x_T, y_T, x_T), a):
        out = out + qk * np.maximum(rate * (1.0 - ak * qk / unwind_dt), 0.0)
    return out


def _run_chunk(kernel: SimKernel, tables, seed: int, start: int, n: int,
               record_mean: bool, record_upto: int):
    steps = kernel.n_steps
    dt = kernel.dt
    normals, fills = _pregenerate(kernel, seed, start, n)

    X = np.full(n, kernel.x0)
    Y = np.full(n, kernel.y0)
    Z = X / Y
    Qx = np.full(n, kernel.q0[0])
    Qy = np.full(n, kernel.q0[1])
    Qz = np.full(n, kernel.q0[2])
    cash = np.zeros(n)

    ax, ay, az = kernel.a
    cmx, cmy, cmz = kernel.c_minus
    cpx, cpy, cpz = kernel.c_plus
    rho = kernel.rho_tilde
    rho_c = math.sqrt(max(1.0 - rho * rho, 0.0))

    mean_acc = MeanAccumulator.zeros(steps) if record_mean else None
    n_rec = max(0, min(record_upto - start, n))
    recs = [_TrajBuffer(start + i, i, steps) for i in range(n_rec)]
    want_kappa = record_mean or n_rec > 0
    noarb = 0.0

    for j in range(steps):
        nux, nuy, nuz, kx, ky, kz = tables.controls(
            j, X, Y, Qx, Qy, Qz, want_kappa)
        if not (np.all(np.isfinite(nux)) and np.all(np.isfinite(nuy))
                and np.all(np.isfinite(nuz))):
            bad = np.flatnonzero(~(np.isfinite(nux) & np.isfinite(nuy)
                                   & np.isfinite(nuz)))[0]
            raise PathFailure(start + int(bad), f"non-finite speed at step {j}")

        if record_mean:
            mean_acc.rates[j] += (X.sum(), Y.sum(), Z.sum())
            mean_acc.q[j] += (Qx.sum(), Qy.sum(), Qz.sum())
            mean_acc.nu[j] += (nux.sum(), nuy.sum(), nuz.sum())
            mean_acc.kappa[j] += (kx.sum(), ky.sum(), kz.sum())
        for r in recs:
            r.snap(j, X, Y, Z, Qx, Qy, Qz, nux, nuy, nuz, kx, ky, kz, cash)

        # broker's liquidity-taking trades at impacted rates
        cash += (X * (1.0 - ax * nux) * nux
                 + Y * (1.0 - ay * nuy) * nuy
                 + X * (1.0 - az * nuz) * nuz) * dt
        Qx -= nux * dt
        Qy -= nuy * dt
        Qz -= nuz * dt

        if kernel.fill_timing == "pre_rate":
            Qx, Qy, Qz, cash = _apply_fills(
                j, fills, X, Y, Qx, Qy, Qz, cash,
                (cmx, cmy, cmz), (cpx, cpy, cpz), recs)

        zx = normals[:, j, 0]
        zy = rho * zx + rho_c * normals[:, j, 1]
        X = X * np.exp(kernel.log_drift_x + kernel.vol_x * zx)
        Y = Y * np.exp(kernel.log_drift_y + kernel.vol_y * zy)
        Z = X / Y

        if kernel.fill_timing == "post_rate":
            Qx, Qy, Qz, cash = _apply_fills(
                j, fills, X, Y, Qx, Qy, Qz, cash,
                (cmx, cmy, cmz), (cpx, cpy, cpz), recs)

    if record_mean:
        mean_acc.rates[steps] += (X.sum(), Y.sum(), Z.sum())
        mean_acc.q[steps] += (Qx.sum(), Qy.sum(), Qz.sum())
        mean_acc.n = n
    unwind = terminal_unwind((Qx, Qy, Qz), X, Y, kernel.a, kernel.unwind_dt)
    pnl_total = (cash + unwind) * LOT_UNITS
    trajectories = [r.finish(kernel, X, Y, Z, Qx, Qy, Qz, cash, unwind)
                    for r in recs]
    return {
        "cash": cash,
        "unwind": unwind,
        "q_terminal": np.stack([Qx, Qy, Qz], axis=1),
        "pnl_total": pnl_total,
        "pnl_per_lot": pnl_total / kernel.pnl_divisor,
        "mean": mean_acc,
        "trajectories": trajectories,
        "noarb": noarb,
    }


def _apply_fills(j, fills, X, Y, Qx, Qy, Qz, cash, c_minus, c_plus, recs):
    rates = {"x": X, "y": Y, "z": X}
    dq = {"x": 0.0, "y": 0.0, "z": 0.0}
    for idx, k in enumerate(PAIRS):
        khat = rates[k]
        key_m = (k, "minus")
        if key_m in fills:
            s1 = fills[key_m][0][:, j]
            s2 = fills[key_m][1][:, j]
            dq[k] = dq[k] - s1
            cash = cash + khat * (s1 + c_minus[idx] * s2)
            for r in recs:
                r.fill(j, idx, 0, s1, s2)
        key_p = (k, "plus")
        if key_p in fills:
            s1 = fills[key_p][0][:, j]
            s2 = fills[key_p][1][:, j]
            dq[k] = dq[k] + s1
            cash = cash - khat * (s1 - c_plus[idx] * s2)
            for r in recs:
                r.fill(j, idx, 1, s1, s2)
    return Qx + dq["x"], Qy + dq["y"], Qz + dq["z"], cash


class _TrajBuffer:
    def __init__(self, path_index: int, local_row: int, steps: int):
        self.path_index = path_index
        self.local_row = local_row
        self.steps = steps
        self.rates = np.zeros((steps + 1, 3))
        self.q = np.zeros((steps + 1, 3))
        self.nu = np.zeros((steps, 3))
        self.kappa = np.zeros((steps, 3))
        self.s1 = np.zeros((steps, 3, 2))
        self.s2 = np.zeros((steps, 3, 2))
        self.cash = np.zeros(steps + 1)

    def snap(self, j, X, Y, Z, Qx, Qy, Qz, nux, nuy, nuz, kx, ky, kz, cash):
        i = self.local_row
        self.rates[j] = (X[i], Y[i], Z[i])
        self.q[j] = (Qx[i], Qy[i], Qz[i])
        self.nu[j] = (np.asarray(nux).flat[i if np.ndim(nux) else 0],
                      np.asarray(nuy).flat[i if np.ndim(nuy) else 0],
                      np.asarray(nuz).flat[i if np.ndim(nuz) else 0])
        self.kappa[j] = (np.asarray(kx).flat[i if np.ndim(kx) else 0],
                         np.asarray(ky).flat[i if np.ndim(ky) else 0],
                         np.asarray(kz).flat[i if np.ndim(kz) else 0])
        self.cash[j] = cash[i]

    def fill(self, j, pair_idx, side_idx, s1, s2):
        i = self.local_row
        self.s1[j, pair_idx, side_idx] = s1[i]
        self.s2[j, pair_idx, side_idx] = s2[i]

    def finish(self, kernel, X, Y, Z, Qx, Qy, Qz, cash, unwind):
        i = self.local_row
        self.rates[self.steps] = (X[i], Y[i], Z[i])
        self.q[self.steps] = (Qx[i], Qy[i], Qz[i])
        self.cash[self.steps] = cash[i]
        pnl = (cash[i] + unwind[i]) * LOT_UNITS / kernel.pnl_divisor
        t = np.arange(self.steps + 1) * kernel.dt
        return Trajectory(path_index=self.path_index, t=t, rates=self.rates,
                          q=self.q, nu=self.nu, kappa=self.kappa,
                          fill_s1=self.s1, fill_s2=self.s2, cash=self.cash,
                          unwind=float(unwind[i]), pnl_per_lot=float(pnl))


def run_batch(cfg: RunConfig, tables, n_paths: int | None = None,
              seed: int | None = None, threads: int = 1, chunk: int = 2000,
              record_mean: bool = False, record_paths: int = 0) -> BatchResult:
    """Simulate ``n_paths`` paths; deterministic given (config, seed).

    Paths are chunked for memory; per-path streams make results independent
    of chunking and of ``threads``.
    """
    kernel = SimKernel.from_config(cfg)
    n = cfg.sim.n_paths if n_paths is None else int(n_paths)
    seed = cfg.sim.seed if seed is None else int(seed)
    spans = [(s, min(chunk, n - s)) for s in range(0, n, chunk)]
    args = [(kernel, tables, seed, s, c, record_mean, record_paths)
            for s, c in spans]
    if threads > 1 and len(args) > 1:
        import multiprocessing as mp
        with mp.Pool(processes=min(threads, len(args))) as pool:
            outs = pool.starmap(_run_chunk_entry, args)
    else:
        outs = [_run_chunk_entry(*a) for a in args]

    mean_acc = None
    if record_mean:
        mean_acc = MeanAccumulator.zeros(kernel.n_steps)
        for o in outs:
            mean_acc.merge(o["mean"])
    trajectories = [tr for o in outs for tr in o["trajectories"]]
    return BatchResult(
        n_paths=n,
        pnl_per_lot=np.concatenate([o["pnl_per_lot"] for o in outs]),
        pnl_total=np.concatenate([o["pnl_total"] for o in outs]),
        cash=np.concatenate([o["cash"] for o in outs]),
        unwind=np.concatenate([o["unwind"] for o in outs]),
        q_terminal=np.concatenate([o["q_terminal"] for o in outs]),
        max_noarb_violation=max(o["noarb"] for o in outs),
        mean_traj=mean_acc,
        trajectories=trajectories,
        knots=np.arange(kernel.n_steps + 1) * kernel.dt,
    )


def _run_chunk_entry(kernel, tables, seed, start, count, record_mean,
                     record_upto):
    out = _run_chunk(kernel, tables, seed, start, count, record_mean,
                     record_upto)
    return out


def run_path(cfg: RunConfig, tables, path_index: int,
             seed: int | None = None) -> Trajectory:
    """Run a single path by index and return its full trajectory."""
    kernel = SimKernel.from_config(cfg)
    seed = cfg.sim.seed if seed is None else int(seed)
    out = _run_chunk(kernel, tables, seed, path_index, 1, False,
                     path_index + 1)
    return out["trajectories"][0]
