"""Model parameters for the currency-triplet liquidation problem.

Three pairs over three currencies: X is the mid-rate of pair (2,1), Y of
(3,1) and Z of (2,3). No-arbitrage pins Z = X/Y, which makes the z-pair
parameters derived quantities:

    mu_z    = mu_x - mu_y + sigma_y^2 - rho*sigma_x*sigma_y
    sigma_z = sqrt(sigma_x^2 + sigma_y^2 - 2*rho*sigma_x*sigma_y)

Inventory is held in lots (1 lot = 10^6 units of base currency); time is
measured in hours.  Client order flow per pair and side is compound
Poisson with i.i.d. positive jump sizes; the shipped size law is
exponential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

PAIRS = ("x", "y", "z")
SIDES = ("plus", "minus")  # plus = client sell (inventory up), minus = client buy

#: units of base currency per lot
LOT_UNITS = 1.0e6

#: |mu| below this is routed to the mu = 0 branch of the closed forms
MU_BRANCH_TOL = 1.0e-14

#: safety bound on alpha_k / a_k so the terminal boundary layer stays resolvable
MAX_PENALTY_RATIO = 1.0e10


def _require_finite(name: str, value: float) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return v


def derive_z_params(mu_x: float, mu_y: float, sigma_x: float, sigma_y: float,
                    rho: float) -> tuple[float, float]:
    """Drift and volatility of the redundant pair implied by no-arbitrage.

    Returns (mu_z, sigma_z).  Rejects non-finite inputs, non-positive
    volatilities and |rho| > 1.
    """
    for name, v in (("mu_x", mu_x), ("mu_y", mu_y), ("sigma_x", sigma_x),
                    ("sigma_y", sigma_y), ("rho", rho)):
        _require_finite(name, v)
    if sigma_x <= 0.0 or sigma_y <= 0.0:
        raise ValueError("sigma_x and sigma_y must be strictly positive")
    if abs(rho) > 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    mu_z = mu_x - mu_y + sigma_y**2 - rho * sigma_x * sigma_y
    var_z = sigma_x**2 + sigma_y**2 - 2.0 * rho * sigma_x * sigma_y
    # exact zero for rho = 1, sigma_x = sigma_y; clamp tiny negative round-off
    sigma_z = math.sqrt(max(var_z, 0.0))
    return mu_z, sigma_z


@dataclass(frozen=True)
class TripletParams:
    """Mid-rate dynamics of one measure (reference or statistical).

    Drifts are per hour, volatilities per sqrt-hour.  ``mu_z`` and
    ``sigma_z`` are always derived from the (x, y) parameters, never taken
    from input: the printed z-row of a calibration table generally cannot
    be reproduced from a rounded rho.
    """

    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float
    x0: float
    y0: float
    mu_z: float = field(init=False)
    sigma_z: float = field(init=False)

    def __post_init__(self) -> None:
        mu_z, sigma_z = derive_z_params(self.mu_x, self.mu_y,
                                        self.sigma_x, self.sigma_y, self.rho)
        if not (self.x0 > 0.0 and self.y0 > 0.0):
            raise ValueError("initial rates x0, y0 must be positive")
        object.__setattr__(self, "mu_z", mu_z)
        object.__setattr__(self, "sigma_z", sigma_z)

    @property
    def z0(self) -> float:
        return self.x0 / self.y0

    def mu_hat(self, pair: str) -> float:
        """Drift of the quote-side rate carrying pair ``pair`` (x for x and z)."""
        return self.mu_x if pair in ("x", "z") else self.mu_y

    def sigma_hat(self, pair: str) -> float:
        return self.sigma_x if pair in ("x", "z") else self.sigma_y


@dataclass(frozen=True)
class ExecutionParams:
    """Temporary impact a_k, brokerage fees c_k^± and terminal penalties alpha_k.

    a_k is the fractional worsening of the executed rate per lot/hour of
    speed; c_k^± scale the fee spread with client order size; alpha_k is the
    quadratic charge on terminal inventory.  All coefficients nonnegative.
    """

    a_x: float
    a_y: float
    a_z: float
    c_x_plus: float
    c_x_minus: float
    c_y_plus: float
    c_y_minus: float
    c_z_plus: float
    c_z_minus: float
    alpha_x: float
    alpha_y: float
    alpha_z: float

    def __post_init__(self) -> None:
        for name in ("a_x", "a_y", "a_z", "c_x_plus", "c_x_minus", "c_y_plus",
                     "c_y_minus", "c_z_plus", "c_z_minus",
                     "alpha_x", "alpha_y", "alpha_z"):
            v = _require_finite(name, getattr(self, name))
            if v < 0.0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        for k in PAIRS:
            a, alpha = self.a(k), self.alpha(k)
            if a > 0.0 and alpha > 0.0 and alpha / a > MAX_PENALTY_RATIO:
                raise ValueError(
                    f"alpha_{k}/a_{k} = {alpha / a:.3g} exceeds the supported "
                    f"ratio {MAX_PENALTY_RATIO:.0e}")

    def a(self, pair: str) -> float:
        return getattr(self, f"a_{pair}")

    def alpha(self, pair: str) -> float:
        return getattr(self, f"alpha_{pair}")

    def c(self, pair: str, side: str) -> float:
        return getattr(self, f"c_{pair}_{side}")


class ExponentialJumps:
    """Exponential client-order size law with mean ``theta`` lots.

    Any law with finite moments up to order 4 can be dropped in; it must
    expose ``moment(n)`` and ``sample(rng, size)``.
    """

    def __init__(self, theta: float):
        theta = _require_finite("theta", theta)
        if theta <= 0.0:
            raise ValueError("jump-size mean theta must be positive")
        self.theta = theta

    def moment(self, n: int) -> float:
        return math.factorial(n) * self.theta**n

    def sample(self, rng, size):
        return rng.exponential(self.theta, size=size)

    def __repr__(self) -> str:
        return f"ExponentialJumps(theta={self.theta})"


class _ZeroJumps:
    """Placeholder law for a stream with zero arrival intensity."""

    theta = 0.0

    def moment(self, n: int) -> float:
        return 0.0

    def sample(self, rng, size):
        raise RuntimeError("zero-intensity stream has no sizes to draw")


@dataclass(frozen=True)
class FlowParams:
    """Client order-flow intensities and size laws per pair and side.

    ``lam[(k, side)]`` is the Poisson arrival intensity per hour;
    ``law[(k, side)]`` the jump-size law.  Derived per-pair moments:

        gamma_minus = lam+ theta+ - lam- theta-      (net flow drift, lots/hour)
        delta       = lam+ eta+   + lam- eta-        (second-moment rate)

    and the signed moment rates ``lambda_n = lam+ E[xi^n] + (-1)^n lam- E[xi^n]``
    that drive the cumulants of integrated flow.
    """

    lam: dict
    law: dict

    def __post_init__(self) -> None:
        for k in PAIRS:
            for s in SIDES:
                key = (k, s)
                if key not in self.lam:
                    raise ValueError(f"missing intensity for {key}")
                v = _require_finite(f"lambda[{key}]", self.lam[key])
                if v < 0.0:
                    raise ValueError(f"lambda[{key}] must be nonnegative")
                if v > 0.0 and key not in self.law:
                    raise ValueError(f"missing size law for active stream {key}")

    @classmethod
    def exponential(cls, lam: dict, theta: dict) -> "FlowParams":
        laws = {}
        for key, intensity in lam.items():
            laws[key] = ExponentialJumps(theta[key]) if intensity > 0.0 else _ZeroJumps()
        return cls(lam=dict(lam), law=laws)

    @classmethod
    def none(cls) -> "FlowParams":
        lam = {(k, s): 0.0 for k in PAIRS for s in SIDES}
        law = {key: _ZeroJumps() for key in lam}
        return cls(lam=lam, law=law)

    def intensity(self, pair: str, side: str) -> float:
        return self.lam[(pair, side)]

    def size_moment(self, pair: str, side: str, n: int) -> float:
        key = (pair, side)
        if self.lam[key] == 0.0:
            return 0.0
        return self.law[key].moment(n)

    def gamma_minus(self, pair: str) -> float:
        return (self.lam[(pair, "plus")] * self.size_moment(pair, "plus", 1)
                - self.lam[(pair, "minus")] * self.size_moment(pair, "minus", 1))

    def delta(self, pair: str) -> float:
        return (self.lam[(pair, "plus")] * self.size_moment(pair, "plus", 2)
                + self.lam[(pair, "minus")] * self.size_moment(pair, "minus", 2))

    def psi(self, pair: str, execution: ExecutionParams) -> float:
        return (execution.c(pair, "minus") * self.lam[(pair, "minus")]
                * self.size_moment(pair, "minus", 2)
                + execution.c(pair, "plus") * self.lam[(pair, "plus")]
                * self.size_moment(pair, "plus", 2))

    def lambda_n(self, pair: str, n: int) -> float:
        """Signed n-th moment rate of the net jump flow O+ - O-."""
        plus = self.lam[(pair, "plus")] * self.size_moment(pair, "plus", n)
        minus = self.lam[(pair, "minus")] * self.size_moment(pair, "minus", n)
        return plus + ((-1.0) ** n) * minus

    def is_active(self, pair: str) -> bool:
        return self.lam[(pair, "plus")] > 0.0 or self.lam[(pair, "minus")] > 0.0


@dataclass(frozen=True)
class Inventory:
    """Signed inventory in lots per pair; shorts are allowed."""

    q_x: float
    q_y: float
    q_z: float

    def __post_init__(self) -> None:
        for name in ("q_x", "q_y", "q_z"):
            _require_finite(name, getattr(self, name))

    def get(self, pair: str) -> float:
        return getattr(self, f"q_{pair}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.q_x, self.q_y, self.q_z)


@dataclass(frozen=True)
class AmbiguityParams:
    """Ambiguity-aversion scalar phi >= 0 (phi = 0 trusts the reference model)."""

    phi: float

    def __post_init__(self) -> None:
        v = _require_finite("phi", self.phi)
        if v < 0.0:
            raise ValueError("phi must be nonnegative")


@dataclass(frozen=True)
class PairSolvability:
    pair: str
    mu_hat: float
    bound: float
    status: str  # "pass" | "fail" | "degenerate"


@dataclass(frozen=True)
class SolvabilityReport:
    entries: tuple

    @property
    def ok(self) -> bool:
        return all(e.status != "fail" for e in self.entries)

    @property
    def violations(self) -> tuple:
        return tuple(e for e in self.entries if e.status == "fail")

    def __str__(self) -> str:
        lines = []
        for e in self.entries:
            lines.append(f"pair {e.pair}: |mu_hat|={abs(e.mu_hat):.6g} vs "
                         f"bound={e.bound:.6g} -> {e.status}")
        return "\n".join(lines)


def validate_solvability(triplet: TripletParams,
                         execution: ExecutionParams) -> SolvabilityReport:
    """Check |mu_hat_k| < alpha_k / a_k for each pair.

    A pair with a_k = 0 and alpha_k = 0 is frictionless and the condition is
    vacuous; it is reported as degenerate rather than pass/fail.
    """
    entries = []
    for k in PAIRS:
        a, alpha = execution.a(k), execution.alpha(k)
        mu_hat = triplet.mu_hat(k)
        if a == 0.0 and alpha == 0.0:
            entries.append(PairSolvability(k, mu_hat, math.nan, "degenerate"))
            continue
        bound = math.inf if a == 0.0 else alpha / a
        status = "pass" if abs(mu_hat) < bound else "fail"
        entries.append(PairSolvability(k, mu_hat, bound, status))
    return SolvabilityReport(entries=tuple(entries))
