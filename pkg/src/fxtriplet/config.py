"""JSON run configuration: parsing, validation and the shipped defaults.

The file has five sections -- ``triplet`` (statistical and reference
measure parameters plus initial rates), ``execution``, ``flow``,
``ambiguity`` and ``simulation``.  Validation errors carry the dotted
field path of the offending entry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources

from .params import (AmbiguityParams, ExecutionParams, FlowParams, Inventory,
                     PAIRS, SIDES, TripletParams)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` holds the dotted path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def _num(section: dict, path: str, key: str, *, lo=None, hi=None,
         lo_strict=None) -> float:
    field = f"{path}.{key}"
    if key not in section:
        raise ConfigError(field, "missing required value")
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(field, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(field, "must be finite")
    if lo is not None and v < lo:
        raise ConfigError(field, f"must be >= {lo}, got {v}")
    if lo_strict is not None and v <= lo_strict:
        raise ConfigError(field, f"must be > {lo_strict}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(field, f"must be <= {hi}, got {v}")
    return v


def _section(doc: dict, name: str) -> dict:
    if name not in doc or not isinstance(doc[name], dict):
        raise ConfigError(name, "missing section")
    return doc[name]


@dataclass(frozen=True)
class SimSettings:
    horizon: float
    dt: float
    n_steps: int
    n_paths: int
    seed: int
    q0: Inventory
    unwind_dt: float
    fill_timing: str  # "pre_rate" | "post_rate"


@dataclass(frozen=True)
class RunConfig:
    """Fully validated configuration for solvers, simulator and experiments."""

    statistical: TripletParams
    reference: TripletParams
    execution: ExecutionParams
    flow: FlowParams
    ambiguity: AmbiguityParams
    sim: SimSettings
    raw: dict

    def with_flow(self, flow: FlowParams) -> "RunConfig":
        return replace(self, flow=flow)

    def with_phi(self, phi: float) -> "RunConfig":
        return replace(self, ambiguity=AmbiguityParams(phi=phi))

    def with_alpha_multiplier(self, m: float) -> "RunConfig":
        ex = self.execution
        new = replace(ex, alpha_x=ex.a_x * m, alpha_y=ex.a_y * m,
                      alpha_z=ex.a_z * m)
        return replace(self, execution=new)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, sim=replace(self.sim, seed=int(seed)))

    def with_paths(self, n_paths: int) -> "RunConfig":
        return replace(self, sim=replace(self.sim, n_paths=int(n_paths)))

    def illiquid_only(self) -> "RunConfig":
        """Zero the liquid-pair client flow; the z-pair flow is kept."""
        lam = dict(self.flow.lam)
        law = dict(self.flow.law)
        for k in ("x", "y"):
            for s in SIDES:
                lam[(k, s)] = 0.0
        return self.with_flow(FlowParams(lam=lam, law=law))


def _parse_measure(sec: dict, path: str, x0: float, y0: float) -> TripletParams:
    mu_x = _num(sec, path, "mu_x")
    mu_y = _num(sec, path, "mu_y")
    sigma_x = _num(sec, path, "sigma_x", lo_strict=0.0)
    sigma_y = _num(sec, path, "sigma_y", lo_strict=0.0)
    rho = _num(sec, path, "rho", lo=-1.0, hi=1.0)
    return TripletParams(mu_x=mu_x, mu_y=mu_y, sigma_x=sigma_x,
                         sigma_y=sigma_y, rho=rho, x0=x0, y0=y0)


def parse_config(doc: dict) -> RunConfig:
    trip = _section(doc, "triplet")
    x0 = _num(trip, "triplet", "x0", lo_strict=0.0)
    y0 = _num(trip, "triplet", "y0", lo_strict=0.0)
    if "z0" in trip:
        z0 = _num(trip, "triplet", "z0", lo_strict=0.0)
        if abs(z0 - x0 / y0) > 1e-12 * abs(z0):
            raise ConfigError("triplet.z0",
                              f"must equal x0/y0 = {x0 / y0!r} (no-arbitrage)")
    stat_sec = trip.get("statistical")
    ref_sec = trip.get("reference")
    if not isinstance(stat_sec, dict):
        raise ConfigError("triplet.statistical", "missing section")
    if not isinstance(ref_sec, dict):
        raise ConfigError("triplet.reference", "missing section")
    try:
        statistical = _parse_measure(stat_sec, "triplet.statistical", x0, y0)
        reference = _parse_measure(ref_sec, "triplet.reference", x0, y0)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("triplet", str(exc)) from exc

    ex_sec = _section(doc, "execution")
    kwargs = {}
    for k in PAIRS:
        kwargs[f"a_{k}"] = _num(ex_sec, "execution", f"a_{k}", lo=0.0)
        kwargs[f"alpha_{k}"] = _num(ex_sec, "execution", f"alpha_{k}", lo=0.0)
        for s in SIDES:
            kwargs[f"c_{k}_{s}"] = _num(ex_sec, "execution", f"c_{k}_{s}", lo=0.0)
    try:
        execution = ExecutionParams(**kwargs)
    except ValueError as exc:
        raise ConfigError("execution", str(exc)) from exc

    fl_sec = _section(doc, "flow")
    lam, theta = {}, {}
    for k in PAIRS:
        for s in SIDES:
            lam[(k, s)] = _num(fl_sec, "flow", f"lambda_{k}_{s}", lo=0.0)
            th_key = f"theta_{k}_{s}"
            if lam[(k, s)] > 0.0:
                theta[(k, s)] = _num(fl_sec, "flow", th_key, lo_strict=0.0)
            elif th_key in fl_sec:
                theta[(k, s)] = _num(fl_sec, "flow", th_key, lo=0.0)
            else:
                theta[(k, s)] = 0.0
    flow = FlowParams.exponential(lam, theta)

    amb_sec = _section(doc, "ambiguity")
    ambiguity = AmbiguityParams(phi=_num(amb_sec, "ambiguity", "phi", lo=0.0))

    sim_sec = _section(doc, "simulation")
    horizon = _num(sim_sec, "simulation", "horizon_hours", lo_strict=0.0)
    dt = _num(sim_sec, "simulation", "dt_hours", lo_strict=0.0)
    n_steps_f = horizon / dt
    n_steps = int(round(n_steps_f))
    if n_steps < 1 or abs(n_steps_f - n_steps) > 1e-9 * max(1.0, n_steps_f):
        raise ConfigError("simulation.dt_hours",
                          f"dt must divide the horizon; horizon/dt = {n_steps_f!r}")
    n_paths = _num(sim_sec, "simulation", "n_paths", lo=1.0)
    if n_paths != int(n_paths):
        raise ConfigError("simulation.n_paths", "must be an integer")
    seed = sim_sec.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("simulation.seed", "must be an integer")
    if not (-(2**63) <= seed < 2**64):
        raise ConfigError("simulation.seed", "must fit in 64 bits")
    q0 = Inventory(q_x=_num(sim_sec, "simulation", "q0_x"),
                   q_y=_num(sim_sec, "simulation", "q0_y"),
                   q_z=_num(sim_sec, "simulation", "q0_z"))
    unwind_dt = float(sim_sec.get("unwind_dt_hours", dt))
    if not (unwind_dt > 0.0 and math.isfinite(unwind_dt)):
        raise ConfigError("simulation.unwind_dt_hours", "must be positive")
    fill_timing = sim_sec.get("fill_timing", "pre_rate")
    if fill_timing not in ("pre_rate", "post_rate"):
        raise ConfigError("simulation.fill_timing",
                          "must be 'pre_rate' or 'post_rate'")
    sim = SimSettings(horizon=horizon, dt=dt, n_steps=n_steps,
                      n_paths=int(n_paths), seed=int(seed), q0=q0,
                      unwind_dt=unwind_dt, fill_timing=fill_timing)
    return RunConfig(statistical=statistical, reference=reference,
                     execution=execution, flow=flow, ambiguity=ambiguity,
                     sim=sim, raw=doc)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "top level must be an object")
    return parse_config(doc)


def default_config_text() -> str:
    return resources.files("fxtriplet").joinpath("data/default_config.json") \
        .read_text(encoding="utf-8")


def default_config() -> RunConfig:
    return parse_config(json.loads(default_config_text()))
