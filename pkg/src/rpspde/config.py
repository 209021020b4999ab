"""Flat ``section.key: value`` experiment configuration.

A config file is a YAML mapping whose keys are dotted names, e.g.::

    operator.c: 1.0
    noise.dt: 0.001
    F.kind: sine
    F.a: 0.1

Nested mappings are accepted and flattened to the same dotted keys.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .convolution import Modulation
from .errors import ParseError, ValidationError
from .fixed_point import SolverConfig
from .nonlinearity import (ConstantFieldNonlinearity, SineNonlinearity, TruncatedNonlinearity)
from .spectral import build_interval_operator

_F_KINDS = ("sine", "zero", "constant", "truncated")

# key: (default, type, help)
DEFAULTS: dict[str, tuple] = {
    "operator.c": (1.0, float, "zeroth-order coefficient c in L = u''/2 + c u"),
    "operator.n_modes": (8, int, "number of retained eigenmodes"),
    "operator.n_grid": (32, int, "interior spatial grid points (>= 4 n_modes)"),
    "noise.seed_base": (0, int, "first noise seed; samples use consecutive seeds"),
    "noise.n_samples": (500, int, "Monte Carlo samples"),
    "noise.dt": (1e-3, float, "time step"),
    "noise.sigma_scale": (0.2, float, "sigma_hat_k = scale * k^-decay"),
    "noise.sigma_hat_decay": (2.0, float, "decay exponent of sigma_hat_k"),
    "noise.epsilon": (0.5, float, "periodic modulation depth, in [0, 1)"),
    "period.tau": (1.0, float, "period tau (integer multiple of dt)"),
    "period.t0": (0.0, float, "start of the reported period window"),
    "truncation.eps_trunc": (1e-6, float, "target truncation error exp(-beta T_cut)"),
    "F.kind": ("sine", str, "one of sine, zero, constant, truncated"),
    "F.a": (0.1, float, "sine: F = a sin(u) + b cos(2 pi t/tau); truncated: f(u) = a u"),
    "F.b": (0.05, float, "periodic forcing amplitude"),
    "F.N": (None, float, "truncation radius for kind=truncated"),
    "F.coefficients": (None, list, "mode coefficients for kind=constant"),
    "solver.lambda": (None, float, "damping in (0, 1]; empty picks 1 if q < 1 else 0.5"),
    "solver.max_iters": (50, int, "Picard iteration cap"),
    "solver.residual_tol": (1e-7, float, "stop when sup_t E||z_{n+1} - z_n||^2 <= tol^2"),
    "verify.dt_levels": (None, list, "refinement levels, default [2 dt, dt]"),
    "verify.shift_probes": (5, int, "samples re-solved on shifted paths"),
    "stationary.n_samples": (100, int, "samples for the stationary check"),
    "stationary.dt_levels": ([4e-3, 2e-3], list, "integrator levels, coarse to fine"),
    "stationary.ref_factor": (8, int, "reference step = finest level / ref_factor"),
    "stationary.t_probes": ([0.2, 0.6, 1.0], list, "probe times (multiples of every level)"),
    "malliavin.n_samples": (20, int, "samples for E||D_r M(z)(t)||^2"),
    "malliavin.dt": (2e-3, float, "time step of the Malliavin probes"),
    "malliavin.n_r": (16, int, "r probes over one period"),
    "malliavin.n_t": (16, int, "t probes over one period"),
    "malliavin.C": (1.0, float, "multiplicative constant in A and B"),
    "malliavin.kappa": (0.0, float, "probe input z = kappa Y1"),
    "malliavin.eps": ([1e-3, 1e-1, 1.0], list, "Cameron-Martin bump sizes"),
    "malliavin.alpha_grid": (257, int, "Nystrom nodes for the alpha equation"),
    "outputs.directory": ("out", str, "directory for reports and CSVs"),
    "outputs.formats": (["json", "csv"], list, "artifact formats"),
}


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value, typ):
    if value is None:
        return None
    try:
        if typ is float:
            if isinstance(value, bool):
                raise TypeError
            v = float(value)
            if not math.isfinite(v):
                raise ValidationError(key, "must be finite")
            return v
        if typ is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if typ is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if typ is list:
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return list(value)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(key, f"expected {typ.__name__}, got {value!r}") from None
    return value


def _multiple(length, dt):
    n = round(length / dt)
    return abs(n * dt - length) <= 1e-9 * max(1.0, abs(length))


@dataclass
class ExperimentConfig:
    values: dict
    source: str | None = None
    explicit: set = field(default_factory=set)

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return dict(sorted(self.values.items()))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """Git blob hash of the canonical JSON form."""
        body = self.canonical_json().encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    # builders

    def operator(self):
        return build_interval_operator(self["operator.c"], self["operator.n_modes"],
                                       self["operator.n_grid"])

    def modulation(self, stationary: bool = False) -> Modulation:
        return Modulation.power_law(self["operator.n_modes"], self["noise.sigma_scale"],
                                    self["noise.sigma_hat_decay"], self["period.tau"],
                                    0.0 if stationary else self["noise.epsilon"])

    def nonlinearity(self, op):
        kind, tau = self["F.kind"], self["period.tau"]
        if kind == "zero":
            return SineNonlinearity(0.0, 0.0, tau)
        if kind == "sine":
            return SineNonlinearity(self["F.a"], self["F.b"], tau)
        if kind == "constant":
            return ConstantFieldNonlinearity(op, self["F.coefficients"], tau)
        a = self["F.a"]
        return TruncatedNonlinearity(lambda u: a * u, self["F.N"], op,
                                     fprime=lambda u: np.full_like(u, a), tau=tau)

    def solver(self, n_samples=None, dt=None) -> SolverConfig:
        return SolverConfig(
            dt=self["noise.dt"] if dt is None else dt, tau=self["period.tau"],
            eps_trunc=self["truncation.eps_trunc"], damping=self["solver.lambda"],
            max_iters=self["solver.max_iters"], residual_tol=self["solver.residual_tol"],
            n_samples=self["noise.n_samples"] if n_samples is None else n_samples,
            seed_base=self["noise.seed_base"], t0=self["period.t0"])


def from_mapping(raw: dict, source=None) -> ExperimentConfig:
    flat = _flatten(raw)
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        raise ValidationError(unknown[0], "unknown key")
    values = {}
    for key, (default, typ, _) in DEFAULTS.items():
        values[key] = _coerce(key, flat[key], typ) if key in flat else default
    cfg = ExperimentConfig(values, source, set(flat))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    v = cfg.values

    def need(key, ok, msg):
        if not ok:
            raise ValidationError(key, msg)

    need("operator.n_modes", v["operator.n_modes"] >= 1, "must be >= 1")
    need("operator.n_grid", v["operator.n_grid"] >= 4 * v["operator.n_modes"],
         f"must be >= 4 * operator.n_modes = {4 * v['operator.n_modes']}")
    k = np.arange(1, v["operator.n_modes"] + 1)
    need("operator.c", np.all(np.abs(v["operator.c"] - 0.5 * k**2) > 1e-9),
         "gives a zero eigenvalue (operator not hyperbolic)")
    need("noise.seed_base", v["noise.seed_base"] >= 0, "must be >= 0")
    need("noise.n_samples", v["noise.n_samples"] >= 1, "must be >= 1")
    need("noise.dt", v["noise.dt"] > 0, "must be positive")
    need("noise.epsilon", 0 <= v["noise.epsilon"] < 1, "must lie in [0, 1)")
    need("noise.sigma_scale", v["noise.sigma_scale"] >= 0, "must be >= 0")
    need("period.tau", v["period.tau"] > 0, "must be positive")
    dt = v["noise.dt"]
    need("period.tau", _multiple(v["period.tau"], dt),
         f"period.tau not integer multiple of dt ({v['period.tau']} / {dt})")
    need("period.t0", _multiple(v["period.t0"], dt), "period.t0 not integer multiple of dt")
    need("truncation.eps_trunc", 0 < v["truncation.eps_trunc"] < 1, "must lie in (0, 1)")
    need("F.kind", v["F.kind"] in _F_KINDS, f"must be one of {', '.join(_F_KINDS)}")
    if v["F.kind"] == "constant":
        c = v["F.coefficients"]
        need("F.coefficients", c is not None and len(c) == v["operator.n_modes"],
             "kind=constant needs one coefficient per mode")
        need("F.coefficients", all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                   for x in c), "coefficients must be numbers")
    if v["F.kind"] == "truncated":
        need("F.N", v["F.N"] is not None and v["F.N"] > 0, "kind=truncated needs F.N > 0")
    lam = v["solver.lambda"]
    need("solver.lambda", lam is None or 0 < lam <= 1, "must lie in (0, 1]")
    need("solver.max_iters", v["solver.max_iters"] >= 1, "must be >= 1")
    need("solver.residual_tol", v["solver.residual_tol"] > 0, "must be positive")
    levels = v["verify.dt_levels"]
    if levels is not None:
        need("verify.dt_levels", len(levels) >= 2 and all(x > 0 for x in levels),
             "needs at least two positive levels")
        for x in levels:
            need("verify.dt_levels", _multiple(v["period.tau"], x),
                 f"period.tau not integer multiple of level {x}")
    need("verify.shift_probes", v["verify.shift_probes"] >= 0, "must be >= 0")
    s_levels = v["stationary.dt_levels"]
    need("stationary.dt_levels", len(s_levels) >= 2 and all(x > 0 for x in s_levels),
         "needs at least two positive levels")
    for t in v["stationary.t_probes"]:
        need("stationary.t_probes", t > 0 and all(_multiple(t, x) for x in s_levels),
             f"probe {t} is not a multiple of every level")
    need("stationary.ref_factor", v["stationary.ref_factor"] >= 1, "must be >= 1")
    need("stationary.n_samples", v["stationary.n_samples"] >= 2, "must be >= 2")
    need("malliavin.dt", _multiple(v["period.tau"], v["malliavin.dt"]),
         "period.tau not integer multiple of malliavin.dt")
    need("malliavin.n_samples", v["malliavin.n_samples"] >= 2, "must be >= 2")
    need("malliavin.n_r", v["malliavin.n_r"] >= 1, "must be >= 1")
    need("malliavin.n_t", v["malliavin.n_t"] >= 1, "must be >= 1")
    need("malliavin.C", v["malliavin.C"] > 0, "must be positive")
    need("malliavin.eps", len(v["malliavin.eps"]) >= 1 and all(e > 0 for e in v["malliavin.eps"]),
         "needs positive bump sizes")
    need("malliavin.alpha_grid", v["malliavin.alpha_grid"] >= 3, "must be >= 3")
    need("outputs.formats", set(v["outputs.formats"]) <= {"json", "csv"},
         "formats are json and csv")


def load_config(path) -> ExperimentConfig:
    """Read, flatten, default-fill and validate a config file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc.strerror or exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ParseError(problem, line) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError("top level must be a key/value mapping", 1)
    return from_mapping(raw, str(p))


def help_text() -> str:
    rows = [f"  {k:<24} {'' if d is None else d!s:<18} {h}" for k, (d, _, h) in DEFAULTS.items()]
    return "config keys (default, meaning):\n" + "\n".join(rows)
