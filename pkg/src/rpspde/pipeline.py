"""Stage orchestration, persistence and the run report."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .convolution import y1_bound_report
from .errors import NotConverged, ValidationError
from .fixed_point import bound_certificates, contraction_estimate, m_sup_bound, picard_solve
from .integrator import verify_random_periodic, verify_stationary
from .malliavin import (alpha_constants, bound_chain, directional_derivative_check,
                        kernel_decay_report, solve_alpha)
from .noise import NoisePath, path_header
from .nonlinearity import SineNonlinearity
from .spectral import gradient_bound_report

log = logging.getLogger(__name__)

STAGES = ("eigs", "y1", "solve", "verify", "malliavin", "stationary")
_REQUIRES = {"verify": "solve"}
SCHEMA = 1


@dataclass
class RunReport:
    config: dict
    config_hash: str
    stages: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    def payload(self) -> dict:
        """Everything except timings; a pure function of the config."""
        return {"schema": SCHEMA, "config": self.config, "config_hash": self.config_hash,
                "stages": self.stages}

    def to_dict(self) -> dict:
        return {**self.payload(), "timings": self.timings, "artifacts": self.artifacts}

    def payload_json(self) -> str:
        return json.dumps(_jsonable(self.payload()), sort_keys=True, indent=2)

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def parse_stages(spec) -> list[str]:
    names = [s.strip() for s in (spec.split(",") if isinstance(spec, str) else spec) if s.strip()]
    bad = [s for s in names if s not in STAGES]
    if bad:
        raise ValidationError("stages", f"unknown stage {bad[0]!r}; choose from {', '.join(STAGES)}")
    for s in names:
        dep = _REQUIRES.get(s)
        if dep and dep not in names:
            raise ValidationError("stages", f"{s} requires {dep}")
    return [s for s in STAGES if s in names]


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


class _Run:
    def __init__(self, cfg: ExperimentConfig, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir) if out_dir is not None else None
        self.csv = self.out is not None and "csv" in cfg["outputs.formats"]
        self.op = cfg.operator()
        self.mod = cfg.modulation()
        self.F = cfg.nonlinearity(self.op)
        self.solve_result = None
        self.artifacts = {}

    def _artifact(self, name):
        self.artifacts[name] = name
        return self.out / name

    def eigs(self):
        op, F = self.op, self.F
        return {"operator": op.to_record(), "gradient_bound": gradient_bound_report(op),
                "contraction_q": contraction_estimate(op, F), "m_bound": m_sup_bound(op, F),
                "nonlinearity": F.describe()}

    def y1(self):
        c = self.cfg
        rep = y1_bound_report(self.op, self.mod, max(c["noise.n_samples"], 100), c["noise.dt"],
                              c["truncation.eps_trunc"], c["noise.seed_base"], c["period.t0"])
        if self.csv:
            n_cut = int(round(rep["t_cut"] / c["noise.dt"]))
            i0 = int(round(c["period.t0"] / c["noise.dt"]))
            n_tau = int(round(c["period.tau"] / c["noise.dt"]))
            rows = []
            for s in range(c["noise.seed_base"], c["noise.seed_base"] + max(c["noise.n_samples"], 100)):
                rows.append([path_header(s, c["noise.dt"], self.op.n_modes, i0 - n_cut,
                                         i0 + n_tau + n_cut)])
            _write_csv(self._artifact("noise_headers.csv"), ["header"], rows)
        return rep

    def solve(self):
        c = self.cfg
        res = picard_solve(self.op, self.F, self.mod, c.solver(), raise_on_failure=False)
        self.solve_result = res
        res.report.certificates = bound_certificates(self.op, self.F, res)
        out = {"iteration": res.report.to_dict(), "t_cut": res.t_cut,
               "ensemble_mean_norm_sq": float(np.mean(res.y.norm_sq()))}
        if self.out is not None:
            self._persist_solve(res)
        if not res.report.converged:
            exc = NotConverged(f"residual {res.report.residuals[-1]:.3e} above "
                               f"{res.report.residual_tol:.1e} after {res.report.n_iters} iterations",
                               res)
            exc.partial = out
            raise exc
        return out

    def _persist_solve(self, res):
        rep = res.report
        if self.csv:
            _write_csv(self._artifact("solve_residuals.csv"), ["iteration", "residual"],
                       [[k + 1, repr(float(r))] for k, r in enumerate(rep.residuals)])
            y = res.y.values
            mean, var = y.mean(axis=0), y.var(axis=0)
            n = self.op.n_modes
            header = ["t"] + [f"mean_{i + 1}" for i in range(n)] + [f"var_{i + 1}" for i in range(n)]
            rows = [[repr(float(t))] + [repr(float(v)) for v in mean[k]] + [repr(float(v)) for v in var[k]]
                    for k, t in enumerate(res.y.times)]
            _write_csv(self._artifact("solution_ensemble.csv"), header, rows)
        if "json" in self.cfg["outputs.formats"]:
            self._artifact("certificates.json").write_text(
                json.dumps(_jsonable(rep.certificates), sort_keys=True, indent=2))

    def verify(self):
        c = self.cfg
        levels = c["verify.dt_levels"] or [2 * c["noise.dt"], c["noise.dt"]]
        solver = c.solver()
        known = {c["noise.dt"]: self.solve_result} if self.solve_result is not None else {}
        rep = verify_random_periodic(self.op, self.F, self.mod, solver, levels,
                                     c["verify.shift_probes"], results=known)
        out = rep.to_dict()
        if self.csv:
            _write_csv(self._artifact("verify_levels.csv"), ["dt", "relative_error"],
                       [[repr(d), repr(e)] for d, e in zip(rep.dt_levels, rep.errors_by_level)])
        return out

    def stationary(self):
        c = self.cfg
        F = self.F
        if isinstance(F, SineNonlinearity) and F.b != 0:
            # the stationary theory needs an autonomous drift; drop the forcing
            F = SineNonlinearity(F.a, 0.0, F.tau)
        rep = verify_stationary(self.op, F, c.modulation(stationary=True), c["stationary.n_samples"],
                                tuple(c["stationary.t_probes"]), tuple(c["stationary.dt_levels"]),
                                c["stationary.ref_factor"], c["truncation.eps_trunc"],
                                c["noise.seed_base"], c["solver.residual_tol"], c["solver.max_iters"])
        out = rep.to_dict()
        out["drift"] = F.describe()
        return out

    def malliavin(self):
        c = self.cfg
        op, mod, F = self.op, self.mod, self.F
        dt, tau = c["malliavin.dt"], c["period.tau"]
        n_tau = int(round(tau / dt))
        t0 = c["period.t0"]
        r = [t0 + dt * (n_tau * k // c["malliavin.n_r"]) for k in range(c["malliavin.n_r"])]
        t = [t0 + dt * (n_tau * k // c["malliavin.n_t"]) for k in range(c["malliavin.n_t"])]
        t_cut = math.ceil(math.log(1 / c["truncation.eps_trunc"]) / op.spectral_gap / dt) * dt
        n_cut = int(round(t_cut / dt))
        path = NoisePath(c["noise.seed_base"], op.n_modes, dt, -n_cut - 2 * n_tau, n_cut + 2 * n_tau)
        bump_start = t0 + dt * (n_tau // 4)
        gaps = [directional_derivative_check(op, path, mod, t0 + dt * (n_tau // 2),
                                             (bump_start, dt * (n_tau // 8), e), t_cut)["gap"]
                for e in c["malliavin.eps"]]
        A, B, beta = alpha_constants(op, F, mod, tau, c["malliavin.C"])
        alpha = solve_alpha(A, B, beta, tau, r[0], c["malliavin.alpha_grid"])
        seeds = range(c["noise.seed_base"], c["noise.seed_base"] + c["malliavin.n_samples"])
        chain = bound_chain(op, F, mod, seeds, r, t, dt, tau, c["truncation.eps_trunc"],
                            c["malliavin.kappa"], c["malliavin.C"], c["malliavin.alpha_grid"])
        if self.csv:
            rows = [[repr(ri), repr(ti), repr(chain["empirical"][a][b]), repr(chain["alpha"][a][b])]
                    for a, ri in enumerate(r) for b, ti in enumerate(t)]
            _write_csv(self._artifact("malliavin_bound_chain.csv"),
                       ["r", "t", "empirical", "alpha"], rows)
        return {"directional_gaps": dict(zip(map(repr, c["malliavin.eps"]), gaps)),
                "alpha": alpha.to_dict(), "kernel_decay": kernel_decay_report(op, mod, r, t),
                "bound_chain": {k: v for k, v in chain.items() if k not in ("empirical", "alpha", "stderr")}
                | {"max_empirical": float(np.max(chain["empirical"]))}}


def run_pipeline(cfg: ExperimentConfig, stages, out_dir=None, report_path=None) -> RunReport:
    """Run ``stages`` in canonical order; persist artifacts when ``out_dir`` is given.

    Module errors propagate with a ``stage`` attribute naming where they
    happened; the partial report is attached as ``report``.
    """
    names = parse_stages(stages)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    report = RunReport(cfg.to_dict(), cfg.content_hash())
    try:
        run = _Run(cfg, out_dir)
    except Exception as exc:
        exc.stage = "setup"
        exc.report = report
        raise
    try:
        for name in names:
            t = time.perf_counter()
            log.info("stage %s", name)
            try:
                report.stages[name] = getattr(run, name)()
            except Exception as exc:
                exc.stage = name
                if hasattr(exc, "partial"):
                    report.stages[name] = exc.partial
                exc.report = report
                raise
            finally:
                report.timings[name] = time.perf_counter() - t
    finally:
        report.artifacts = dict(run.artifacts)
        if out_dir is not None or report_path is not None:
            target = Path(report_path) if report_path else Path(out_dir) / "report.json"
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(report.to_json())
    return report
