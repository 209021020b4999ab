import json
import time

import numpy as np
import pytest
import yaml

from rpspde.cli import main
from rpspde.config import DEFAULTS, from_mapping, help_text, load_config
from rpspde.errors import ParseError, ValidationError
from rpspde.malliavin import alpha_constants
from rpspde.pipeline import parse_stages, run_pipeline

FAST = {
    "noise.n_samples": 4, "noise.dt": 0.01, "verify.shift_probes": 1,
    "stationary.n_samples": 4, "stationary.dt_levels": [0.04, 0.02],
    "stationary.ref_factor": 2, "stationary.t_probes": [0.2, 1.0],
    "malliavin.n_samples": 3, "malliavin.dt": 0.01, "malliavin.n_r": 4, "malliavin.n_t": 4,
}


def write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(data if isinstance(data, str) else yaml.safe_dump(data))
    return p


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_config(tmp_path / "nope.yaml")


def test_tau_not_multiple(tmp_path):
    with pytest.raises(ValidationError) as exc:
        load_config(write(tmp_path, {"period.tau": 1.0005, "noise.dt": 0.001}))
    assert exc.value.key == "period.tau"
    assert "period.tau not integer multiple of dt" in str(exc.value)


def test_defaults_filled(tmp_path):
    cfg = load_config(write(tmp_path, {"noise.dt": 0.01}))
    assert cfg["noise.dt"] == 0.01
    assert cfg["operator.c"] == DEFAULTS["operator.c"][0]
    assert cfg.explicit == {"noise.dt"}


def test_empty_file_is_all_defaults(tmp_path):
    cfg = load_config(write(tmp_path, ""))
    assert cfg.to_dict() == {k: v[0] for k, v in sorted(DEFAULTS.items())}


def test_nested_flattening(tmp_path):
    flat = load_config(write(tmp_path, {"F.a": 0.2}, "a.yaml"))
    nested = load_config(write(tmp_path, {"F": {"a": 0.2}}, "b.yaml"))
    assert flat.content_hash() == nested.content_hash()


def test_unknown_key(tmp_path):
    with pytest.raises(ValidationError) as exc:
        load_config(write(tmp_path, {"noise.dtt": 0.1}))
    assert exc.value.key == "noise.dtt"


def test_yaml_error_line(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_config(write(tmp_path, "noise.dt: 0.01\nF.a: [1, 2\nF.b: 3\n"))
    assert exc.value.line is not None and exc.value.line >= 2
    assert str(exc.value).startswith(f"line {exc.value.line}:")


def test_top_level_must_be_mapping(tmp_path):
    with pytest.raises(ParseError):
        load_config(write(tmp_path, "- 1\n- 2\n"))


@pytest.mark.parametrize("raw,key", [
    ({"operator.c": 0.5}, "operator.c"),
    ({"operator.n_grid": 16}, "operator.n_grid"),
    ({"noise.epsilon": 1.0}, "noise.epsilon"),
    ({"noise.dt": "fast"}, "noise.dt"),
    ({"solver.lambda": 1.5}, "solver.lambda"),
    ({"F.kind": "cubic"}, "F.kind"),
    ({"F.kind": "constant", "F.coefficients": [1.0]}, "F.coefficients"),
    ({"F.kind": "truncated"}, "F.N"),
    ({"truncation.eps_trunc": 0.0}, "truncation.eps_trunc"),
])
def test_validation(raw, key):
    with pytest.raises(ValidationError) as exc:
        from_mapping(raw)
    assert exc.value.key == key


def test_hash_is_content_address():
    a = from_mapping({"F.a": 0.1})
    b = from_mapping({})
    c = from_mapping({"F.a": 0.2})
    assert a.content_hash() == b.content_hash() != c.content_hash()
    assert len(a.content_hash()) == 40


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for key in ("operator.c", "noise.dt", "solver.lambda", "malliavin.alpha_grid"):
        assert key in out
    assert "0.001" in out and help_text().splitlines()[0] in out


def test_stage_parsing():
    assert parse_stages("verify,solve") == ["solve", "verify"]
    with pytest.raises(ValidationError):
        parse_stages("verify")
    with pytest.raises(ValidationError):
        parse_stages("eigs,fly")


def test_cli_stage_dependency_exit_code(tmp_path):
    p = write(tmp_path, FAST)
    assert main(["run", "--config", str(p), "--stages", "verify"]) == 2


def test_cli_validation_exit_code(tmp_path, capsys):
    p = write(tmp_path, {"period.tau": 1.0005, "noise.dt": 0.001})
    assert main(["eigs", "--config", str(p)]) == 2
    assert "period.tau not integer multiple of dt" in capsys.readouterr().err


def test_cli_missing_config_exit_code(tmp_path):
    assert main(["eigs", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_cli_eigs_prints_report(tmp_path, capsys):
    p = write(tmp_path, FAST)
    assert main(["eigs", "--config", str(p)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["stages"]["eigs"]["operator"]["eigenvalues"][0] == pytest.approx(0.5)
    assert rep["schema"] == 1


def test_cli_not_converged_exit_code(tmp_path):
    p = write(tmp_path, {**FAST, "solver.max_iters": 1})
    out = tmp_path / "o"
    assert main(["solve-rps", "--config", str(p), "--out", str(out)]) == 3
    rep = json.loads((out / "report.json").read_text())
    assert rep["stages"]["solve"]["iteration"]["converged"] is False


def test_cli_singular_kernel_exit_code(tmp_path):
    n = 33
    t = np.linspace(-2.0, 2.0, n)
    w = np.full(n, t[1] - t[0])
    w[[0, -1]] *= 0.5
    sq = np.sqrt(w)
    a_crit = 1.0 / np.linalg.eigvalsh(sq[:, None] * np.exp(-0.5 * np.abs(t[:, None] - t)) * sq)[-1]
    cfg = from_mapping(FAST)
    A1 = alpha_constants(cfg.operator(), cfg.nonlinearity(cfg.operator()), cfg.modulation(), 1.0)[0]
    p = write(tmp_path, {**FAST, "malliavin.alpha_grid": n, "malliavin.C": float(a_crit / A1)})
    assert main(["malliavin-check", "--config", str(p)]) == 4


def test_cli_out_json_path(tmp_path):
    p = write(tmp_path, FAST)
    target = tmp_path / "nested" / "r.json"
    assert main(["eigs", "--config", str(p), "--out", str(target)]) == 0
    assert json.loads(target.read_text())["stages"]["eigs"]


def test_zero_drift_pipeline(tmp_path):
    p = write(tmp_path, {**FAST, "F.kind": "zero"})
    out = tmp_path / "run"
    start = time.perf_counter()
    assert main(["run", "--config", str(p), "--out", str(out)]) == 0
    assert time.perf_counter() - start < 60
    rep = json.loads((out / "report.json").read_text())
    assert set(rep["stages"]) == {"eigs", "y1", "solve", "verify", "malliavin", "stationary"}
    assert rep["stages"]["solve"]["iteration"]["converged"]
    for name in ("solve_residuals.csv", "solution_ensemble.csv", "certificates.json",
                 "verify_levels.csv", "noise_headers.csv", "malliavin_bound_chain.csv"):
        assert (out / name).exists(), name


def test_runs_are_reproducible(tmp_path):
    cfg = from_mapping(FAST)
    a = run_pipeline(cfg, ["eigs", "y1", "solve", "verify"], tmp_path / "a")
    b = run_pipeline(cfg, ["eigs", "y1", "solve", "verify"], tmp_path / "b")
    assert a.payload_json() == b.payload_json()
    for name in ("solve_residuals.csv", "solution_ensemble.csv", "verify_levels.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
