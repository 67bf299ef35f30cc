import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kleinwave.cli import main
from kleinwave.config import ConfigError, RunConfig, format_config, parse_config, parse_starts

MINIMAL = "experiment = verify-potential\noutput = out\n"


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.potential.a == 0.25 and cfg.potential.b == 0.03125
    assert cfg.charge.sigma == 20.0
    assert cfg.solver.grad_tol == 1e-6 and cfg.solver.max_iters == 20000
    assert cfg.solver.armijo_c == 1e-4 and cfg.solver.backtrack == 0.5
    assert cfg == parse_config(MINIMAL)


def test_negative_sigma_names_field():
    with pytest.raises(ConfigError, match="sigma"):
        parse_config(MINIMAL + "[charge]\nsigma = -1\n")


def test_duplicate_key_reports_both_lines():
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL + "[charge]\nsigma = 1\n# c\nsigma = 2\n")
    msg = str(err.value)
    assert "line 6" in msg and "line 4" in msg


@pytest.mark.parametrize(
    "text",
    ["[nope]\n", "[charge]\nbogus = 1\n", "[charge]\nsigma\n", "[charge\n", "[charge]\nsigma = abc\n",
     "experiment = fly\n", "[domain]\ngamma = 1.0\n", "[scan]\nstarts = 1 2 3\n"],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_overrides_applied_last():
    cfg = parse_config(MINIMAL + "[charge]\neps = 0.5\n", ["charge.eps=0.25", "solver.method=steepest"])
    assert cfg.charge.eps == 0.25
    assert cfg.solver.method == "steepest"
    with pytest.raises(ConfigError):
        parse_config(MINIMAL, ["nosection.x=1"])


@settings(max_examples=30, deadline=None)
@given(
    st.floats(1e-3, 1e3, allow_nan=False),
    st.floats(1e-3, 10.0),
    st.lists(st.floats(0.1, 50.0), min_size=1, max_size=5),
    st.sampled_from(["lattice", "antipodal", "0.5 0; -0.5 0"]),
    st.booleans(),
)
def test_format_round_trip(sigma, eps, rhos, starts, certify):
    text = (
        MINIMAL
        + f"[charge]\nsigma = {sigma!r}\neps = {eps!r}\n"
        + f"[scan]\nrho_list = {', '.join(map(repr, rhos))}\nstarts = {starts}\ncertify = {str(certify).lower()}\n"
    )
    cfg = parse_config(text)
    assert parse_config(format_config(cfg)) == cfg


def test_parse_starts():
    assert parse_starts("lattice") is None
    assert parse_starts("antipodal") == "antipodal"
    assert parse_starts("1 2; -1 -2") == [(1.0, 2.0), (-1.0, -2.0)]


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_minimize_ball(tmp_path):
    cfg = _write(
        tmp_path,
        "experiment = minimize\n[charge]\nsigma = 20\neps = 1\n[domain]\nshape = ball\nrho = 4\nn_per_unit = 16\n",
    )
    out = tmp_path / "o"
    assert main([cfg, "--out", str(out)]) == 0
    lines = (out / "results.csv").read_text().strip().splitlines()
    assert len(lines) == 2
    assert (out / "minimizer.field").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == 1
    assert summary["result"]["converged"]
    log = (out / "run.log").read_text()
    assert "seed 0" in log and "wall time" in log


def test_cli_scan_rho_rows(tmp_path):
    cfg = _write(
        tmp_path,
        "experiment = scan-rho\n[domain]\nn_per_unit = 8\n[scan]\nrho_list = 2, 3, 4, 5, 6\n",
    )
    out = tmp_path / "o"
    assert main([cfg, "--out", str(out)]) == 0
    assert len((out / "results.csv").read_text().strip().splitlines()) == 6
    summary = json.loads((out / "summary.json").read_text())
    assert summary["verdicts"]["strictly_decreasing"]


def test_cli_multiplicity_summary(tmp_path):
    cfg = _write(
        tmp_path,
        "experiment = multiplicity\n[charge]\neps = 0.25\n[domain]\nshape = annulus\nrho = 1\ngamma = 3\n"
        "r = 0.25\ncat_hint = 2\nh = 0.125\n[scan]\nstarts = 2 0; -2 0\n",
    )
    out = tmp_path / "o"
    assert main([cfg, "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert {"distinct_count", "energies", "barycenters", "verdicts", "schema_version"} <= set(s)
    assert s["distinct_count"] == 2
    assert len(list(out.glob("solution_*.field"))) == 2


def test_cli_reproducible(tmp_path):
    cfg = _write(tmp_path, "experiment = minimize\n[domain]\nrho = 3\nn_per_unit = 16\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([cfg, "--out", str(a)]) == 0
    assert main([cfg, "--out", str(b)]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_cli_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, "experiment = minimize\n[charge]\nsigma = -1\n")
    assert main([bad, "--out", str(tmp_path / "x")]) == 2
    assert "sigma" in capsys.readouterr().err
    assert main([str(tmp_path / "missing.cfg")]) == 1
    blocker = tmp_path / "file"
    blocker.write_text("")
    good = _write(tmp_path, MINIMAL, "good.cfg")
    assert main([good, "--out", str(blocker / "sub")]) == 1


def test_cli_verify_potential(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    out = tmp_path / "o"
    assert main([cfg, "--out", str(out), "--set", "potential.growth_exp=2.5"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert all(s["verdicts"].values())
