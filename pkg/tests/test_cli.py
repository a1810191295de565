from __future__ import annotations

import textwrap

import pytest

from cmjbranch import cli

REF_LAW = """
[law]
kind = bernoulli_split
p = {p}
lifetime = exponential
lifetime_mean = 1.0
"""


def _write(tmp_path, law=REF_LAW.format(p=0.75), run="", verify="", name="run.ini"):
    text = textwrap.dedent(law) + "\n[run]\n" + textwrap.dedent(run)
    if verify:
        text += "\n[verify]\n" + textwrap.dedent(verify)
    path = tmp_path / name
    path.write_text(text)
    return path


SMALL_RUN = """
horizon_T = 10
grid_start = 0
grid_stop = 10
grid_step = 0.5
replicas = 1000
seed = 3
"""


def test_constants_command(tmp_path, capsys):
    cfg = _write(tmp_path, run=SMALL_RUN)
    assert cli.main(["constants", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    lines = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert abs(float(lines["alpha"]) - 0.5) <= 1e-10
    assert abs(float(lines["c_inf"]) - 1.5) <= 1e-10
    assert lines["alpha.provenance"]
    assert (tmp_path / "o" / "constants.csv").read_text().startswith("alpha,m_prime_alpha,")


def test_subcritical_law_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, law=REF_LAW.format(p=0.4), run=SMALL_RUN)
    assert cli.main(["constants", "--config", str(cfg)]) == 2
    assert "(A1)" in capsys.readouterr().err


def test_degenerate_law_needs_flag(tmp_path, capsys):
    law = "[law]\nkind = deterministic_ages\nages = 1.0, 1.0\n"
    cfg = _write(tmp_path, law=law, run="horizon_T = 4\ngrid = 0.5, 1.5, 2.5, 3.5\nreplicas = 3\n")
    assert cli.main(["constants", "--config", str(cfg)]) == 2
    assert "(A4)" in capsys.readouterr().err
    out = tmp_path / "det"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--debug-degenerate"]) == 0
    rows = (out / "paths.csv").read_text().splitlines()
    assert rows[0] == "replica,t,W_t,Q_t,N_t,frontier_count,extinct,guard_tripped"
    assert len(rows) == 1 + 3 * 4
    assert all(r.split(",")[2] == "1.0" for r in rows[1:])
    assert [r.split(",")[4] for r in rows[1:5]] == ["1", "3", "7", "15"]


def test_simulate_independent_of_jobs(tmp_path, capsys):
    cfg = _write(tmp_path, run=SMALL_RUN.replace("replicas = 1000", "replicas = 30"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(a), "--jobs", "1"]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(b), "--jobs", "3"]) == 0
    for name in ("paths.csv", "generations.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = (a / "manifest.txt").read_text()
    assert "run.seed=3" in manifest and "constant.alpha=" in manifest and "extinct_fraction=" in manifest
    assert "replicas=30" in capsys.readouterr().out


def test_seed_override_changes_output(tmp_path):
    cfg = _write(tmp_path, run=SMALL_RUN.replace("replicas = 1000", "replicas = 5"))
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["simulate", "--config", str(cfg), "--out", str(a)])
    cli.main(["simulate", "--config", str(cfg), "--out", str(b), "--seed", "4"])
    assert (a / "paths.csv").read_bytes() != (b / "paths.csv").read_bytes()
    assert "run.seed=4" in (b / "manifest.txt").read_text()


def test_verify_passes_and_reuses_ensemble(tmp_path, capsys):
    cfg = _write(tmp_path, run=SMALL_RUN, verify="deltas = 1, 2, 4\nn_mc = 20000\nmeansq_t = 2\nmeansq_T = 10\n")
    out = tmp_path / "v"
    assert cli.main(["verify", "cdelta", "--config", str(cfg), "--out", str(out)]) == 0
    assert "suite=cdelta" in capsys.readouterr().out
    stamp = (out / "paths.csv").stat().st_mtime_ns
    assert cli.main(["verify", "meansq", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "paths.csv").stat().st_mtime_ns == stamp
    assert (out / "report_meansq.txt").exists()


def test_mis_scaled_constant_fails(tmp_path, capsys):
    verify = "t = 2\nT = 10\nmin_retained = 300\nn_mc = 20000\ndebug_c_scale = 4\n"
    cfg = _write(tmp_path, run=SMALL_RUN, verify=verify)
    assert cli.main(["verify", "clt", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 1
    assert "check.abs_var_minus_1=" in capsys.readouterr().out
    assert "FAIL" in (tmp_path / "c" / "report_clt.txt").read_text()


def test_failed_precondition_removes_partial_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, run=SMALL_RUN.replace("replicas = 1000", "replicas = 20"))
    out = tmp_path / "lil"
    assert cli.main(["verify", "lil", "--config", str(cfg), "--out", str(out)]) == 2
    assert "exceeds T" in capsys.readouterr().err
    assert list(out.iterdir()) == []


def test_lattice_laws_are_not_verified(tmp_path, capsys):
    law = "[law]\nkind = iid_litter\ncount = fixed\ncount_n = 2\nage = fixed\nage_a = 1.0\n"
    cfg = _write(tmp_path, law=law, run="horizon_T = 10\ngrid_step = 1\nreplicas = 2\n")
    assert cli.main(["verify", "meansq", "--config", str(cfg), "--out", str(tmp_path / "x"), "--debug-degenerate"]) == 2
    assert "non-lattice" in capsys.readouterr().err


@pytest.mark.parametrize(
    "law, run",
    [
        ("[other]\nx = 1\n", SMALL_RUN),
        ("[law]\nkind = zebra\n", SMALL_RUN),
        ("[law]\nkind = bernoulli_split\np = lots\n", SMALL_RUN),
        ("[law]\nkind = poisson_ages\n", SMALL_RUN),
        ("[law]\nkind = iid_litter\ncount = binomial\n", SMALL_RUN),
        (REF_LAW.format(p=0.75), "horizon_T = 10\ngrid_step = 0\n"),
        (REF_LAW.format(p=0.75), "horizon_T = 10\ngrid = 1, 12\n"),
        (REF_LAW.format(p=0.75), "horizon_T = 10\ngrid_step = 1\nreplicas = 0\n"),
        (REF_LAW.format(p=0.75), "horizon_T = 10\ngrid_step = 1\nage_cap = 2\n"),
    ],
)
def test_bad_configuration_exits_2(tmp_path, capsys, law, run):
    cfg = _write(tmp_path, law=law, run=run)
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("error: ")


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["constants", "--config", str(tmp_path / "nope.ini")]) == 2


def test_grid_grammar():
    import configparser

    p = configparser.ConfigParser()
    p.read_string(REF_LAW.format(p=0.75) + "[run]\nhorizon_T = 1\ngrid_step = 0.1\n")
    cfg = cli.RunConfig.from_parser(p)
    assert cfg.grid == tuple(k / 10 for k in range(11))
    assert cfg.grid[3] == 0.3


def test_shipped_reference_config(tmp_path, capsys):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "reference.ini"
    cfg = cli.RunConfig.load(path)
    assert cfg.replicas == 10_000 and cfg.grid[-1] == 20.0 and len(cfg.grid) == 201
    assert cfg.vfloat("t") == 6.0 and cfg.vfloat("T") == 18.0
    assert cli.main(["constants", "--config", str(path), "--out", str(tmp_path)]) == 0
    assert "c_inf=1.5" in capsys.readouterr().out
