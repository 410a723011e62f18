"""Smoke tests for the command-line harness."""

import json
import os

import pytest

from pnphom import cli

SMALL = {
    "geometry": {"n_interface_segments": 32, "target_edge_length": 1.0 / 16},
    "eps_list": [2],
    "n_omega_samples": 1,
    "macro_resolution": 24,
    "K": 8,
    "pnp": {"t_final": 0.04, "dt": 0.02, "n_outputs": 2},
    "twoscale": {"M": 4, "eps_list": [2, 4]},
}


@pytest.fixture()
def small_cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def run_cli(argv):
    return cli.main(argv)


def test_console_entry_point():
    from importlib.metadata import entry_points
    scripts = entry_points(group="console_scripts")
    matches = [e for e in scripts if e.name == "pnphom"]
    assert matches and matches[0].value == "pnphom.cli:main"


def test_mesh_command(small_cfg, tmp_path):
    out = str(tmp_path / "mesh")
    rc = run_cli(["mesh", "--config", small_cfg, "--out", out,
                  "--tile", "2", "--dump"])
    assert rc == 0
    names = set(os.listdir(out))
    assert {"mesh_stats.csv", "mesh_template.txt", "mesh_tiled_n2.txt",
            "config_used.json"} <= names
    lines = open(os.path.join(out, "mesh_stats.csv")).read().splitlines()
    assert lines[0] == "mesh,n_vertices,n_triangles,fluid_area,interface_length"
    assert len(lines) == 3
    assert lines[1].startswith("template,")
    assert lines[2].startswith("tiled_n2,")


def test_mesh_rejects_bad_tile(small_cfg, tmp_path):
    with pytest.raises(SystemExit) as err:
        run_cli(["mesh", "--config", small_cfg,
                 "--out", str(tmp_path / "x"), "--tile", "0"])
    assert err.value.code == 2


def test_twoscale_command(small_cfg, tmp_path, capsys):
    out = str(tmp_path / "ts")
    rc = run_cli(["twoscale", "--config", small_cfg, "--out", out])
    assert rc == 0
    names = set(os.listdir(out))
    for kind in ("volume", "surface"):
        for integrand in ("constant", "x_only", "y_only", "triple"):
            assert "%s_%s.csv" % (kind, integrand) in names
    text = capsys.readouterr().out
    assert "volume oscillation: triple" in text
    assert "surface oscillation: constant" in text


def test_micro_command(small_cfg, tmp_path, capsys):
    out = str(tmp_path / "micro")
    rc = run_cli(["micro", "--config", small_cfg, "--out", out])
    assert rc == 0
    names = set(os.listdir(out))
    assert "micro_ledger_eps_1_2_omega_0.csv" in names
    assert "micro_final_eps_1_2_omega_0.csv" in names
    text = capsys.readouterr().out
    assert "mass drift" in text
    header = open(os.path.join(
        out, "micro_ledger_eps_1_2_omega_0.csv")).readline().strip()
    assert header == "t,mass_plus,mass_minus,pi_eps,min_conc,gummel_iters"


def test_effective_command(small_cfg, tmp_path, capsys):
    out = str(tmp_path / "eff")
    rc = run_cli(["effective", "--config", small_cfg, "--out", out])
    assert rc == 0
    doc = json.load(open(os.path.join(out, "effective.json")))
    assert set(doc) >= {"theta", "A_hom", "B_hom", "theta_eff", "s_bar"}
    assert "A_hom" in capsys.readouterr().out


def test_macro_command(small_cfg, tmp_path, capsys):
    out = str(tmp_path / "macro")
    rc = run_cli(["macro", "--config", small_cfg, "--out", out])
    assert rc == 0
    names = set(os.listdir(out))
    assert {"macro_ledger.csv", "macro_final.csv",
            "effective.json"} <= names
    assert "equilibrium residual" in capsys.readouterr().out


def test_sweep_command(small_cfg, tmp_path, capsys):
    out = str(tmp_path / "sweep")
    rc = run_cli(["sweep", "--config", small_cfg, "--out", out,
                  "--threads", "2"])
    assert rc == 0
    names = set(os.listdir(out))
    assert {"sweep_report.csv", "sweep_summary.json", "sweep_timings.json",
            "plot_err_conc_plus.tsv", "plot_err_conc_minus.tsv",
            "plot_err_potential.tsv", "config_used.json"} <= names
    assert "macro equilibrium residual" in capsys.readouterr().out


def test_seed_override(small_cfg, tmp_path):
    out = str(tmp_path / "m")
    rc = run_cli(["mesh", "--config", small_cfg, "--out", out,
                  "--seed", "42"])
    assert rc == 0
    doc = json.load(open(os.path.join(out, "config_used.json")))
    assert doc["seed"] == 42


def test_bad_config_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"eps_list": []}))
    with pytest.raises(SystemExit) as err:
        run_cli(["mesh", "--config", str(path),
                 "--out", str(tmp_path / "o")])
    assert err.value.code == 2


def test_missing_subcommand_exits_2():
    with pytest.raises(SystemExit) as err:
        run_cli([])
    assert err.value.code == 2


def test_no_deterministic_flag(small_cfg, tmp_path):
    out = str(tmp_path / "sweepnd")
    rc = run_cli(["sweep", "--config", small_cfg, "--out", out,
                  "--no-deterministic"])
    assert rc == 0
    report = open(os.path.join(out, "sweep_report.csv")).read().splitlines()
    wall = float(report[1].split(",")[-1])
    assert wall > 0.0
