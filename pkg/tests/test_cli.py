import json

import numpy as np
import pytest

from qbxfmm import cli
from qbxfmm.geometry import build_panels, fish_curve, unit_circle


def run_cli(argv):
    return cli.main(argv)


def load(path):
    with open(path) as f:
        return json.load(f)


# ------------------------------------------------------------- small helpers


def test_parse_grid():
    pts = cli._parse_grid("0,1,0,2,3,2")
    assert pts.shape == (6, 2)
    assert pts[0].tolist() == [0.0, 0.0]
    assert pts[-1].tolist() == [1.0, 2.0]
    for bad in ("0,1,0,2,3", "1,0,0,2,3,2", "0,1,0,2,0,2"):
        with pytest.raises(ValueError):
            cli._parse_grid(bad)


def test_inside_any_circle():
    d = build_panels(unit_circle(), 4, 1e-2)
    polys = cli._component_polygons(d)
    pts = np.array([[0.0, 0.0], [0.5, 0.5], [1.5, 0.0], [0.0, -2.0]])
    assert cli._inside_any(polys, pts).tolist() == [True, True, False, False]


def test_interior_points_land_inside():
    d = build_panels(fish_curve(), 4, 1e-1)
    pts = cli._interior_points(d, np.random.default_rng(0))
    assert pts.shape == (1, 2)
    assert cli._inside_any(cli._component_polygons(d), pts).all()


def test_profile_and_overrides():
    args = cli._build_parser().parse_args(["green-test", "--profile", "e7"])
    assert cli._profile_params(args) == (5e-7, 4, 4, 1e-3)
    args = cli._build_parser().parse_args(
        ["green-test", "--profile", "e7", "--eps", "1e-5", "--q", "8"]
    )
    eps, q, p, geps = cli._profile_params(args)
    assert (eps, q, p) == (1e-5, 8, 4)


# -------------------------------------------------------------- subcommands


def test_refine_report(tmp_path):
    out = str(tmp_path / "r")
    rc = run_cli(["refine", "--curve", "circle", "--q", "4", "--geps", "1e-2",
                  "--omega", "2", "--out", out])
    assert rc == 0
    rep = load(out + ".json")
    assert rep["passed"] is True
    assert rep["n_panels"] * 4 == rep["n_density"]
    assert all(v == [] for v in rep["flagged"].values())


def test_evaluate_grid_csv(tmp_path):
    out = str(tmp_path / "e")
    rc = run_cli(["evaluate", "--curve", "circle", "--q", "4", "--geps", "1e-2",
                  "--omega", "2", "--grid=-2,2,-2,2,4,4", "--kind", "slp",
                  "--out", out])
    assert rc == 0
    rep = load(out + ".json")
    assert rep["n_targets"] == 16
    assert rep["n_failed"] == 0
    lines = (tmp_path / "e.grid.csv").read_text().splitlines()
    assert lines[0] == "x,y,Re u,Im u,flag"
    assert len(lines) == 17


def test_green_test_deterministic_json(tmp_path):
    argv = ["green-test", "--curve", "circle", "--q", "4", "--geps", "1e-5",
            "--eps", "1e-7", "--p", "4", "--omega", "2", "--seed", "5"]
    rc1 = run_cli(argv + ["--out", str(tmp_path / "a")])
    rc2 = run_cli(argv + ["--out", str(tmp_path / "b")])
    assert rc1 == rc2 == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    rep = load(str(tmp_path / "a.json"))
    assert rep["boundary_error"] <= rep["tolerance"]


def test_green_test_volume_grid(tmp_path):
    out = str(tmp_path / "g")
    rc = run_cli(["green-test", "--curve", "circle", "--q", "4", "--geps", "1e-5",
                  "--eps", "1e-7", "--p", "4", "--omega", "2",
                  "--grid=-3,3,-3,3,7,7", "--out", out])
    assert rc == 0
    rep = load(out + ".json")
    assert 0 < rep["n_volume_targets"] < 49  # interior grid points dropped
    assert rep["volume_error"] <= rep["tolerance"]
    lines = (tmp_path / "g.grid.csv").read_text().splitlines()
    assert len(lines) == rep["n_volume_targets"] + 1


def test_scatter_circle(tmp_path):
    out = str(tmp_path / "s")
    rc = run_cli(["scatter", "--curve", "circle", "--q", "4", "--geps", "1e-2",
                  "--omega", "2", "--tol", "1e-5", "--out", out])
    assert rc == 0
    rep = load(out + ".json")
    assert rep["final_residual"] <= rep["tol"]
    sig = (tmp_path / "s.sigma.csv").read_text().splitlines()
    assert sig[0] == "x,y,Re sigma,Im sigma"
    assert len(sig) == rep["n_unknowns"] + 1


def test_scatter_placements(tmp_path):
    pl = tmp_path / "p.txt"
    pl.write_text("# two copies\n1 0 0 1 0 0\n1 0 0 1 0 5\n")
    out = str(tmp_path / "m")
    rc = run_cli(["scatter", "--curve", "circle", "--q", "4", "--geps", "1e-2",
                  "--omega", "2", "--tol", "1e-5",
                  "--placements", str(pl), "--out", out])
    assert rc == 0
    rep = load(out + ".json")
    assert rep["n_components"] == 2


def test_placements_parse_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("1 0 0 1 0\n")
    with pytest.raises(ValueError):
        cli._load_placements(str(bad))
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(ValueError):
        cli._load_placements(str(empty))


def test_calibrate_qhat_small(tmp_path):
    out = str(tmp_path / "q")
    rc = run_cli(["calibrate-qhat", "--orders", "2", "--tolerances", "1e-3,1e-6",
                  "--out", out])
    assert rc == 0
    table = load(out + ".json")["table"]
    assert table["q=2,eps=0.001"] <= table["q=2,eps=1e-06"]  # monotone in 1/eps


def test_bench_report_structure(tmp_path):
    out = str(tmp_path / "b")
    rc = run_cli(["bench", "--curve", "circle", "--q", "4", "--geps", "1e-2",
                  "--omega", "2", "--eps", "1e-6", "--p", "4",
                  "--sizes", "200,400", "--out", out])
    assert rc in (0, 1)  # overhead band is only meaningful at larger n
    rep = load(out + ".json")
    assert len(rep["rows"]) == 2
    assert rep["rows"][0]["n_source"] >= 200
    assert rep["rows"][1]["n_source"] >= 2 * rep["rows"][0]["n_source"]
    assert len(rep["doubling_ratios"]) == 1


def test_bad_curve_file_is_exit_2(tmp_path, capsys):
    bad = tmp_path / "c.txt"
    bad.write_text("not a curve\n")
    rc = run_cli(["refine", "--curve", str(bad)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_missing_grid_is_exit_2(capsys):
    rc = run_cli(["evaluate", "--curve", "circle", "--q", "4", "--geps", "1e-2"])
    assert rc == 2
