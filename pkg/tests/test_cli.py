import csv
import math

import pytest

from qsi import statistics
from qsi.cli import main, parse_grid


def write_config(path, **over):
    base = dict(grid_width=40, grid_height=40, lo_waist_px=12, n_pxl=0.1, clusters=120, seed=3)
    base.update(over)
    path.write_text("# test config\n" + "".join(f"{k} = {v}\n" for k, v in base.items()))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    results = [line for line in out.splitlines() if line.startswith("RESULT ")]
    fields = {}
    if results:
        for tok in results[-1].split()[1:]:
            k, _, v = tok.partition("=")
            fields[k] = v
    return code, results, fields


@pytest.fixture
def stacks(tmp_path, capsys):
    cfg = write_config(tmp_path / "run.cfg")
    code, _, f = run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "p.qsif", "--ref", tmp_path / "r.qsif")
    assert code == 0
    return tmp_path, cfg, f


def test_simulate_result_line_and_rerun_identity(stacks, capsys):
    tmp_path, cfg, f = stacks
    assert f["command"] == "simulate" and f["clusters"] == "120" and f["width"] == "40"
    code, results, _ = run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "p2.qsif")
    assert code == 0 and len(results) == 1
    assert (tmp_path / "p.qsif").read_bytes() == (tmp_path / "p2.qsif").read_bytes()
    run(capsys, "simulate", "--config", cfg, "--seed", 4, "--out", tmp_path / "p3.qsif")
    assert (tmp_path / "p.qsif").read_bytes() != (tmp_path / "p3.qsif").read_bytes()


def test_reconstruct_half_block(stacks, capsys):
    tmp_path, _, _ = stacks
    code, results, f = run(capsys, "reconstruct", "--in", tmp_path / "p.qsif", "--ref", tmp_path / "r.qsif",
                           "--bin-radius", 1, "--out-var", tmp_path / "v.csv", "--out-trans", tmp_path / "t.pgm",
                           "--format", "pgm")
    assert code == 0 and len(results) == 1
    assert float(f["contrast"]) > 0.8
    assert abs(float(f["t_dark"])) < 0.2 and abs(float(f["t_bright"]) - 1) < 0.2
    assert (tmp_path / "t.pgm").exists() and (tmp_path / "v.csv").exists()


def test_binning_raises_bright_excess(stacks, capsys):
    tmp_path, _, _ = stacks
    _, _, f0 = run(capsys, "reconstruct", "--in", tmp_path / "p.qsif", "--ref", tmp_path / "r.qsif", "--bin-radius", 0)
    _, _, f1 = run(capsys, "reconstruct", "--in", tmp_path / "p.qsif", "--ref", tmp_path / "r.qsif", "--bin-radius", 1)
    assert float(f1["v_bright"]) - 1 > 3 * (float(f0["v_bright"]) - 1)


def test_reconstruct_refuses_mismatched_reference(stacks, capsys):
    tmp_path, _, _ = stacks
    other = write_config(tmp_path / "other.cfg", n_pxl=0.2)
    run(capsys, "simulate", "--config", other, "--out", tmp_path / "o.qsif")
    code, results, _ = run(capsys, "reconstruct", "--in", tmp_path / "p.qsif", "--ref", tmp_path / "o.qsif")
    assert code == 2 and not results


def test_reconstruct_without_reference(stacks, capsys):
    tmp_path, cfg, _ = stacks
    code, _, _ = run(capsys, "reconstruct", "--in", tmp_path / "p.qsif")
    assert code == 2
    code, _, _ = run(capsys, "reconstruct", "--in", tmp_path / "p.qsif", "--config", cfg)
    assert code == 2  # gaussian LO: no analytic reference
    flat = write_config(tmp_path / "flat.cfg", lo_profile="flat", n_pxl=0.05)
    run(capsys, "simulate", "--config", flat, "--out", tmp_path / "f.qsif")
    code, _, f = run(capsys, "reconstruct", "--in", tmp_path / "f.qsif", "--config", flat, "--bin-radius", 1)
    assert code == 0 and f["reference"] == "analytic"
    assert abs(float(f["t_bright"]) - 1) < 0.25 and abs(float(f["t_dark"])) < 0.25


def test_format_error_exit_code(tmp_path, capsys):
    (tmp_path / "bad.qsif").write_bytes(b"NOPE" + bytes(200))
    code, results, _ = run(capsys, "reconstruct", "--in", tmp_path / "bad.qsif", "--ref", tmp_path / "bad.qsif")
    assert code == 3 and not results


def test_configuration_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("grid_width = 8\ngrid_height = 8\nn_pxl = 0.1\ncolour = red\n")
    code, _, _ = run(capsys, "simulate", "--config", bad, "--out", tmp_path / "x.qsif")
    assert code == 2
    missing = write_config(tmp_path / "m.cfg", mask="nowhere.pgm")
    code, _, _ = run(capsys, "simulate", "--config", missing, "--out", tmp_path / "x.qsif")
    assert code == 2 and not (tmp_path / "x.qsif").exists()
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_compare_cdi_report(tmp_path, capsys):
    code, results, f = run(capsys, "compare-cdi", "--n-grid", "10,1,1", "--mc-frames", 400, "--out", tmp_path / "c.csv")
    assert code == 0 and len(results) == 1
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert [float(r["n_mean"]) for r in rows] == [1.0, 10.0]
    assert float(rows[0]["snr_qsi"]) == pytest.approx(0.4472135955, rel=1e-9)
    assert float(rows[0]["snr_cdi_d0"]) == 1.0
    assert float(rows[0]["snr_cdi_d10"]) == pytest.approx(1 / math.sqrt(201))
    assert float(f["cdi_wins_from"]) == 10.0
    assert abs(float(rows[1]["snr_cdi_mc"]) - statistics.snr_cdi(10, 0, 10)) < 0.15


def test_snr_curve_report(tmp_path, capsys):
    code, _, f = run(capsys, "snr-curve", "--strategy", "gain", "--n-grid", "1", "--clusters", 8,
                     "--size", 64, "--out", tmp_path / "s.csv")
    assert code == 0 and f["points"] == "1"
    header = open(tmp_path / "s.csv").readline().strip().split(",")
    assert header[:4] == ["n_mean", "snr_sim", "snr_theory", "rel_err"]
    code, _, _ = run(capsys, "snr-curve", "--bin-radius", 9, "--out", tmp_path / "s.csv")
    assert code == 2


def test_calibrate_vacuum(tmp_path, capsys):
    cfg = write_config(tmp_path / "v.cfg", grid_width=24, grid_height=24, lo_profile="flat", n_pxl=0,
                       probe_kind="vacuum", clusters=400, dark_std=0)
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "v.qsif")
    code, _, f = run(capsys, "calibrate", "--in", tmp_path / "v.qsif", "--out", tmp_path / "cal.csv")
    assert code == 0
    assert abs(float(f["slope"])) <= 2 * float(f["slope_ci"])
    assert f["saturated"] == "0"
    text = open(tmp_path / "cal.csv").read()
    assert text.startswith("# slope=") and "segment,radius,area,v,v_fit" in text
    code, _, _ = run(capsys, "calibrate", "--in", tmp_path / "v.qsif", "--max-radius", 13, "--out", tmp_path / "c.csv")
    assert code == 2


def test_calibrate_flags_multimode_saturation(tmp_path, capsys):
    cfg = write_config(tmp_path / "mm.cfg", grid_width=64, grid_height=64, lo_waist_px=12,
                       probe_modes="hermite-gauss", mode_count=5, n_pxl=0.03, dark_std=0,
                       cluster_frames=1, usable_indices="0", clusters=1500, mask="clear")
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "mm.qsif")
    code, _, f = run(capsys, "calibrate", "--in", tmp_path / "mm.qsif", "--max-radius", 30, "--out", tmp_path / "cal.csv")
    assert code == 0 and f["saturated"] == "1"
    assert abs(float(f["intercept"]) - 1) <= 3 * float(f["intercept_ci"])
    scan = [row for row in csv.reader(open(tmp_path / "cal.csv")) if row and row[0] == "scan"]
    plateau = [float(r[3]) for r in scan[-3:]]
    assert max(plateau) - min(plateau) < 0.05 * max(plateau)


@pytest.mark.parametrize("text, expected", [("1,2.5", [1.0, 2.5]), ("lin:0:1:3", [0.0, 0.5, 1.0])])
def test_parse_grid(text, expected):
    assert parse_grid(text) == expected
    assert parse_grid("log:0.01:100:41")[20] == pytest.approx(1.0)
