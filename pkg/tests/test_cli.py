import argparse
import csv
import json
import os

import numpy as np
import pytest

from nearscale.cli import format_meters, length, length_list, main
from nearscale.recon_io import CameraPose, Reconstruction, ScenePoint, write_sparse_model
from nearscale.twoview import TwoViewConfig, solve_two_view_scale, two_view_intensity


def files(directory):
    return {n: open(os.path.join(directory, n), "rb").read() for n in sorted(os.listdir(directory))}


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def plane_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "d"
    assert main(["simulate", "--surface", "plane", "--distance", "5mm", "--views", "4", "--lambda-gt", "2",
                 "--noise", "0", "--seed", "7", "-o", str(out)]) == 0
    return out


# ---------------------------------------------------------------------------
# argument types


@pytest.mark.parametrize("text, value", [("5mm", 0.005), ("0.005m", 0.005), ("2cm", 0.02), ("30um", 3e-5),
                                         ("1e-3 m", 1e-3)])
def test_length_units(text, value):
    assert length(text) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text", ["5", "5 km", "mm", ""])
def test_length_needs_a_unit(text):
    with pytest.raises(argparse.ArgumentTypeError):
        length(text)


def test_length_range_is_inclusive():
    d = length_list("3mm:20mm:1mm")
    assert len(d) == 18 and d[0] == pytest.approx(0.003) and d[-1] == pytest.approx(0.020)
    assert length_list("3mm, 5mm") == pytest.approx([0.003, 0.005])


def test_meter_format():
    assert format_meters(3.0) == "3.000e0 m"
    assert format_meters(0.0123) == "1.230e-2 m"


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_dataset(plane_dir):
    names = set(os.listdir(plane_dir))
    assert {"cameras.txt", "images.txt", "points3D.txt", "observations.csv", "ground_truth.json",
            "calibration.json"} <= names
    gt = json.load(open(plane_dir / "ground_truth.json"))
    assert gt["lambda_gt"] == 2.0 and gt["config"]["cli"]["command"] == "simulate"


def test_simulate_is_byte_identical(tmp_path, plane_dir):
    argv = ["simulate", "--surface", "plane", "--distance", "5mm", "--views", "4", "--lambda-gt", "2",
            "--noise", "0", "--seed", "7", "-o"]
    assert main(argv + [str(tmp_path / "a")]) == 0
    assert main(argv + [str(tmp_path / "b")]) == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b


def test_single_view_rejected(tmp_path, capsys):
    assert main(["simulate", "--views", "1", "-o", str(tmp_path)]) == 2
    assert ">= 2" in capsys.readouterr().err


def test_unknown_flag_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--bogus", "-o", str(tmp_path)])
    assert exc.value.code == 2


def test_length_flag_requires_unit(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--distance", "5", "-o", str(tmp_path)])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# estimate


def test_estimate_round_trip(plane_dir, tmp_path, capsys):
    out = tmp_path / "est"
    assert main(["estimate", str(plane_dir), "--dump-profile", "-o", str(out)]) == 0
    report = json.load(open(out / "report.json"))
    assert abs(report["lambda"] / 2 - 1) < 1e-3
    assert report["config"]["cli"]["command"] == "estimate"
    assert len(rows(out / "profile.csv")) == 200
    assert (out / "profile.png").exists() and (out / "albedos.csv").exists()
    assert capsys.readouterr().out.startswith("lambda ")


def test_estimate_zero_baseline_exit_code(plane_dir, tmp_path, capsys):
    cal = json.load(open(plane_dir / "calibration.json"))
    cal["lights"] = [[0.0, 0.0, 0.0]] * 3
    path = tmp_path / "zero.json"
    path.write_text(json.dumps(cal))
    assert main(["estimate", str(plane_dir), "--calibration", str(path), "-o", str(tmp_path / "o")]) == 3
    assert "DegenerateBaseline" in capsys.readouterr().err


def test_estimate_missing_input(tmp_path):
    assert main(["estimate", str(tmp_path / "nothing"), "-o", str(tmp_path / "o")]) == 2


def test_estimate_replays_from_config(plane_dir, tmp_path):
    out = tmp_path / "r"
    assert main(["estimate", str(plane_dir), "--samples", "50", "-o", str(out)]) == 0
    first = files(out)
    assert main(["estimate", str(plane_dir), "--from-config", str(out / "report.json"), "-o", str(out)]) == 0
    assert files(out) == first


# ---------------------------------------------------------------------------
# sweep


def test_sweep_range_and_single_trial(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--surface", "plane", "--points", "120", "--distances", "3mm:20mm:1mm",
                 "--trials", "1", "--samples", "30", "-o", str(out)]) == 0
    summary = rows(out / "sweep.csv")
    assert list(summary[0]) == ["distance_mm", "mean_err_pct", "std_err_pct"]
    assert len(summary) == 18
    assert all(float(r["std_err_pct"]) == 0.0 for r in summary)
    assert all(np.isfinite(float(r["mean_err_pct"])) for r in summary)
    assert (out / "sweep.png").exists() and len(rows(out / "sweep_trials.csv")) == 18


def test_sweep_replays_from_config(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--surface", "plane", "--points", "100", "--distances", "4mm,9mm",
                 "--trials", "2", "--samples", "20", "--seed", "3", "-o", str(out)]) == 0
    first = files(out)
    assert main(["sweep", "--from-config", str(out / "sweep.json"), "-o", str(out)]) == 0
    assert files(out) == first


# ---------------------------------------------------------------------------
# twoview


def _twoview(capsys, b, z, t, I1, I2):
    code = main(["twoview", "--b", b, "--z", repr(z), "--t", repr(t), "--I1", repr(I1), "--I2", repr(I2)])
    return code, capsys.readouterr()


def test_twoview_forward_root(capsys):
    I1, I2 = two_view_intensity(2.0, 0.01, 0.005, 0.003, np.pi)
    code, out = _twoview(capsys, "3mm", 0.01, 0.005, I1, I2)
    roots = [float(x) for x in out.out.split()]
    assert code == 0 and any(abs(r / 2 - 1) < 1e-9 for r in roots)


def test_twoview_two_roots_printed_ascending(capsys):
    I1, I2 = two_view_intensity(2.0, 0.01, 0.002, 0.003, 1.0)
    code, out = _twoview(capsys, "3mm", 0.01, 0.002, I1, I2)
    printed = [float(x) for x in out.out.split()]
    assert code == 0 and len(printed) == 2 and printed == sorted(printed)
    assert printed == list(solve_two_view_scale(TwoViewConfig(0.003, 0.01, 0.002, I1, I2)))


def test_twoview_zero_baseline(capsys):
    code, out = _twoview(capsys, "0mm", 0.01, 0.005, 0.4, 0.5)
    assert code == 3


# ---------------------------------------------------------------------------
# measure


@pytest.fixture
def two_point_report(tmp_path):
    model = tmp_path / "model"
    recon = Reconstruction({1: ScenePoint(1, np.zeros(3)), 2: ScenePoint(2, np.array([0, 0, 2.0]))},
                           [CameraPose(1, np.eye(3), np.array([0, 0, -1.0]))])
    write_sparse_model(recon, model)
    report = {"lambda": 1.5, "gains": {"1": 1.0}, "residual_rms_gray_levels": 0.0, "iterations": 0,
              "converged": True, "config": {"inputs": {"model": str(model)}}}
    path = tmp_path / "report.json"
    path.write_text(json.dumps(report))
    return path


def test_measure_two_points(two_point_report, capsys):
    assert main(["measure", "--report", str(two_point_report), "--ids", "1,2"]) == 0
    assert capsys.readouterr().out.strip() == "3.000e0 m"


def test_measure_id_file(two_point_report, tmp_path, capsys):
    ids = tmp_path / "ids.txt"
    ids.write_text("1\n2\n")
    assert main(["measure", "--report", str(two_point_report), "--id-file", str(ids)]) == 0
    assert capsys.readouterr().out.strip() == "3.000e0 m"


def test_measure_single_id(two_point_report):
    assert main(["measure", "--report", str(two_point_report), "--ids", "1"]) == 2


# ---------------------------------------------------------------------------
# ablate


def test_ablate_unknown_name(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "--which", "gt-everything", "-o", str(tmp_path)])
    assert exc.value.code == 2


def test_ablate_without_variant(tmp_path):
    assert main(["ablate", "-o", str(tmp_path)]) == 2


def test_ablate_on_dataset(plane_dir, tmp_path, capsys):
    out = tmp_path / "ab"
    assert main(["ablate", "--dataset", str(plane_dir), "--which", "gt-poses", "--gt-gains",
                 "--samples", "40", "-o", str(out)]) == 0
    table = rows(out / "ablate.csv")
    assert [r["variant"] for r in table] == ["baseline", "gt-gains+gt-poses"]
    assert all(float(r["err_pct"]) < 0.1 for r in table)
    assert float(table[1]["gain_rms_pct"]) == 0.0 and float(table[0]["albedo_rms_pct"]) < 0.5
    doc = json.load(open(out / "ablate.json"))
    assert doc["datasets"] == 1 and (out / "ablate.png").exists()


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
