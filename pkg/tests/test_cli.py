import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from convexreg.cli import main
from convexreg.displacement import make_field, zero_field
from convexreg.features import extract_ssd_descriptor
from convexreg.formats import read_volume, write_nifti, write_volume
from convexreg.synth import make_phantom
from convexreg.volume import Volume


@pytest.fixture
def phantom(tmp_path):
    img, lab = make_phantom((32, 32, 32), 0)
    write_volume(tmp_path / "img.cvr", img)
    write_volume(tmp_path / "lab.cvr", lab)
    return img, lab


def run(tmp_path, *argv):
    return main([str(a) for a in argv])


# --- register -----------------------------------------------------------------

def test_register_self(tmp_path, phantom, capsys):
    img, _ = phantom
    code = run(tmp_path, "register", "--fixed", tmp_path / "img.cvr", "--moving", tmp_path / "img.cvr",
               "--out-field", tmp_path / "u.cvr", "--out-warped", tmp_path / "w.cvr",
               "--report", tmp_path / "r.json")
    assert code == 0
    assert "registered" in capsys.readouterr().out
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["field"]["max_abs"] < 0.5
    cfg = rep["config"]
    assert cfg["levels"] == 3 and cfg["radii"] == [2, 3, 3]
    assert cfg["solver"]["schedule"] == [0.003, 0.01, 0.03, 0.1, 0.3, 1.0]
    assert cfg["instance"]["lr"] == 0.05 and cfg["instance"]["iterations"] == 50
    assert cfg["instance_opt"] is True and rep["effective_capture_radius"] == 34
    u = read_volume(tmp_path / "u.cvr")
    assert u.kind == "vector-field" and u.dims == img.dims
    warped = read_volume(tmp_path / "w.cvr")
    assert np.abs(warped.data - img.data).max() < 0.1


def test_register_flags_reach_the_config(tmp_path, phantom):
    code = run(tmp_path, "register", "--fixed", tmp_path / "img.cvr", "--moving", tmp_path / "img.cvr",
               "--out-field", tmp_path / "u.cvr", "--report", tmp_path / "r.json",
               "--levels", 2, "--radii", 3, 2, "--instance-opt", "off", "--kernel", 5,
               "--schedule", 0.01, 0.1, 1, "--provider", "intensity", "--cost-mode", "streaming")
    assert code == 0
    cfg = json.loads((tmp_path / "r.json").read_text())["config"]
    assert cfg["levels"] == 2 and cfg["radii"] == [3, 2] and cfg["instance_opt"] is False
    assert cfg["solver"]["kernel"] == 5 and cfg["solver"]["schedule"] == [0.01, 0.1, 1.0]
    assert cfg["features"]["provider"] == "intensity" and cfg["cost_mode"] == "streaming"


def test_register_nifti_inputs(tmp_path, phantom):
    img, _ = phantom
    write_nifti(tmp_path / "img.nii", img)
    code = run(tmp_path, "register", "--fixed", tmp_path / "img.nii", "--moving", tmp_path / "img.nii",
               "--out-field", tmp_path / "u.cvr", "--out-warped", tmp_path / "w.nii",
               "--instance-opt", "off")
    assert code == 0 and (tmp_path / "w.nii").exists()


def test_register_embedded(tmp_path, phantom):
    img, _ = phantom
    from convexreg.volume import downsample_half
    write_volume(tmp_path / "e.cvr", extract_ssd_descriptor(downsample_half(img)).replace(normalized=False))
    code = run(tmp_path, "register", "--fixed", tmp_path / "img.cvr", "--moving", tmp_path / "img.cvr",
               "--out-field", tmp_path / "u.cvr", "--provider", "embedded",
               "--embedding-local", tmp_path / "e.cvr", tmp_path / "e.cvr")
    assert code == 0


def test_register_dimension_mismatch(tmp_path, phantom, capsys):
    other, _ = make_phantom((32, 32, 36), 0)
    write_volume(tmp_path / "other.cvr", other)
    code = run(tmp_path, "register", "--fixed", tmp_path / "img.cvr", "--moving", tmp_path / "other.cvr",
               "--out-field", tmp_path / "u.cvr")
    assert code == 4
    assert "dimension mismatch" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [["--radii", "3", "3"], ["--provider", "embedded"],
                                   ["--embedding-local", "a", "b"], ["--instance-opt", "maybe"],
                                   ["--threads", "0"], ["--levels", "x"]])
def test_register_flag_errors(tmp_path, phantom, extra, capsys):
    code = run(tmp_path, "register", "--fixed", tmp_path / "img.cvr", "--moving", tmp_path / "img.cvr",
               "--out-field", tmp_path / "u.cvr", *extra)
    assert code == 2
    assert capsys.readouterr().err


def test_register_missing_input(tmp_path, capsys):
    code = run(tmp_path, "register", "--fixed", tmp_path / "nope.cvr", "--moving", tmp_path / "nope.cvr",
               "--out-field", tmp_path / "u.cvr")
    assert code == 3 and "error:" in capsys.readouterr().err


def test_register_corrupt_input(tmp_path, capsys):
    (tmp_path / "bad.cvr").write_bytes(b"JUNK" * 20)
    code = run(tmp_path, "register", "--fixed", tmp_path / "bad.cvr", "--moving", tmp_path / "bad.cvr",
               "--out-field", tmp_path / "u.cvr")
    assert code == 3 and "[bad-magic]" in capsys.readouterr().err


def test_parser_level_exits():
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["--help"]) == 0


# --- warp ---------------------------------------------------------------------

def test_warp_zero_field(tmp_path, phantom):
    img, _ = phantom
    write_volume(tmp_path / "z.cvr", zero_field(img.dims))
    assert run(tmp_path, "warp", "--in", tmp_path / "img.cvr", "--field", tmp_path / "z.cvr",
               "--out", tmp_path / "o.cvr") == 0
    assert read_volume(tmp_path / "o.cvr").data.tobytes() == img.data.tobytes()


def test_warp_constant_shift(tmp_path, phantom):
    img, lab = phantom
    u = make_field(np.broadcast_to(np.array([2.0, 0, -1])[:, None, None, None], (3,) + img.dims))
    write_volume(tmp_path / "u.cvr", u)
    assert run(tmp_path, "warp", "--in", tmp_path / "img.cvr", "--field", tmp_path / "u.cvr",
               "--out", tmp_path / "o.cvr") == 0
    out = read_volume(tmp_path / "o.cvr").data[0]
    assert np.allclose(out[4:28, 4:28, 4:28], img.data[0][6:30, 4:28, 3:27], atol=1e-6)
    assert run(tmp_path, "warp", "--in", tmp_path / "lab.cvr", "--field", tmp_path / "u.cvr",
               "--out", tmp_path / "l.cvr", "--label") == 0
    out = read_volume(tmp_path / "l.cvr")
    assert out.kind == "label-map"
    assert np.array_equal(out.data[0][4:28, 4:28, 4:28], lab.data[0][6:30, 4:28, 3:27])


def test_warp_missing_field(tmp_path, phantom):
    assert run(tmp_path, "warp", "--in", tmp_path / "img.cvr", "--field", tmp_path / "nope.cvr",
               "--out", tmp_path / "o.cvr") == 3


# --- eval ---------------------------------------------------------------------

def test_eval_identical_and_zero_field(tmp_path, phantom, capsys):
    img, lab = phantom
    write_volume(tmp_path / "z.cvr", zero_field(img.dims))
    assert run(tmp_path, "eval", "--labels-a", tmp_path / "lab.cvr", "--labels-b", tmp_path / "lab.cvr",
               "--field", tmp_path / "z.cvr", "--report", tmp_path / "e.json") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["mean_dice"] == 1.0 and out["sdlogj"] == 0.0
    assert set(out["per_label"]) == {str(k) for k in range(1, lab.data.max() + 1)}
    assert json.loads((tmp_path / "e.json").read_text()) == out


def test_eval_half_overlap_cube(tmp_path, capsys):
    a = np.zeros((1, 6, 6, 6), np.int32)
    b = np.zeros((1, 6, 6, 6), np.int32)
    a[0, 1:3, 1:3, 1:3] = 1
    b[0, 2:4, 1:3, 1:3] = 1
    write_volume(tmp_path / "a.cvr", Volume(a, kind="label-map"))
    write_volume(tmp_path / "b.cvr", Volume(b, kind="label-map"))
    assert run(tmp_path, "eval", "--labels-a", tmp_path / "a.cvr", "--labels-b", tmp_path / "b.cvr",
               "--labels", 1) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["per_label"] == {"1": 0.5} and out["mean_dice"] == 0.5 and out["sdlogj"] is None


# --- landscape ----------------------------------------------------------------

def test_landscape_defaults(tmp_path, capsys):
    img, _ = make_phantom((16, 16, 16), 1)
    write_volume(tmp_path / "img.cvr", img)
    assert run(tmp_path, "landscape", "--image", tmp_path / "img.cvr", "--out-csv", tmp_path / "l.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "l.csv")))
    assert len(rows) == 625
    best = max(rows, key=lambda r: float(r["score"]))
    assert (best["alpha_deg"], best["beta_deg"]) == ("0", "0")
    assert "625 cells" in capsys.readouterr().out


@pytest.mark.parametrize("extra", [["--axes", "1", "1"], ["--axes", "0", "3"],
                                   ["--range", "-10", "20"], ["--step", "0"]])
def test_landscape_bad_flags(tmp_path, extra):
    img, _ = make_phantom((16, 16, 16), 1)
    write_volume(tmp_path / "img.cvr", img)
    assert run(tmp_path, "landscape", "--image", tmp_path / "img.cvr",
               "--out-csv", tmp_path / "l.csv", *extra) == 2


# --- synth --------------------------------------------------------------------

def test_synth_reproducible_and_magnitude(tmp_path):
    for prefix in ("a", "b"):
        assert run(tmp_path, "synth", "--dims", 32, 32, 32, "--seed", 3, "--magnitude", 4,
                   "--sigma", 4, "--out-prefix", tmp_path / prefix) == 0
    for name in ("moving", "fixed", "moving_labels", "fixed_labels", "field"):
        a = (tmp_path / f"a_{name}.cvr").read_bytes()
        assert a == (tmp_path / f"b_{name}.cvr").read_bytes()
    u = read_volume(tmp_path / "a_field.cvr").data
    # stored as float32
    assert np.sqrt((u.astype(np.float64) ** 2).sum(axis=0)).max() == pytest.approx(4, abs=1e-5)
    assert read_volume(tmp_path / "a_fixed_labels.cvr").kind == "label-map"


def test_synth_fold_guard_exit(tmp_path, capsys):
    assert run(tmp_path, "synth", "--dims", 32, 32, 32, "--magnitude", 200, "--sigma", 2,
               "--out-prefix", tmp_path / "x") == 4
    assert "fold-free" in capsys.readouterr().err


# --- features -----------------------------------------------------------------

def test_features_round_trip(tmp_path, phantom, capsys):
    img, _ = phantom
    assert run(tmp_path, "features", "--in", tmp_path / "img.cvr", "--out", tmp_path / "f.cvr") == 0
    f = read_volume(tmp_path / "f.cvr")
    assert f.kind == "feature-map" and f.channels == 6
    assert f.data.tobytes() == extract_ssd_descriptor(img).data.tobytes()


def test_features_constant_image(tmp_path, capsys):
    write_volume(tmp_path / "c.cvr", Volume(np.ones((1, 8, 8, 8))))
    assert run(tmp_path, "features", "--in", tmp_path / "c.cvr", "--provider", "intensity",
               "--out", tmp_path / "f.cvr") == 4
    assert "constant image" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("convexreg") is None, reason="console script not installed")
def test_console_script(tmp_path):
    p = subprocess.run(["convexreg", "landscape", "--image", "x", "--out-csv", "y",
                        "--axes", "2", "2"], capture_output=True, text=True)
    assert p.returncode == 2 and "--axes" in p.stderr
