import json
import shutil
import subprocess
import sys

import pytest

from cranioforge.cli import main
from cranioforge.mesh import TriMesh, validate
from cranioforge.meshio import read_mesh, write_mesh
from cranioforge.phantoms import shell_phantom, sphere_phantom
from cranioforge.primitives import icosphere
from cranioforge.volume import write_raw_volume

STEPS = [
    {"stage": "repair", "op": "fill_holes", "loops": "all"},
    {"stage": "refine", "op": "relax", "mode": "taubin", "lambda": 0.5, "mu": -0.53, "iterations": 3},
    {"stage": "shape", "op": "cut", "point_mm": [12.0, 12.0, 12.5], "normal": [0.0, 0.0, 1.0], "keep": "negative",
     "cap": True},
    {"stage": "shape", "op": "sculpt", "ops": [
        {"op": "brush_displace", "center_mm": [20.0, 12.0, 12.0], "radius_mm": 2.5, "offset_mm": 0.5}]},
    {"stage": "refine", "op": "decimate", "ratio": 0.6},
]
EDITS = [{"op": "keep_largest_component"}]
PRINT = {"thickness_sample_count": 500, "rng_seed": 3}


@pytest.fixture
def phantom(tmp_path):
    sidecar, _ = write_raw_volume(sphere_phantom(24, 8.0, 1.0), tmp_path / "ball.vol.json")
    return sidecar


def write_config(tmp_path, phantom, name="pipe.json", **extra):
    cfg = {
        "input": phantom.name,
        "threshold": {"lo": 226, "hi": 3071},
        "edit_script": EDITS,
        "extract": {"sigma": 0.7, "iso": 0.5},
        "steps": STEPS,
        "printcheck": PRINT,
        "outputs": {"stl": "out/final.stl", "report": "out/report.json"},
    }
    cfg.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def status_lines(capsys):
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]


def snapshot(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*"))


# --- exit codes -------------------------------------------------------------

def test_segment_bad_range_exits_2(tmp_path, phantom):
    assert main(["segment", "-i", str(phantom), "-o", str(tmp_path / "m.json"), "--lo", "500", "--hi", "100"]) == 2
    assert not (tmp_path / "m.json").exists()


def test_unknown_flag_exits_2(phantom):
    with pytest.raises(SystemExit) as exc:
        main(["segment", "-i", str(phantom), "--bogus"])
    assert exc.value.code == 2


def test_missing_input_file_exits_2(tmp_path):
    assert main(["extract", "-i", str(tmp_path / "nope.mask.json"), "-o", str(tmp_path / "x.stl")]) == 2


def test_check_punctured_exits_1_and_writes_report(tmp_path):
    s = icosphere(10, 3)
    write_mesh(TriMesh(s.vertices, s.triangles[1:]), tmp_path / "holed.obj")
    code = main(["check", "-i", str(tmp_path / "holed.obj"), "-o", str(tmp_path / "r.json"), "--samples", "200"])
    assert code == 1
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["verdict"] == "fail" and "not watertight" in doc["reasons"]
    # report never fails
    assert main(["report", "-i", str(tmp_path / "holed.obj"), "--samples", "200"]) == 0


def test_extract_then_check_on_phantom(tmp_path, phantom, capsys):
    mask, mesh = tmp_path / "m.mask.json", tmp_path / "m.stl"
    assert main(["segment", "-i", str(phantom), "-o", str(mask)]) == 0
    assert main(["extract", "-i", str(mask), "-o", str(mesh)]) == 0
    assert main(["check", "-i", str(mesh), "--samples", "500"]) == 0
    lines = status_lines(capsys)
    assert [l["stage"] for l in lines] == ["segment", "extract", "check"]
    for l in lines:
        assert set(l) == {"stage", "input", "output", "elapsed_ms", "counts"}
    assert lines[1]["counts"]["watertight"] is True


def test_config_errors_exit_2(tmp_path, phantom):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"threshold": {"lo": 1, "hi": 2}}))
    assert main(["run", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"input": phantom.name, "colour": "red"}))
    assert main(["run", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"input": phantom.name, "steps": [{"stage": "refine", "op": "melt"}]}))
    assert main(["run", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2


def test_stage_error_names_stage(tmp_path, phantom, caplog):
    cfg = write_config(tmp_path, phantom, edit_script=[{"op": "remove_component_at", "seed_voxel": [0, 0, 0]}])
    assert main(["run", "--config", str(cfg)]) == 2
    assert "edit" in caplog.text


@pytest.mark.parametrize("value", ["abc", "-1", "1.5"])
def test_bad_threads_env_exits_2(monkeypatch, phantom, tmp_path, value):
    monkeypatch.setenv("CRANIOFORGE_THREADS", value)
    assert main(["segment", "-i", str(phantom), "-o", str(tmp_path / "m.json")]) == 2


def test_threads_env_does_not_change_output(monkeypatch, tmp_path, phantom):
    outputs = []
    for n in ("1", "4"):
        monkeypatch.setenv("CRANIOFORGE_THREADS", n)
        d = tmp_path / n
        d.mkdir()
        shutil.copy(phantom, d)
        shutil.copy(phantom.with_name("ball.vol.raw"), d)
        assert main(["run", "--config", str(write_config(d, d / phantom.name))]) == 0
        outputs.append(((d / "out/final.stl").read_bytes(), (d / "out/report.json").read_bytes()))
    assert outputs[0] == outputs[1]


# --- run ---------------------------------------------------------------------

def test_dry_run_writes_nothing(tmp_path, phantom, capsys):
    cfg = write_config(tmp_path, phantom)
    before = snapshot(tmp_path)
    assert main(["run", "--config", str(cfg), "--checkpoints", str(tmp_path / "ck"), "--dry-run"]) == 0
    assert snapshot(tmp_path) == before
    (plan,) = status_lines(capsys)
    stages = [e["stage"] for e in plan["plan"]]
    assert stages == ["segment", "edit", "extract", "repair", "refine", "shape", "shape", "refine", "check"]
    assert plan["plan"][3]["checkpoint"].endswith("03-repair-fill_holes.obj")


def test_run_passes_and_is_deterministic(tmp_path, phantom):
    cfg = write_config(tmp_path, phantom)
    assert main(["run", "--config", str(cfg)]) == 0
    first = (tmp_path / "out/final.stl").read_bytes(), (tmp_path / "out/report.json").read_bytes()
    assert main(["run", "--config", str(cfg)]) == 0
    second = (tmp_path / "out/final.stl").read_bytes(), (tmp_path / "out/report.json").read_bytes()
    assert first == second
    report = json.loads(first[1])
    assert report["verdict"] == "pass"
    from cranioforge.meshio import read_stl_mesh

    assert validate(read_stl_mesh(tmp_path / "out/final.stl")).is_watertight


def test_run_matches_chained_subcommands(tmp_path, phantom):
    ck = tmp_path / "ck"
    cfg = write_config(tmp_path, phantom)
    assert main(["run", "--config", str(cfg), "--checkpoints", str(ck)]) == 0
    files = sorted(p.name for p in ck.iterdir() if p.suffix != ".raw")
    assert files[0].startswith("00-segment") and files[-1].endswith(".report.json")

    man = tmp_path / "manual"
    man.mkdir()
    script = tmp_path / "edits.json"
    script.write_text(json.dumps(EDITS))
    pc = tmp_path / "print.json"
    pc.write_text(json.dumps(PRINT))
    chain = [
        ["segment", "-i", str(phantom), "--lo", "226", "--hi", "3071"],
        ["mask-edit", "--script", str(script)],
        ["extract", "--sigma", "0.7", "--iso", "0.5"],
        ["repair", "--op", "fill_holes", "--loops", "all"],
        ["refine", "--op", "relax", "--mode", "taubin", "--lambda", "0.5", "--mu", "-0.53", "--iterations", "3"],
        ["cut", "--point", "12", "12", "12.5", "--normal", "0", "0", "1", "--keep", "negative"],
        ["sculpt", "--center", "20", "12", "12", "--radius", "2.5", "--offset", "0.5"],
        ["refine", "--op", "decimate", "--ratio", "0.6"],
        ["check", "--print-config", str(pc)],
    ]
    prev = None
    for argv, name in zip(chain, files):
        out = man / name
        args = list(argv)
        if prev is not None:
            args[1:1] = ["-i", str(prev)]
        assert main(args + ["-o", str(out)]) in (0, 1)
        assert out.read_bytes() == (ck / name).read_bytes(), name
        if name.endswith(".mask.json"):
            raw = name.replace(".json", ".raw")
            assert (man / raw).read_bytes() == (ck / raw).read_bytes()
        prev = out
    final = read_mesh(man / files[-2])
    assert read_mesh(tmp_path / "out/final.stl").n_triangles == final.n_triangles


def test_emit_both_and_obj_output(tmp_path, phantom):
    steps = [{"stage": "shape", "op": "cut", "point_mm": [12, 12, 12.5], "normal": [0, 0, 1],
              "keep": "negative", "cap": True, "emit_both": "out/cap.stl"}]
    cfg = write_config(tmp_path, phantom, steps=steps, outputs={"obj": "out/final.obj"})
    (tmp_path / "out").mkdir()
    assert main(["run", "--config", str(cfg)]) == 0
    bottom = read_mesh(tmp_path / "out/final.obj")
    top = read_mesh(tmp_path / "out/cap.stl")
    assert validate(bottom).is_watertight and validate(top).is_watertight
    assert bottom.vertices[:, 2].max() <= 12.5 + 1e-9
    assert top.vertices[:, 2].min() >= 12.5 - 1e-9


def test_failing_check_exits_1(tmp_path):
    sidecar, _ = write_raw_volume(shell_phantom(40, 15.0, 14.4, 1.0), tmp_path / "thin.vol.json")
    cfg = tmp_path / "p.json"
    cfg.write_text(json.dumps({"input": sidecar.name, "extract": {"sigma": 0.0},
                               "printcheck": {"thickness_sample_count": 300, "min_wall_mm": 3.0},
                               "outputs": {"report": "r.json"}}))
    assert main(["run", "--config", str(cfg)]) == 1
    assert "wall below minimum" in json.loads((tmp_path / "r.json").read_text())["reasons"]


def test_console_script(tmp_path, phantom):
    exe = shutil.which("cranioforge")
    argv = [exe] if exe else [sys.executable, "-m", "cranioforge.cli"]
    out = subprocess.run(argv + ["segment", "-i", str(phantom), "-o", str(tmp_path / "m.mask.json")],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["stage"] == "segment"
    bad = subprocess.run(argv + ["frobnicate"], capture_output=True, text=True)
    assert bad.returncode == 2
