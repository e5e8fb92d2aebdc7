"""Command-line behavior: end-to-end subcommand runs, exit codes, config
plumbing, determinism of written results, and the aggregation math."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from artifit.cli import aggregate_rows, main
from artifit.sceneio import load_result, load_scene

FIT_FLAGS = ["--steps", "3", "--seeds", "1", "--num-primitives", "2",
             "--num-parts", "2", "--fit-resolution", "64", "--samples", "16"]


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scenes") / "hinged"
    code = main(["generate", "hinged-box", "--out", str(d),
                 "-T", "3", "-N", "96", "--resolution", "96", "--seed", "1"])
    assert code == 0
    return d


class TestGenerate:
    def test_writes_complete_directory(self, scene_dir):
        names = {p.name for p in scene_dir.iterdir()}
        assert {"manifest.json", "run.json", "frame_0000.bin",
                "frame_0001.bin", "frame_0002.bin"} <= names
        scene = load_scene(scene_dir)
        assert scene.frames == 3 and scene.points_per_frame == 96

    def test_unknown_scene_is_exit_2(self, tmp_path):
        assert main(["generate", "no-such-thing",
                     "--out", str(tmp_path / "x")]) == 2

    def test_spec_file_and_trajectory_flags(self, tmp_path):
        spec = {"name": "twoblocks", "parts": [
            {"name": "a", "half_extents": [0.4, 0.3, 0.2]},
            {"name": "b", "half_extents": [0.2, 0.2, 0.2],
             "center": [0, 0, 0.5], "joint_type": "prismatic",
             "axis": [0, 0, 1], "amount": 0.2}]}
        sp = tmp_path / "spec.json"
        sp.write_text(json.dumps(spec))
        out = tmp_path / "scene"
        code = main(["generate", str(sp), "--out", str(out), "-T", "2",
                     "-N", "64", "--resolution", "64",
                     "--trajectory", "pingpong", "--mode", "constant"])
        assert code == 0
        scene = load_scene(out)
        assert scene.joints[0].joint_type == "prismatic"
        assert json.loads((out / "manifest.json").read_text())[
            "meta"]["trajectory"]["kind"] == "pingpong"

    def test_malformed_spec_file_is_exit_2(self, tmp_path):
        sp = tmp_path / "spec.json"
        sp.write_text("{\"parts\": [{}]}")
        assert main(["generate", str(sp), "--out", str(tmp_path / "s")]) == 2


class TestFit:
    def test_fit_writes_result_and_artifacts(self, scene_dir, tmp_path):
        out = tmp_path / "fit" / "result.json"
        code = main(["fit", str(scene_dir), "--out", str(out)] + FIT_FLAGS
                    + ["--export-ply", str(tmp_path / "ply")])
        assert code == 0
        doc, labels = load_result(out)
        assert doc["config"]["steps"] == 3
        assert labels.shape == (3, 96)
        assert (out.parent / "loss_seed0.csv").is_file()
        assert (out.parent / "run.json").is_file()
        assert (tmp_path / "ply" / "primitives_0000.ply").is_file()
        with (out.parent / "loss_seed0.csv").open() as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 3 and "total" in rows[0]

    def test_reruns_are_byte_identical(self, scene_dir, tmp_path):
        a = tmp_path / "a" / "result.json"
        b = tmp_path / "b" / "result.json"
        assert main(["fit", str(scene_dir), "--out", str(a)] + FIT_FLAGS) == 0
        assert main(["fit", str(scene_dir), "--out", str(b)] + FIT_FLAGS) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (a.parent / "result_labels.npy").read_bytes() == \
            (b.parent / "result_labels.npy").read_bytes()

    def test_config_file_with_flag_override(self, scene_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"steps": 2, "seeds": 1,
                                   "num_primitives": 2, "num_parts": 2,
                                   "resolution": 64,
                                   "samples_per_primitive": 16}))
        out = tmp_path / "r.json"
        code = main(["fit", str(scene_dir), "--out", str(out),
                     "--config", str(cfg), "--steps", "4"])
        assert code == 0
        doc, _ = load_result(out)
        assert doc["config"]["steps"] == 4          # flag wins
        assert doc["config"]["num_primitives"] == 2  # file survives

    def test_missing_scene_is_exit_2(self, tmp_path):
        assert main(["fit", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "r.json")] + FIT_FLAGS) == 2

    def test_non_finite_scene_is_exit_2(self, scene_dir, tmp_path):
        import shutil
        bad = tmp_path / "bad"
        shutil.copytree(scene_dir, bad)
        raw = bytearray((bad / "frame_0000.bin").read_bytes())
        raw[12:16] = np.float32(np.nan).tobytes()   # first x coordinate
        (bad / "frame_0000.bin").write_bytes(bytes(raw))
        assert main(["fit", str(bad), "--out", str(tmp_path / "r.json")]
                    + FIT_FLAGS) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_explosive_lr_diverges_with_exit_3(self, scene_dir, tmp_path):
        code = main(["fit", str(scene_dir), "--out", str(tmp_path / "r.json"),
                     "--lr", "1e8"] + FIT_FLAGS)
        assert code == 3


@pytest.fixture(scope="module")
def fitted(scene_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("fitted")
    out = d / "result.json"
    assert main(["fit", str(scene_dir), "--out", str(out)] + FIT_FLAGS) == 0
    return out


class TestEvalAndReport:
    def test_eval_writes_json_and_csv(self, scene_dir, fitted):
        code = main(["eval", str(fitted), str(scene_dir)])
        assert code == 0
        rep = json.loads((fitted.parent / "metrics.json").read_text())
        assert 0.0 <= rep["miou"] <= 1.0
        with (fitted.parent / "metrics.csv").open() as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 1
        assert rows[0]["scene"] == "hinged-box"

    def test_eval_against_perfect_prediction(self, scene_dir, tmp_path):
        """Ground truth used as its own prediction scores perfectly."""
        from artifit.pipeline import FitResult, PartReport
        from artifit.sceneio import save_result
        scene = load_scene(scene_dir)
        j = scene.joints[0]
        parts = [
            PartReport(joint_type="prismatic", axis=np.array([0.0, 1.0, 0.0]),
                       pivot=None, theta=np.zeros(scene.frames),
                       is_static=True),
            PartReport(joint_type=j.joint_type, axis=j.axis.copy(),
                       pivot=j.pivot.copy(), theta=j.theta.copy(),
                       is_static=False),
        ]
        res = FitResult(parts=parts, primitives=[],
                        labels=[l.copy() for l in scene.labels],
                        final_loss=0.0, seed=0)
        rj = tmp_path / "perfect.json"
        save_result(res, {"steps": 0}, rj)
        assert main(["eval", str(rj), str(scene_dir)]) == 0
        rep = json.loads((tmp_path / "metrics.json").read_text())
        assert rep["miou"] == pytest.approx(1.0)
        row = rep["joints"][0]
        assert row["axis_error_deg"] == pytest.approx(0.0, abs=1e-9)
        assert row["pivot_error_cm"] == pytest.approx(0.0, abs=1e-7)
        assert row["state_error"] == pytest.approx(0.0, abs=1e-9)
        assert row["type_correct"] is True

    def test_eval_bad_result_is_exit_2(self, scene_dir, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"parts\": []}")
        assert main(["eval", str(bad), str(scene_dir)]) == 2

    def test_report_aggregates_hand_computed(self, tmp_path, capsys):
        rows = [
            {"scene": "a", "seed": 0, "final_loss": 0.5, "miou": 0.9,
             "type_accuracy": 100.0, "num_pred_parts": 2,
             "num_pred_dynamic": 1, "num_spurious_dynamic": 0,
             "axis_error_deg": 1.0, "pivot_error_cm": 2.0,
             "state_error_rev_deg": 1.5, "state_error_pri_cm": ""},
            {"scene": "b", "seed": 0, "final_loss": 0.7, "miou": 0.7,
             "type_accuracy": 50.0, "num_pred_parts": 3,
             "num_pred_dynamic": 2, "num_spurious_dynamic": 1,
             "axis_error_deg": 3.0, "pivot_error_cm": "",
             "state_error_rev_deg": 2.5, "state_error_pri_cm": 0.2},
            {"scene": "c", "seed": 1, "final_loss": 0.6, "miou": 0.8,
             "type_accuracy": 75.0, "num_pred_parts": 2,
             "num_pred_dynamic": 1, "num_spurious_dynamic": 0,
             "axis_error_deg": 2.0, "pivot_error_cm": 4.0,
             "state_error_rev_deg": "", "state_error_pri_cm": 0.4},
        ]
        paths = []
        for i, row in enumerate(rows):
            p = tmp_path / f"m{i}.csv"
            with p.open("w", newline="") as f:
                w = csv.DictWriter(f, fieldnames=list(row))
                w.writeheader()
                w.writerow(row)
            paths.append(str(p))
        out = tmp_path / "agg.csv"
        assert main(["report", *paths, "--out", str(out)]) == 0
        with out.open() as f:
            got = {r["metric"]: (float(r["mean"]), float(r["std"]))
                   for r in csv.DictReader(f)}
        # hand-checked: miou mean 0.8, population std sqrt(2/300)
        assert got["miou"][0] == pytest.approx(0.8)
        assert got["miou"][1] == pytest.approx(np.std([0.9, 0.7, 0.8]))
        assert got["axis_error_deg"][0] == pytest.approx(2.0)
        assert got["pivot_error_cm"][0] == pytest.approx(3.0)  # blanks skipped
        assert got["state_error_pri_cm"][0] == pytest.approx(0.3)
        assert got["type_accuracy"][0] == pytest.approx(75.0)

    def test_report_missing_file_is_exit_2(self, tmp_path):
        assert main(["report", str(tmp_path / "none.csv")]) == 2


class TestAggregateRows:
    def test_single_row_zero_std(self):
        rows = [{"miou": "0.5", "final_loss": "1.0"}]
        agg = aggregate_rows(rows)
        assert agg["miou"] == (0.5, 0.0)

    def test_all_blank_column_omitted(self):
        agg = aggregate_rows([{"miou": "0.5", "pivot_error_cm": ""}])
        assert "pivot_error_cm" not in agg


class TestConvertCommand:
    def test_convert_then_fit_completes(self, tmp_path):
        from artifit.sceneio import write_ply_mesh
        rng = np.random.default_rng(4)
        base = rng.normal(size=(80, 3)) * 0.3
        paths = []
        for t in range(2):
            p = tmp_path / f"c{t}.ply"
            write_ply_mesh(p, base + [0, 0, 0.01 * t],
                           np.zeros((0, 3), dtype=int))
            paths.append(str(p))
        poses = {"width": 64, "height": 64, "frames": [
            {"world_to_camera": [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 3,
                                 0, 0, 0, 1],
             "fx": 51.2, "fy": 51.2, "cx": 32.0, "cy": 32.0}] * 2}
        pp = tmp_path / "poses.json"
        pp.write_text(json.dumps(poses))
        scene = tmp_path / "scene"
        assert main(["convert", "--clouds", *paths, "--poses", str(pp),
                     str(scene)]) == 0
        out = tmp_path / "r.json"
        assert main(["fit", str(scene), "--out", str(out)] + FIT_FLAGS) == 0
        doc, _ = load_result(out)
        assert np.isfinite(doc["final_loss"])


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "artifit.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "generate" in proc.stdout and "convert" in proc.stdout
