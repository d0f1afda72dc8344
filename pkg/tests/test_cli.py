import json
import subprocess
import sys


import pytest

PKG = [sys.executable, "-m", "mvscene"]


def run(*args, **kw):
    return subprocess.run([*PKG, *args], capture_output=True, text=True, **kw)


def synth_args(out, seed=42):
    return ["synth", "--output-dir", str(out), "--seed", str(seed),
            "--objects", "3", "--cameras", "6",
            "--cloud-density", "120000", "--cloud-noise", "0.0005"]


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.ini"
    p.write_text("[synth]\nimage_width = 320\nimage_height = 240\nfocal_px = 300\n")
    return str(p)


class TestExitCodes:
    def test_help_exits_zero(self):
        assert run("--help").returncode == 0
        assert run("synth", "--help").returncode == 0

    def test_usage_error_exits_one(self):
        r = run("synth")  # missing required --output-dir
        assert r.returncode == 1
        r = run("not-a-command", "--output-dir", "/tmp/x")
        assert r.returncode == 1

    def test_missing_input_exits_two(self, tmp_path):
        r = run("fuse-poses", "--detections", str(tmp_path / "nope.json"),
                "--models", str(tmp_path / "nope2.json"),
                "--output-dir", str(tmp_path))
        assert r.returncode == 2

    def test_malformed_input_exits_two(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        r = run("fuse-poses", "--detections", str(bad), "--models", str(bad),
                "--output-dir", str(tmp_path))
        assert r.returncode == 2

    def test_stdout_stays_clean(self, tmp_path, config_file):
        r = run(*synth_args(tmp_path), "--config", config_file)
        assert r.returncode == 0
        assert r.stdout == ""
        assert "synth" in r.stderr  # logs go to stderr


class TestPipeline:
    def test_synth_fuse_evaluate(self, tmp_path, config_file):
        out = tmp_path / "run"
        assert run(*synth_args(out), "--config", config_file).returncode == 0
        for name in ("scene.json", "detections.json", "cloud.ply", "gt_cloud.ply",
                     "masks.npz"):
            assert (out / name).exists()

        r = run("fuse-poses", "--detections", str(out / "detections.json"),
                "--models", str(out / "scene.json"), "--output-dir", str(out),
                "--seed", "42", "--config", config_file)
        assert r.returncode == 0, r.stderr

        r = run("evaluate", "--scene", str(out / "scene.json"),
                "--estimates", str(out / "estimates.json"),
                "--cloud", str(out / "cloud.ply"),
                "--gt-cloud", str(out / "gt_cloud.ply"),
                "--output-dir", str(out), "--config", config_file)
        assert r.returncode == 0, r.stderr

        report = json.loads((out / "report.json").read_text())
        assert report["poses"]["auc"] > 0.0
        assert (out / "curve.csv").exists()
        assert report["fscore"]["f"] > 0.5
