import csv
import json

import numpy as np
import pytest
from PIL import Image

from diffpir import cli, degrade, imgcore
from diffpir.cli import PRESETS, load_config_file, resolve_config
from diffpir.errors import InvalidConfig


@pytest.fixture
def gt_image(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    path = tmp_path / "gt.png"
    Image.fromarray(data, mode="RGB").save(path)
    return path


@pytest.fixture
def gt_image_256(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.integers(0, 256, size=(256, 256, 3), dtype=np.uint8)
    path = tmp_path / "gt256.png"
    Image.fromarray(data, mode="RGB").save(path)
    return path


class TestConfigResolution:
    def test_presets_carry_reference_hyperparameters(self):
        p = PRESETS["ffhq-noisy-deblur-gauss-100"]
        assert p["lambda_"] == 7.0 and p["zeta"] == 0.3 and p["sigma_n"] == 0.05
        p = PRESETS["ffhq-noisy-sr-100"]
        assert p["lambda_"] == 8.0 and p["zeta"] == 0.2
        p = PRESETS["ffhq-noiseless-inpaint-box-20"]
        assert p["lambda_"] == 6.0 and p["zeta"] == 1.0 and p["sigma_n"] == 0.0

    def test_flag_overrides_preset(self):
        cfg = resolve_config({"zeta": 0.9}, preset="ffhq-noisy-sr-100")
        assert cfg.zeta == 0.9 and cfg.lambda_ == 8.0 and cfg.task == "sr"

    def test_config_file_key_value(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("task = inpaint-box\nlambda = 3.5\nseed = 11\n# comment\n")
        cfg = resolve_config({}, config_path=path)
        assert cfg.task == "inpaint-box" and cfg.lambda_ == 3.5 and cfg.seed == 11

    def test_config_file_json_round_trip(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"task": "sr", "sf": 2, "zeta": 0.4}))
        cfg = resolve_config({}, config_path=path)
        assert cfg.task == "sr" and cfg.sf == 2 and cfg.zeta == 0.4

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("frobnicate = 3\n")
        with pytest.raises(InvalidConfig):
            load_config_file(path)

    def test_unknown_preset_rejected(self):
        with pytest.raises(InvalidConfig):
            resolve_config({}, preset="nope")


class TestCmdDegrade:
    def test_box_inpaint_mask_pixel_count(self, gt_image_256, tmp_path):
        out = tmp_path / "deg"
        rc = cli.main(["degrade", "--task", "inpaint-box", "--sigma-n", "0",
                       "--in", str(gt_image_256), "--out", str(out)])
        assert rc == 0
        mask_png = np.asarray(Image.open(out / "mask.png"))
        assert int((mask_png == 0).sum()) == 128 * 128
        record = json.loads((out / "degrade.json").read_text())
        assert record["config"]["task"] == "inpaint-box"
        assert (out / "y.png").exists() and (out / "y.npy").exists()

    def test_gaussian_deblur_kernel_defaults(self, gt_image_256, tmp_path):
        out = tmp_path / "deg"
        rc = cli.main(["degrade", "--task", "deblur-gauss",
                       "--in", str(gt_image_256), "--out", str(out)])
        assert rc == 0
        k = imgcore.load_kernel(out / "kernel.k2d")
        assert k.shape == (61, 61)
        assert np.array_equal(k, degrade.gaussian_kernel(61, 3.0))
        record = json.loads((out / "degrade.json").read_text())
        assert record["config"]["sigma_n"] == 0.05  # noisy default

    def test_raw_sidecar_is_unclamped(self, gt_image, tmp_path):
        out = tmp_path / "deg"
        cli.main(["degrade", "--task", "deblur-gauss", "--kernel-size", "5",
                  "--sigma-n", "0.3", "--seed", "1",
                  "--in", str(gt_image), "--out", str(out)])
        raw = np.load(out / "y.npy")
        assert raw.min() < 0.0 or raw.max() > 1.0  # noise escapes [0, 1]


class TestCmdRestore:
    def degrade_then_restore(self, gt, tmp_path, extra=()):
        deg = tmp_path / "deg"
        cli.main(["degrade", "--task", "inpaint-box", "--box-size", "8", "--sigma-n", "0",
                  "--seed", "3", "--in", str(gt), "--out", str(deg)])
        out_png = tmp_path / "restored.png"
        report = tmp_path / "report.json"
        rc = cli.main(["restore", "--task", "inpaint-box", "--sigma-n", "0",
                       "--in", str(deg / "y.npy"), "--mask", str(deg / "mask.png"),
                       "--gt", str(gt), "--denoiser", "oracle", "--zeta", "0",
                       "--steps", "20", "--seed", "7",
                       "--out", str(out_png), "--report", str(report), *extra])
        return rc, out_png, report

    def test_oracle_noiseless_inpaint_reports_infinite_psnr(self, gt_image, tmp_path):
        rc, out_png, report = self.degrade_then_restore(gt_image, tmp_path)
        assert rc == 0
        data = json.loads(report.read_text())
        assert data["psnr"] == "Infinite"
        assert data["nfe"] == 20
        assert len(data["residuals"]) == 20

    def test_nfe_accounting_hundred_steps(self, gt_image, tmp_path):
        deg = tmp_path / "deg"
        cli.main(["degrade", "--task", "inpaint-box", "--box-size", "8", "--sigma-n", "0",
                  "--in", str(gt_image), "--out", str(deg)])
        report = tmp_path / "r.json"
        rc = cli.main(["restore", "--task", "inpaint-box", "--sigma-n", "0",
                       "--in", str(deg / "y.npy"), "--mask", str(deg / "mask.png"),
                       "--gt", str(gt_image), "--denoiser", "oracle",
                       "--steps", "100", "--out", str(tmp_path / "o.png"),
                       "--report", str(report)])
        assert rc == 0
        assert json.loads(report.read_text())["nfe"] == 100

    def test_deterministic_outputs_bitwise(self, gt_image, tmp_path):
        _, out1, _ = self.degrade_then_restore(gt_image, tmp_path)
        bytes1 = out1.read_bytes()
        _, out2, _ = self.degrade_then_restore(gt_image, tmp_path)
        assert bytes1 == out2.read_bytes()

    def test_dump_trajectory(self, gt_image, tmp_path):
        rc, _, report = self.degrade_then_restore(
            gt_image, tmp_path, extra=("--dump-trajectory", str(tmp_path / "frames")))
        assert rc == 0
        manifest = json.loads((tmp_path / "frames" / "trajectory.json").read_text())
        assert len(manifest["steps"]) == 20

    def test_gmm_denoiser_runs(self, gt_image, tmp_path):
        deg = tmp_path / "deg"
        cli.main(["degrade", "--task", "deblur-gauss", "--kernel-size", "5",
                  "--sigma-n", "0.05", "--in", str(gt_image), "--out", str(deg)])
        rc = cli.main(["restore", "--task", "deblur-gauss", "--sigma-n", "0.05",
                       "--in", str(deg / "y.npy"), "--kernel", str(deg / "kernel.k2d"),
                       "--denoiser", "gmm", "--steps", "5",
                       "--out", str(tmp_path / "o.png")])
        assert rc == 0

    def test_missing_input_fails_nonzero(self, tmp_path):
        rc = cli.main(["restore", "--task", "sr", "--out", str(tmp_path / "o.png")])
        assert rc == 1

    @pytest.mark.parametrize("sampler", ["dps-yt", "dps-y0"])
    def test_dps_samplers_run(self, gt_image, tmp_path, sampler):
        deg = tmp_path / "deg"
        cli.main(["degrade", "--task", "deblur-gauss", "--kernel-size", "5",
                  "--sigma-n", "0.05", "--in", str(gt_image), "--out", str(deg)])
        report = tmp_path / "r.json"
        rc = cli.main(["restore", "--task", "deblur-gauss", "--sigma-n", "0.05",
                       "--in", str(deg / "y.npy"), "--kernel", str(deg / "kernel.k2d"),
                       "--denoiser", "gaussian", "--sampler", sampler, "--t-start", "15",
                       "--out", str(tmp_path / "o.png"), "--report", str(report)])
        assert rc == 0
        assert json.loads(report.read_text())["nfe"] >= 15

    def test_sr_task_round_trip(self, gt_image, tmp_path):
        deg = tmp_path / "deg"
        cli.main(["degrade", "--task", "sr", "--sf", "2", "--sigma-n", "0.05",
                  "--in", str(gt_image), "--out", str(deg)])
        assert np.load(deg / "y.npy").shape == (3, 16, 16)
        rc = cli.main(["restore", "--task", "sr", "--sf", "2", "--sigma-n", "0.05",
                       "--in", str(deg / "y.npy"), "--gt", str(gt_image),
                       "--denoiser", "gaussian", "--steps", "5",
                       "--out", str(tmp_path / "up.png")])
        assert rc == 0
        assert imgcore.load_png(tmp_path / "up.png").shape == (3, 32, 32)

    def test_replay_from_provenance_config(self, gt_image, tmp_path):
        rc, out_png, report = self.degrade_then_restore(gt_image, tmp_path)
        first = out_png.read_bytes()
        out2 = tmp_path / "replay.png"
        # the report itself is a valid --config (its config sub-object wins)
        rc = cli.main(["restore", "--config", str(report), "--out", str(out2)])
        assert rc == 0
        assert out2.read_bytes() == first

    def test_degrade_provenance_replays(self, gt_image, tmp_path):
        deg1, deg2 = tmp_path / "d1", tmp_path / "d2"
        cli.main(["degrade", "--task", "deblur-motion", "--kernel-size", "9",
                  "--seed", "5", "--in", str(gt_image), "--out", str(deg1)])
        rc = cli.main(["degrade", "--config", str(deg1 / "degrade.json"),
                       "--out", str(deg2)])
        assert rc == 0
        assert np.array_equal(np.load(deg1 / "y.npy"), np.load(deg2 / "y.npy"))
        assert (deg1 / "kernel.k2d").read_bytes() == (deg2 / "kernel.k2d").read_bytes()


class TestCmdBench:
    def test_steps_sweep_shows_fidelity_trend(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = cli.main(["bench", "--toy-task", "sr", "--sweep-steps", "10,100",
                       "--lambda", "1.0", "--zeta", "1.0", "--seed", "0",
                       "--out", str(out)])
        assert rc == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 2
        by_steps = {int(r["steps"]): r for r in rows}
        assert float(by_steps[100]["error"]) <= float(by_steps[10]["error"])

    def test_zeta_boundary_sweep_completes(self, tmp_path):
        out = tmp_path / "zeta.csv"
        rc = cli.main(["bench", "--toy-task", "deblur", "--sweep-zeta", "0,1",
                       "--steps", "10", "--out", str(out)])
        assert rc == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 2
        assert all(r["status"] == "ok" for r in rows)

    def test_empty_matrix_writes_header_only(self, tmp_path):
        out = tmp_path / "empty.csv"
        rc = cli.main(["bench", "--sweep-steps", "", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 1 and lines[0].startswith("steps,")

    def test_partial_failures_marked(self, tmp_path):
        out = tmp_path / "fail.csv"
        rc = cli.main(["bench", "--sweep-lambda", "1.0,-2.0", "--steps", "5",
                       "--out", str(out)])
        assert rc == 1  # one bad cell
        rows = list(csv.DictReader(out.open()))
        statuses = sorted(r["status"][:5] for r in rows)
        assert statuses == ["error", "ok"]

    def test_image_mode_sweeps_a_measurement(self, gt_image, tmp_path):
        deg = tmp_path / "deg"
        cli.main(["degrade", "--task", "inpaint-box", "--box-size", "8", "--sigma-n", "0",
                  "--in", str(gt_image), "--out", str(deg)])
        out = tmp_path / "img.csv"
        rc = cli.main(["bench", "--task", "inpaint-box", "--sigma-n", "0",
                       "--in", str(deg / "y.npy"), "--mask", str(deg / "mask.png"),
                       "--gt", str(gt_image), "--denoiser", "oracle", "--zeta", "0",
                       "--sweep-steps", "5,20", "--out", str(out)])
        assert rc == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 2 and all(r["status"] == "ok" for r in rows)
        # oracle + noiseless inpainting recovers exactly at either step count
        assert all(float(r["psnr"]) == float("inf") for r in rows)

    def test_workers_parallel_matches_serial(self, tmp_path):
        serial, parallel = tmp_path / "s.csv", tmp_path / "p.csv"
        args = ["bench", "--toy-task", "deblur", "--sweep-steps", "5,10",
                "--seed", "4", "--steps", "5"]
        cli.main(args + ["--out", str(serial)])
        cli.main(args + ["--out", str(parallel), "--workers", "4"])
        rows_s = [r["error"] for r in csv.DictReader(serial.open())]
        rows_p = [r["error"] for r in csv.DictReader(parallel.open())]
        assert rows_s == rows_p

    def test_bench_provenance_replays(self, tmp_path):
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        rc = cli.main(["bench", "--toy-task", "deblur", "--sweep-zeta", "0.2,0.8",
                       "--steps", "5", "--seed", "3", "--out", str(first)])
        assert rc == 0
        rc = cli.main(["bench", "--config", str(tmp_path / "a.csv.provenance.json"),
                       "--out", str(second)])
        assert rc == 0
        assert first.read_text() != ""  # sanity
        rows_a = [(r["zeta"], r["error"]) for r in csv.DictReader(first.open())]
        rows_b = [(r["zeta"], r["error"]) for r in csv.DictReader(second.open())]
        assert rows_a == rows_b
