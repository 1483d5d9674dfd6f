"""End-to-end interop with the standalone bridge package over a real socket.

Skipped when the dnz-bridge package is not installed; everything here goes
through the wire protocol only.
"""

import socket
import subprocess
import sys
import time

import numpy as np
import pytest

from diffpir import degrade, sample
from diffpir.degrade import DegradationModel
from diffpir.denoise import ExternalDenoiser
from diffpir.sample import SamplerConfig
from diffpir.schedule import build_linear_schedule, quadratic_subsequence

pytest.importorskip("dnz_bridge")

S = build_linear_schedule(1000, 1e-4, 0.02)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def echo_bridge():
    port = free_port()
    proc = subprocess.Popen(
        [sys.executable, "-m", "dnz_bridge", "--echo", "--listen", f"tcp:127.0.0.1:{port}"],
        stderr=subprocess.PIPE)
    deadline = time.time() + 15.0
    while time.time() < deadline:
        try:
            socket.create_connection(("127.0.0.1", port), timeout=0.5).close()
            break
        except OSError:
            time.sleep(0.1)
    else:
        proc.terminate()
        pytest.fail("bridge subprocess never started listening")
    yield f"tcp:127.0.0.1:{port}"
    proc.terminate()
    proc.wait(timeout=10)


def test_external_denoiser_against_real_bridge(echo_bridge):
    with ExternalDenoiser(echo_bridge, timeout=10.0) as den:
        assert den.output_mode == 0  # echo advertises x0
        x_t = np.random.default_rng(0).random((3, 16, 16))
        out = den.predict_x0(x_t, 500, S)
        assert np.abs(out - x_t).max() < 1e-6


def test_sampler_runs_through_the_bridge(echo_bridge):
    rng = np.random.default_rng(1)
    x_true = rng.random((1, 8, 8))
    model = DegradationModel.identity(sigma_n=0.0)
    y = degrade.apply(model, x_true, rng)
    plan = quadratic_subsequence(1000, 5, 1000)
    cfg = SamplerConfig(lambda_=5.0, zeta=0.0, steps=5)
    with ExternalDenoiser(echo_bridge, timeout=10.0) as den:
        out, traj = sample.run_diffpir(y, model, den, S, plan, cfg)
    assert traj.nfe == 5
    assert out.shape == y.shape and np.all(np.isfinite(out))


def test_external_denoiser_over_unix_socket(tmp_path):
    sock_path = str(tmp_path / "bridge.sock")
    proc = subprocess.Popen(
        [sys.executable, "-m", "dnz_bridge", "--echo", "--listen", f"unix:{sock_path}"],
        stderr=subprocess.PIPE)
    try:
        deadline = time.time() + 15.0
        while time.time() < deadline:
            try:
                s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
                s.connect(sock_path)
                s.close()
                break
            except OSError:
                time.sleep(0.1)
        else:
            pytest.fail("unix-socket bridge never started")
        with ExternalDenoiser(f"unix:{sock_path}", timeout=10.0) as den:
            x_t = np.random.default_rng(3).random((1, 4, 4))
            assert np.abs(den.predict_x0(x_t, 100, S) - x_t).max() < 1e-6
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_cli_extern_denoiser_via_env_var(echo_bridge, tmp_path, monkeypatch):
    from PIL import Image

    from diffpir import cli

    data = np.random.default_rng(2).integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    gt = tmp_path / "gt.png"
    Image.fromarray(data, mode="RGB").save(gt)
    deg = tmp_path / "deg"
    assert cli.main(["degrade", "--task", "inpaint-box", "--box-size", "4",
                     "--sigma-n", "0", "--in", str(gt), "--out", str(deg)]) == 0
    monkeypatch.setenv("DIFFPIR_BRIDGE", echo_bridge)
    rc = cli.main(["restore", "--task", "inpaint-box", "--sigma-n", "0",
                   "--in", str(deg / "y.npy"), "--mask", str(deg / "mask.png"),
                   "--denoiser", "extern", "--steps", "4",
                   "--out", str(tmp_path / "o.png")])
    assert rc == 0 and (tmp_path / "o.png").exists()
