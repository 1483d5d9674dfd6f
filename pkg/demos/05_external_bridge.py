"""Restoration through the out-of-process denoiser bridge.

Spawns the standalone dnz-bridge server in echo mode (install it with
``pip install -e bridge/``), connects the external denoiser client to it over
a local socket, and runs a short restoration. With a real TorchScript
checkpoint, replace ``--echo`` with ``--checkpoint <path> --mode eps``.
"""

import socket
import subprocess
import sys
import time

import numpy as np
from _shared import test_image

from diffpir import (
    DegradationModel,
    SamplerConfig,
    apply,
    build_linear_schedule,
    quadratic_subsequence,
    run_diffpir,
)
from diffpir.denoise import external_denoiser

with socket.socket() as probe:
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]

server = subprocess.Popen(
    [sys.executable, "-m", "dnz_bridge", "--echo", "--listen", f"tcp:127.0.0.1:{port}"],
    stderr=subprocess.DEVNULL)
try:
    for _ in range(50):
        try:
            socket.create_connection(("127.0.0.1", port), timeout=0.5).close()
            break
        except OSError:
            time.sleep(0.1)
    else:
        sys.exit("bridge did not start; is dnz-bridge installed? (pip install -e bridge/)")

    x_true = test_image(size=32, seed=4)
    schedule = build_linear_schedule(1000, 1e-4, 0.02)
    rng = np.random.default_rng(17)
    model = DegradationModel.identity(sigma_n=0.05)
    y = apply(model, x_true, rng)

    den = external_denoiser(f"tcp:127.0.0.1:{port}", timeout=10.0)
    mode = "clean-image" if den.output_mode == 0 else "noise"
    print(f"bridge handshake: {mode} predictions, "
          f"{den.model_channels or 'any'} channels")

    plan = quadratic_subsequence(1000, 10, 1000)
    cfg = SamplerConfig(lambda_=5.0, zeta=0.0, steps=10, seed=17)
    out, traj = run_diffpir(y, model, den, schedule, plan, cfg)
    den.close()
    print(f"ran {traj.nfe} denoiser evaluations through the bridge; "
          f"output range [{out.min():.3f}, {out.max():.3f}]")
finally:
    server.terminate()
    server.wait(timeout=10)
