"""Denoiser backends served over the wire: echo fixture and TorchScript."""

from __future__ import annotations

import numpy as np

from .protocol import MODE_EPS, MODE_X0, RequestError


def linear_alpha_bar(n_train: int = 1000, beta_start: float = 1e-4,
                     beta_end: float = 0.02) -> np.ndarray:
    """alpha_bar table of the standard linear schedule, index 0 = timestep 1."""
    beta = np.linspace(beta_start, beta_end, n_train, dtype=np.float64)
    return np.cumprod(1.0 - beta)


def map_timestep(alpha_bar: float, table: np.ndarray) -> int:
    """1-based model timestep whose alpha_bar is nearest the requested one.

    The client's schedule need not match the checkpoint's training schedule,
    so the noise level (alpha_bar), not the raw index, decides. Ties break
    toward the larger timestep.
    """
    diffs = np.abs(table - alpha_bar)
    best = float(diffs.min())
    candidates = np.nonzero(diffs == best)[0]
    return int(candidates.max()) + 1


class EchoModel:
    """Returns the request payload unchanged; the loopback test fixture."""

    mode = MODE_X0
    channels = 0  # any

    def evaluate(self, x: np.ndarray, t: int, alpha_bar: float) -> np.ndarray:
        return x


class TorchScriptModel:
    """Wraps a TorchScript module called as module(x[N,C,H,W], t[N]) -> same shape.

    Timesteps are mapped through the checkpoint's alpha_bar table and passed
    0-based, the common convention for pretrained diffusion networks.
    """

    def __init__(self, checkpoint: str, mode: int = MODE_EPS, channels: int = 3,
                 device: str = "cpu", alpha_bar_table: np.ndarray | None = None):
        import torch  # deferred: echo mode must not require torch

        self._torch = torch
        self.module = torch.jit.load(checkpoint, map_location=device)
        self.module.eval()
        self.device = device
        self.mode = mode
        self.channels = channels
        self.table = linear_alpha_bar() if alpha_bar_table is None else alpha_bar_table

    def evaluate(self, x: np.ndarray, t: int, alpha_bar: float) -> np.ndarray:
        torch = self._torch
        model_t = map_timestep(alpha_bar, self.table) - 1
        with torch.no_grad():
            xt = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
            xt = xt.unsqueeze(0).to(self.device)
            tt = torch.tensor([model_t], dtype=torch.int64, device=self.device)
            out = self.module(xt, tt)
        out = out.detach().cpu().numpy()
        if out.ndim == 4 and out.shape[0] == 1:
            out = out[0]
        if out.shape != x.shape:
            raise RequestError(
                f"model produced shape {tuple(out.shape)} for input {tuple(x.shape)}")
        return np.asarray(out, dtype=np.float32)
