"""Standalone DNZ1 bridge: serve a diffusion denoiser to out-of-process clients."""

from .model import EchoModel, TorchScriptModel, linear_alpha_bar, map_timestep
from .protocol import (
    MAGIC,
    MODE_EPS,
    MODE_X0,
    TYPE_ERROR,
    TYPE_REQUEST,
    TYPE_RESPONSE,
    VERSION,
)
from .server import BridgeServer, serve_stdio, serve_stream

__version__ = "0.1.0"
