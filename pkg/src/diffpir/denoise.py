"""The prior subproblem: clean-image prediction from a noisy diffusion state.

A denoiser is anything with

    predict_x0(x_t, t, schedule) -> image

Analytic Gaussian and Gaussian-mixture priors provide exact scores (and
therefore exact posterior means via Tweedie's formula) for verification; the
oracle denoiser short-circuits to a known ground truth; the external client
bridges to an out-of-process neural denoiser over the DNZ1 wire protocol.

DNZ1 protocol (authoritative definition; all integers little-endian)
---------------------------------------------------------------------
Handshake:  client sends magic ``DNZ1`` + u32 version (=1); server replies
            magic + u32 version + u8 output mode (0 = x0, 1 = eps) + u32
            model channel count (0 = any).
Request:    u8 type=1, u32 payload length, f32 alpha_bar, u32 t, u32 C,
            u32 H, u32 W, then C*H*W f32 values row-major per channel.
Response:   u8 type=2, u32 payload length, u32 C, u32 H, u32 W, payload.
Error:      u8 type=3, u32 payload length, UTF-8 message.
Transport:  local TCP/unix socket or a pipe pair. Values cross the wire in
            the [-1, 1] range used by pretrained diffusion checkpoints;
            conversion happens at this boundary.
"""

from __future__ import annotations

import math
import socket
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    ConnectionLost,
    OutOfRange,
    ProtocolViolation,
    RemoteError,
    ShapeMismatch,
)
from .imgcore import as_image
from .schedule import NoiseSchedule

__all__ = [
    "DenoiserHandle",
    "GaussianPrior",
    "GmmPrior",
    "predict_x0_from_score",
    "eps_from_x0",
    "x0_from_eps",
    "gaussian_score",
    "gaussian_log_density",
    "gmm_score",
    "gmm_log_density",
    "GaussianDenoiser",
    "GmmDenoiser",
    "OracleDenoiser",
    "oracle_denoiser",
    "ExternalDenoiser",
    "external_denoiser",
    "CountingDenoiser",
    "MAGIC",
    "PROTOCOL_VERSION",
    "MODE_X0",
    "MODE_EPS",
    "TYPE_REQUEST",
    "TYPE_RESPONSE",
    "TYPE_ERROR",
]


# ---------------------------------------------------------------------------
# conversions between x0 / eps / score parameterizations
# ---------------------------------------------------------------------------

def predict_x0_from_score(x_t: np.ndarray, score: np.ndarray, alpha_bar: float) -> np.ndarray:
    """Tweedie posterior mean: x0 = (x_t + (1 - ab) * score) / sqrt(ab)."""
    if not 0.0 < alpha_bar <= 1.0:
        raise OutOfRange(f"alpha_bar must be in (0, 1], got {alpha_bar}")
    x_t = np.asarray(x_t, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    if x_t.shape != score.shape:
        raise ShapeMismatch(f"x_t {x_t.shape} vs score {score.shape}")
    return (x_t + (1.0 - alpha_bar) * score) / math.sqrt(alpha_bar)


def eps_from_x0(x_t: np.ndarray, x0: np.ndarray, alpha_bar: float) -> np.ndarray:
    """Effective predicted noise implied by a clean estimate."""
    return (x_t - math.sqrt(alpha_bar) * x0) / math.sqrt(1.0 - alpha_bar)


def x0_from_eps(x_t: np.ndarray, eps: np.ndarray, alpha_bar: float) -> np.ndarray:
    """Invert the forward sample map x_t = sqrt(ab) x0 + sqrt(1-ab) eps."""
    return (x_t - math.sqrt(1.0 - alpha_bar) * eps) / math.sqrt(alpha_bar)


# ---------------------------------------------------------------------------
# analytic priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPrior:
    """Isotropic Gaussian N(mean, var * I); mean may be scalar or image-shaped."""

    mean: float | np.ndarray
    var: float

    def __post_init__(self):
        if self.var <= 0:
            raise OutOfRange(f"variance must be positive, got {self.var}")


@dataclass(frozen=True)
class GmmPrior:
    """Mixture of isotropic Gaussians (weights sum to 1)."""

    weights: tuple[float, ...]
    means: tuple
    variances: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.variances)):
            raise OutOfRange("component lists must have equal length")
        if any(w <= 0 for w in self.weights):
            raise OutOfRange("component weights must be positive")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise OutOfRange(f"weights must sum to 1, got {sum(self.weights)}")
        if any(v <= 0 for v in self.variances):
            raise OutOfRange("component variances must be positive")


def _diffused(ab: float, mean, var: float):
    """Mean and variance of a prior component pushed to noise level alpha_bar."""
    return math.sqrt(ab) * np.asarray(mean, dtype=np.float64), ab * var + 1.0 - ab


def gaussian_score(prior: GaussianPrior, x_t: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """Score of the diffused marginal N(sqrt(ab) mu, (ab s^2 + 1 - ab) I)."""
    ab = s.alpha_bar_at(t)
    m, v = _diffused(ab, prior.mean, prior.var)
    return -(np.asarray(x_t, dtype=np.float64) - m) / v


def gaussian_log_density(prior: GaussianPrior, x_t: np.ndarray, t: int, s: NoiseSchedule) -> float:
    """Log-density of the diffused marginal at x_t (all pixels jointly)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    ab = s.alpha_bar_at(t)
    m, v = _diffused(ab, prior.mean, prior.var)
    n = x_t.size
    return float(-0.5 * n * math.log(2.0 * math.pi * v) - np.sum((x_t - m) ** 2) / (2.0 * v))


def _gmm_log_terms(prior: GmmPrior, x_t: np.ndarray, t: int, s: NoiseSchedule):
    ab = s.alpha_bar_at(t)
    n = x_t.size
    logs = []
    diffused = []
    for w, mean, var in zip(prior.weights, prior.means, prior.variances):
        m, v = _diffused(ab, mean, var)
        logs.append(math.log(w) - 0.5 * n * math.log(2.0 * math.pi * v)
                    - float(np.sum((x_t - m) ** 2)) / (2.0 * v))
        diffused.append((m, v))
    return np.array(logs), diffused


def gmm_score(prior: GmmPrior, x_t: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """Score of the diffused mixture, stabilized with log-sum-exp."""
    x_t = np.asarray(x_t, dtype=np.float64)
    logs, diffused = _gmm_log_terms(prior, x_t, t, s)
    r = np.exp(logs - logs.max())
    r /= r.sum()
    out = np.zeros_like(x_t)
    for ri, (m, v) in zip(r, diffused):
        out += ri * (m - x_t) / v
    return out


def gmm_log_density(prior: GmmPrior, x_t: np.ndarray, t: int, s: NoiseSchedule) -> float:
    x_t = np.asarray(x_t, dtype=np.float64)
    logs, _ = _gmm_log_terms(prior, x_t, t, s)
    m = logs.max()
    return float(m + math.log(np.exp(logs - m).sum()))


# ---------------------------------------------------------------------------
# denoiser handles
# ---------------------------------------------------------------------------

class DenoiserHandle:
    """Callable contract shared by every denoiser."""

    def predict_x0(self, x_t: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        raise NotImplementedError

    def score(self, x_t: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        """Marginal score, where an analytic form exists."""
        raise NotImplementedError(f"{type(self).__name__} has no analytic score")

    def apply_x0_jacobian(self, x_t: np.ndarray, t: int, s: NoiseSchedule,
                          vec: np.ndarray) -> Optional[np.ndarray]:
        """Jacobian-vector product of x0(x_t), or None when unavailable."""
        return None


class GaussianDenoiser(DenoiserHandle):
    def __init__(self, prior: GaussianPrior):
        self.prior = prior

    def score(self, x_t, t, s):
        return gaussian_score(self.prior, x_t, t, s)

    def predict_x0(self, x_t, t, s):
        return predict_x0_from_score(x_t, self.score(x_t, t, s), s.alpha_bar_at(t))

    def apply_x0_jacobian(self, x_t, t, s, vec):
        ab = s.alpha_bar_at(t)
        _, v = _diffused(ab, 0.0, self.prior.var)
        # x0 is affine in x_t with constant diagonal Jacobian
        return (math.sqrt(ab) * self.prior.var / v) * np.asarray(vec, dtype=np.float64)


class GmmDenoiser(DenoiserHandle):
    def __init__(self, prior: GmmPrior):
        self.prior = prior

    def score(self, x_t, t, s):
        if len(self.prior.weights) == 1:
            g = GaussianPrior(mean=self.prior.means[0], var=self.prior.variances[0])
            return gaussian_score(g, x_t, t, s)
        return gmm_score(self.prior, x_t, t, s)

    def predict_x0(self, x_t, t, s):
        return predict_x0_from_score(x_t, self.score(x_t, t, s), s.alpha_bar_at(t))

    def apply_x0_jacobian(self, x_t, t, s, vec):
        x_t = np.asarray(x_t, dtype=np.float64)
        vec = np.asarray(vec, dtype=np.float64)
        ab = s.alpha_bar_at(t)
        logs, diffused = _gmm_log_terms(self.prior, x_t, t, s)
        r = np.exp(logs - logs.max())
        r /= r.sum()
        score = np.zeros_like(x_t)
        us = []
        for ri, (m, v) in zip(r, diffused):
            u = (m - x_t) / v
            us.append(u)
            score += ri * u
        # Hessian of log p applied to vec: sum_i r_i u_i <u_i, v>
        #   - score <score, v> - (sum_i r_i / v_i) v
        hv = -sum(ri / v for ri, (_, v) in zip(r, diffused)) * vec
        hv = hv + sum(ri * u * float(np.sum(u * vec)) for ri, u in zip(r, us))
        hv = hv - score * float(np.sum(score * vec))
        return (vec + (1.0 - ab) * hv) / math.sqrt(ab)


class OracleDenoiser(DenoiserHandle):
    """Returns a fixed ground truth regardless of state and timestep."""

    def __init__(self, x_true: np.ndarray):
        self.x_true = as_image(x_true)

    def predict_x0(self, x_t, t, s):
        if np.asarray(x_t).shape != self.x_true.shape:
            raise ShapeMismatch(f"x_t {np.asarray(x_t).shape} vs truth {self.x_true.shape}")
        return self.x_true.copy()

    def apply_x0_jacobian(self, x_t, t, s, vec):
        return np.zeros_like(self.x_true)


def oracle_denoiser(x_true: np.ndarray) -> OracleDenoiser:
    return OracleDenoiser(x_true)


class CountingDenoiser(DenoiserHandle):
    """Wrapper counting predict_x0 evaluations (NFE accounting)."""

    def __init__(self, inner: DenoiserHandle):
        self.inner = inner
        self.calls = 0

    def predict_x0(self, x_t, t, s):
        self.calls += 1
        return self.inner.predict_x0(x_t, t, s)

    def score(self, x_t, t, s):
        return self.inner.score(x_t, t, s)

    def apply_x0_jacobian(self, x_t, t, s, vec):
        return self.inner.apply_x0_jacobian(x_t, t, s, vec)


# ---------------------------------------------------------------------------
# DNZ1 bridge client
# ---------------------------------------------------------------------------

MAGIC = b"DNZ1"
PROTOCOL_VERSION = 1
MODE_X0 = 0
MODE_EPS = 1
TYPE_REQUEST = 1
TYPE_RESPONSE = 2
TYPE_ERROR = 3

_REQUEST_HEADER = struct.Struct("<fIIII")  # alpha_bar, t, C, H, W
_RESPONSE_HEADER = struct.Struct("<III")  # C, H, W


class _Stream:
    """Blocking read/write over a socket or a (reader, writer) file pair."""

    def __init__(self, sock: Optional[socket.socket] = None, rfile=None, wfile=None,
                 timeout: Optional[float] = None):
        self._sock = sock
        self._rfile = rfile
        self._wfile = wfile
        if sock is not None:
            sock.settimeout(timeout)

    def write(self, data: bytes) -> None:
        try:
            if self._sock is not None:
                self._sock.sendall(data)
            else:
                self._wfile.write(data)
                self._wfile.flush()
        except socket.timeout as exc:
            raise ConnectionLost("send timed out") from exc
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise ConnectionLost(f"send failed: {exc}") from exc

    def read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            try:
                if self._sock is not None:
                    chunk = self._sock.recv(remaining)
                else:
                    chunk = self._rfile.read(remaining)
            except socket.timeout as exc:
                raise ConnectionLost("receive timed out") from exc
            except (OSError, ValueError) as exc:
                raise ConnectionLost(f"receive failed: {exc}") from exc
            if not chunk:
                if remaining == n:
                    raise ConnectionLost("connection closed by bridge")
                raise ProtocolViolation(f"truncated frame: expected {n} bytes, got {n - remaining}")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        for obj in (self._sock, self._rfile, self._wfile):
            if obj is not None:
                try:
                    obj.close()
                except OSError:
                    pass


def _connect(endpoint: str, timeout: Optional[float]) -> socket.socket:
    try:
        if endpoint.startswith("unix:"):
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            sock.settimeout(timeout)
            sock.connect(endpoint[len("unix:"):])
            return sock
        if endpoint.startswith("tcp:"):
            endpoint = endpoint[len("tcp:"):]
        host, _, port = endpoint.rpartition(":")
        return socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
    except (OSError, ValueError) as exc:
        raise ConnectionLost(f"cannot connect to bridge at {endpoint!r}: {exc}") from exc


class ExternalDenoiser(DenoiserHandle):
    """Client for an out-of-process denoiser speaking the DNZ1 protocol.

    One handle owns one connection and serializes its requests; concurrent
    samplers must each open their own handle. Every request is bounded by
    ``timeout`` seconds; expiry raises ConnectionLost.
    """

    def __init__(self, endpoint: Optional[str] = None, timeout: float = 30.0,
                 rfile=None, wfile=None):
        if endpoint is not None:
            self._stream = _Stream(sock=_connect(endpoint, timeout), timeout=timeout)
        elif rfile is not None and wfile is not None:
            self._stream = _Stream(rfile=rfile, wfile=wfile)
        else:
            raise OutOfRange("either endpoint or a pipe pair is required")
        self.endpoint = endpoint
        self._handshake()

    def _handshake(self) -> None:
        self._stream.write(MAGIC + struct.pack("<I", PROTOCOL_VERSION))
        reply = self._stream.read_exact(4 + 4 + 1 + 4)
        if reply[:4] != MAGIC:
            raise ProtocolViolation(f"bad handshake magic {reply[:4]!r}")
        version, = struct.unpack_from("<I", reply, 4)
        if version != PROTOCOL_VERSION:
            raise ProtocolViolation(f"unsupported protocol version {version}")
        self.output_mode = reply[8]
        if self.output_mode not in (MODE_X0, MODE_EPS):
            raise ProtocolViolation(f"unknown output mode {self.output_mode}")
        self.model_channels, = struct.unpack_from("<I", reply, 9)

    def close(self) -> None:
        self._stream.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def predict_x0(self, x_t: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        x_t = as_image(x_t)
        c, h, w = x_t.shape
        if self.model_channels and c != self.model_channels:
            raise ShapeMismatch(f"bridge model expects {self.model_channels} channels, got {c}")
        ab = s.alpha_bar_at(t)
        payload = np.ascontiguousarray(2.0 * x_t - 1.0, dtype="<f4").tobytes()
        header = _REQUEST_HEADER.pack(ab, t, c, h, w)
        frame = struct.pack("<BI", TYPE_REQUEST, len(header) + len(payload)) + header + payload
        self._stream.write(frame)
        out = self._read_response((c, h, w))
        if self.output_mode == MODE_EPS:
            x_model = 2.0 * x_t - 1.0
            out = x0_from_eps(x_model, out, ab)
        return (out + 1.0) / 2.0

    def _read_response(self, expected_shape: tuple[int, int, int]) -> np.ndarray:
        head = self._stream.read_exact(5)
        ftype, length = struct.unpack("<BI", head)
        if ftype == TYPE_ERROR:
            msg = self._stream.read_exact(length)
            raise RemoteError(msg.decode("utf-8", errors="replace"))
        if ftype != TYPE_RESPONSE:
            raise ProtocolViolation(f"unexpected frame type {ftype}")
        if length < _RESPONSE_HEADER.size:
            raise ProtocolViolation(f"response frame too short ({length} bytes)")
        body = self._stream.read_exact(length)
        c, h, w = _RESPONSE_HEADER.unpack_from(body)
        if length != _RESPONSE_HEADER.size + 4 * c * h * w:
            raise ProtocolViolation("response length does not match its dimensions")
        if (c, h, w) != expected_shape:
            raise ShapeMismatch(f"bridge returned shape {(c, h, w)}, expected {expected_shape}")
        data = np.frombuffer(body, dtype="<f4", offset=_RESPONSE_HEADER.size)
        return data.reshape(c, h, w).astype(np.float64)


def external_denoiser(endpoint: str, timeout: float = 30.0) -> ExternalDenoiser:
    return ExternalDenoiser(endpoint=endpoint, timeout=timeout)
