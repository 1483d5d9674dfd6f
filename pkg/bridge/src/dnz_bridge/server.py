"""DNZ1 server: one worker thread per connection, sequential requests within.

Error policy: a malformed handshake or frame gets a best-effort error frame
and the connection closes; a well-formed request the model rejects (wrong
channel count, bad alpha_bar) gets an error frame and the connection stays
open. The server never lets a client byte stream raise past the handler.
"""

from __future__ import annotations

import socket
import threading

import numpy as np

from . import protocol
from .protocol import FramingError, RequestError


class BridgeServer:
    def __init__(self, model, host: str = "127.0.0.1", port: int = 0,
                 unix_path: str | None = None):
        self.model = model
        if unix_path is not None:
            self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            self.sock.bind(unix_path)
            self.address = unix_path
        else:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self.sock.bind((host, port))
            self.address = "{}:{}".format(*self.sock.getsockname())
        self.sock.listen(8)
        self._shutdown = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def port(self) -> int:
        return self.sock.getsockname()[1]

    def serve_forever(self) -> None:
        while not self._shutdown.is_set():
            try:
                conn, _ = self.sock.accept()
            except OSError:
                break
            worker = threading.Thread(target=self._serve_connection, args=(conn,),
                                      daemon=True)
            worker.start()
            self._threads.append(worker)

    def shutdown(self) -> None:
        self._shutdown.set()
        try:
            self.sock.close()
        except OSError:
            pass

    def _serve_connection(self, conn: socket.socket) -> None:
        rfile = conn.makefile("rb")
        try:
            serve_stream(self.model, rfile, conn.sendall)
        finally:
            rfile.close()
            try:
                conn.close()
            except OSError:
                pass


def serve_stream(model, rfile, send) -> None:
    """Run the handshake + request loop over an arbitrary byte stream."""
    try:
        protocol.read_client_hello(rfile)
    except FramingError as exc:
        _safe_send(send, protocol.error_frame(str(exc)))
        return
    except EOFError:
        return
    if not _safe_send(send, protocol.server_hello(model.mode, model.channels)):
        return

    while True:
        try:
            request = protocol.read_request(rfile)
        except EOFError:
            return
        except FramingError as exc:
            _safe_send(send, protocol.error_frame(str(exc)))
            return
        except RequestError as exc:
            if not _safe_send(send, protocol.error_frame(str(exc))):
                return
            continue
        try:
            if model.channels and request.data.shape[0] != model.channels:
                raise RequestError(
                    f"model expects {model.channels} channels, got {request.data.shape[0]}")
            result = model.evaluate(request.data, request.t, request.alpha_bar)
            result = np.asarray(result, dtype=np.float32)
            if result.shape != request.data.shape:
                raise RequestError(f"backend returned shape {result.shape}")
            reply = protocol.response_frame(result)
        except RequestError as exc:
            reply = protocol.error_frame(str(exc))
        except Exception as exc:  # backend bugs must not kill the connection
            reply = protocol.error_frame(f"evaluation failed: {exc}")
        if not _safe_send(send, reply):
            return


def _safe_send(send, data: bytes) -> bool:
    try:
        send(data)
        return True
    except (OSError, ValueError):
        return False


def serve_stdio(model) -> None:
    import sys

    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer

    def send(data: bytes) -> None:
        stdout.write(data)
        stdout.flush()

    serve_stream(model, stdin, send)
