"""Command line entry point for the bridge server."""

from __future__ import annotations

import argparse
import sys

from .model import EchoModel, TorchScriptModel, linear_alpha_bar
from .protocol import MODE_EPS, MODE_X0
from .server import BridgeServer, serve_stdio


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnz-bridge",
                                description="Serve a diffusion denoiser over DNZ1")
    p.add_argument("--checkpoint", help="TorchScript checkpoint path")
    p.add_argument("--mode", choices=("x0", "eps"), default="eps",
                   help="what the checkpoint predicts (reported in the handshake)")
    p.add_argument("--channels", type=int, default=3,
                   help="channel count the checkpoint expects (0 = any)")
    p.add_argument("--listen", default="tcp:127.0.0.1:8191",
                   help="tcp:HOST:PORT or unix:PATH")
    p.add_argument("--stdio", action="store_true", help="serve a single stdio session")
    p.add_argument("--echo", action="store_true",
                   help="no model: return request payloads unchanged")
    p.add_argument("--n-train", type=int, default=1000,
                   help="training timesteps of the checkpoint's schedule")
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--device", default="cpu")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.echo:
        model = EchoModel()
    elif args.checkpoint:
        mode = MODE_X0 if args.mode == "x0" else MODE_EPS
        table = linear_alpha_bar(args.n_train, args.beta_start, args.beta_end)
        # the checkpoint must load before any connection is accepted
        model = TorchScriptModel(args.checkpoint, mode=mode, channels=args.channels,
                                 device=args.device, alpha_bar_table=table)
    else:
        print("error: need --checkpoint or --echo", file=sys.stderr)
        return 2

    if args.stdio:
        serve_stdio(model)
        return 0

    if args.listen.startswith("unix:"):
        server = BridgeServer(model, unix_path=args.listen[len("unix:"):])
    else:
        target = args.listen[len("tcp:"):] if args.listen.startswith("tcp:") else args.listen
        host, _, port = target.rpartition(":")
        server = BridgeServer(model, host=host or "127.0.0.1", port=int(port))
    print(f"dnz-bridge listening on {server.address}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
