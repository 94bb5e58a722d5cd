"""Command line entry point: hf-logit-bridge --checkpoint PATH [--port N]."""

from __future__ import annotations

import argparse
import sys

from .bridge import BridgeConfig, make_bridge_server


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hf-logit-bridge",
        description="Serve a transformer checkpoint's next-token logits "
        "over the logit wire protocol.",
    )
    parser.add_argument("--checkpoint", required=True,
                        help="model id or local path loadable by transformers")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--port", type=int, default=0,
                        help="0 picks an ephemeral port")
    parser.add_argument("--name", default=None,
                        help="name reported in /v1/metadata (default: checkpoint)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = BridgeConfig(
        checkpoint=args.checkpoint, device=args.device,
        port=args.port, name=args.name,
    )
    try:
        server = make_bridge_server(config)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    host, port = server.server_address
    print(f"serving {config.name or config.checkpoint} at http://{host}:{port}",
          flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
