"""CLI: `detbridge --mode dummy|plugin [--plugin path] [--http PORT]`."""

from __future__ import annotations

import argparse
import sys

from . import BridgeConfig, __version__
from .server import serve_http, serve_stdio


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="detbridge",
                                     description="detector bridge over stdio NDJSON or HTTP")
    parser.add_argument("--version", action="version", version=f"detbridge {__version__}")
    parser.add_argument("--mode", choices=("dummy", "plugin"), default="dummy")
    parser.add_argument("--plugin", default=None,
                        help="module path exposing detect(image) (plugin mode)")
    parser.add_argument("--http", type=int, default=None, metavar="PORT",
                        help="serve HTTP on PORT instead of stdio (0 picks a free port)")
    parser.add_argument("--dummy-confidence", type=float, default=0.9)
    args = parser.parse_args(argv)

    try:
        config = BridgeConfig(mode=args.mode, plugin_path=args.plugin,
                              dummy_confidence=args.dummy_confidence)
        if args.http is not None:
            serve_http(config, args.http)
        else:
            serve_stdio(config)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
