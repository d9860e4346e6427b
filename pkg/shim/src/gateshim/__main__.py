"""Command line: gateshim --config shim.cfg [--op ocr=fixed:LEA123] [--root DIR]"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .server import Shim, ShimConfig, serve_stdio, serve_tcp


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gateshim",
        description="Inference backend shim for the gate line protocol")
    parser.add_argument("--config", type=Path, help="key=value config file")
    parser.add_argument("--op", action="append", default=[], metavar="OP=SPEC",
                        help="enable an op with an engine spec (repeatable)")
    parser.add_argument("--root", type=Path, help="base for relative paths")
    parser.add_argument("--embed-dim", type=int, help="required embedding dimension")
    parser.add_argument("--tcp", type=int, metavar="PORT",
                        help="serve on a TCP port instead of stdio")
    args = parser.parse_args(argv)

    try:
        config = ShimConfig.from_file(args.config) if args.config else ShimConfig()
        for entry in args.op:
            if "=" not in entry:
                parser.error(f"--op needs OP=SPEC, got {entry!r}")
            op, _, spec = entry.partition("=")
            config.engines[op.strip()] = spec.strip()
        if args.root:
            config.root = args.root
        if args.embed_dim is not None:
            config.embed_dim = args.embed_dim
        if args.tcp is not None:
            config.transport = f"tcp:{args.tcp}"
        shim = Shim(config)
    except Exception as exc:
        print(f"gateshim: startup failed: {exc}", file=sys.stderr)
        return 2

    if config.transport == "stdio":
        serve_stdio(shim)
    elif config.transport.startswith("tcp:"):
        serve_tcp(shim, int(config.transport.partition(":")[2]))
    else:
        print(f"gateshim: unknown transport {config.transport!r}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
