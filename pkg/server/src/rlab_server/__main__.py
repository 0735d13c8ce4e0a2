"""Serve a classifier over the classify protocol.

Usage: rlab-server --model dummy --port 8008
       rlab-server --model reference:victim.rlt --port 8008
       rlab-server --model torchvision:resnet50 --max-batch 64
"""

import argparse
import sys

import uvicorn

from .app import DEFAULT_MAX_BATCH, create_app
from .models import load_model


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rlab-server", description=__doc__)
    parser.add_argument("--model", default="dummy", help="dummy | reference:PATH | torchvision:NAME")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--max-batch", type=int, default=DEFAULT_MAX_BATCH)
    parser.add_argument("--log-level", default="warning")
    args = parser.parse_args(argv)

    try:
        model = load_model(args.model)
    except Exception as exc:
        print(f"cannot load model {args.model!r}: {exc}", file=sys.stderr)
        return 1

    app = create_app(model, max_batch=args.max_batch)
    uvicorn.run(app, host=args.host, port=args.port, log_level=args.log_level)
    return 0


if __name__ == "__main__":
    sys.exit(main())
