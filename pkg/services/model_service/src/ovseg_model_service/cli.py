"""Command line for the model service."""

from __future__ import annotations

import argparse
import sys

from .backends import BackendUnavailable, make_backend
from .service import start_server


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ovseg-model-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8090)
    parser.add_argument("--profile", choices=["general", "industrial", "toy"], default="toy")
    parser.add_argument("--dim", type=int, default=32, help="embedding dim (toy profile)")
    parser.add_argument("--clip-model", default="ViT-B-32")
    parser.add_argument("--clip-pretrained", default="openai")
    parser.add_argument("--adapter-checkpoint", help="domain adapter weights (industrial)")
    parser.add_argument("--sam-checkpoint", help="SAM weights for /segment")
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    def factory():
        return make_backend(
            args.profile,
            dim=args.dim,
            clip_model=args.clip_model,
            clip_pretrained=args.clip_pretrained,
            adapter_checkpoint=args.adapter_checkpoint,
            sam_checkpoint=args.sam_checkpoint,
            device=args.device,
        )

    # Fail fast on misconfiguration instead of 503-looping.
    try:
        if args.profile != "toy":
            factory_result = factory()
            server = start_server(lambda: factory_result, args.host, args.port)
        else:
            server = start_server(factory, args.host, args.port)
    except BackendUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"model service [{args.profile}] on http://{args.host}:{server.server_address[1]}")
    try:
        import threading

        threading.Event().wait()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
