"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 missing prerequisite stage,
4 provider failure after retries.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import MissingStage, OvsegError, ProviderUnavailable
from .pipeline import (
    PipelineConfig,
    SYNTHETIC_URL,
    cmd_features,
    cmd_prepare,
    cmd_query,
    cmd_stats,
    load_config,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument(
        "--provider",
        choices=["synthetic"],
        help="override both provider URLs with the in-process synthetic provider",
    )


def _load(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.provider == "synthetic":
        cfg.merge_provider_url = SYNTHETIC_URL
        cfg.query_provider_url = SYNTHETIC_URL
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ovseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_prepare = sub.add_parser("prepare", help="load, downsample, oversegment, visibility")
    _add_common(p_prepare)

    p_features = sub.add_parser("features", help="extract features and run the merge loop")
    _add_common(p_features)

    p_query = sub.add_parser("query", help="score a text prompt and export results")
    _add_common(p_query)
    p_query.add_argument("--prompt", required=True)
    p_query.add_argument("--threshold", type=float, help="absolute score threshold")
    p_query.add_argument("--percentile", type=float, help="percentile score threshold")
    p_query.add_argument("--no-cluster", action="store_true", help="skip instance clustering")
    p_query.add_argument("--heatmap", help="output PLY heatmap path")
    p_query.add_argument("--instances", help="output PLY instances path")
    p_query.add_argument("--json", dest="json_out", help="output JSON result path")

    p_serve = sub.add_parser("serve", help="serve the query API and viewer")
    _add_common(p_serve)
    p_serve.add_argument("--bind", default="127.0.0.1:8080")
    p_serve.add_argument("--static", help="directory of viewer static files")

    p_stats = sub.add_parser("stats", help="print superpoint graph statistics")
    _add_common(p_stats)

    p_synth = sub.add_parser("synth", help="generate the synthetic box scene")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--spacing", type=float, default=0.01)
    p_synth.add_argument("--views", type=int, default=12)

    args = parser.parse_args(argv)
    try:
        if args.command == "prepare":
            status = cmd_prepare(_load(args))
            for stage, state in status.items():
                print(f"{stage}: {state}")
        elif args.command == "features":
            out = cmd_features(_load(args))
            print(json.dumps(out, indent=2, sort_keys=True))
        elif args.command == "query":
            if not args.prompt.strip():
                print("error: empty prompt", file=sys.stderr)
                return 2
            out = cmd_query(
                _load(args),
                args.prompt,
                threshold=args.threshold,
                percentile=args.percentile,
                cluster=not args.no_cluster,
                heatmap_path=args.heatmap,
                instances_path=args.instances,
                json_path=args.json_out,
            )
            print(json.dumps(out, indent=2, sort_keys=True))
        elif args.command == "serve":
            from .serve import serve_forever

            serve_forever(_load(args), args.bind, args.static)
        elif args.command == "stats":
            print(json.dumps(cmd_stats(_load(args)), indent=2, sort_keys=True))
        elif args.command == "synth":
            from .synthetic_scene import build_scene, write_scene

            scene = build_scene(spacing=args.spacing, n_views=args.views)
            manifest = write_scene(scene, args.out)
            print(f"wrote {scene.bundle.cloud.count} points, "
                  f"{len(scene.bundle.views)} views -> {manifest}")
    except MissingStage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ProviderUnavailable as exc:
        print(f"error: provider unavailable: {exc}", file=sys.stderr)
        return 4
    except OvsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
