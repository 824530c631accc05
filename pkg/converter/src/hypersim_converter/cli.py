"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad remap table, malformed
metadata, unknown semantic id), 2 missing files.
"""

from __future__ import annotations

import argparse
import json
import sys

from .convert import convert_scene, write_split_manifest
from .index import BadIndex, MissingAsset, UnknownSemanticId, build_index


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypersim-convert",
        description="Convert Hypersim scenes into frame-bundle directories",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("convert", help="convert one or more scenes")
    p.add_argument("--scene", action="append", required=True,
                   help="scene id, e.g. ai_001_001 (repeatable)")
    p.add_argument("--hypersim-root", required=True, help="Hypersim dataset root")
    p.add_argument("--out", required=True, help="output directory for bundles")
    p.add_argument("--remap", help="JSON semantic remap table")
    p.add_argument("--seed", type=int, default=0, help="split manifest seed")
    p.set_defaults(func=cmd_convert)
    return parser


def cmd_convert(args) -> int:
    total = 0
    for scene_id in args.scene:
        index = build_index(args.hypersim_root, scene_id, remap_path=args.remap)
        total += len(convert_scene(index, args.out))
    manifest = write_split_manifest(args.out, seed=args.seed)
    print(f"converted {total} frames across {len(args.scene)} scenes")
    print(json.dumps(manifest["splits"], indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MissingAsset, FileNotFoundError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    except (BadIndex, UnknownSemanticId, ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
