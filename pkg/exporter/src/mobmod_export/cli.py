"""mobmod-export command line: one-shot bundle export and verification."""

from __future__ import annotations

import argparse
import sys

from mobmod_export.convert import ExportError, export_bundle, verify_bundle


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mobmod-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="convert a CLIP checkpoint into an encoder bundle")
    p.add_argument("--model", required=True, choices=["vit-b-16"])
    p.add_argument(
        "--weights",
        help="checkpoint directory or hub id (default: the pretrained weights for --model)",
    )
    p.add_argument("--out", required=True, help="bundle output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for parity sample inputs")

    p = sub.add_parser("verify", help="replay parity vectors through the exported models")
    p.add_argument("--bundle", required=True, help="bundle directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "export":
            files = export_bundle(args.model, args.weights, args.out, seed=args.seed)
            for path in files:
                print(f"wrote {path}")
            return 0
        worst = verify_bundle(args.bundle)
        print(f"parity ok: max abs diff {worst:.2e}")
        return 0
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
