"""nnc-export: Keras HDF5/keras file -> nnc JSON model document."""

from __future__ import annotations

import argparse
import sys

from .export import UnsupportedLayer, export_file


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nnc-export",
        description="Convert a trained Keras model into the nnc JSON model document",
    )
    parser.add_argument("model", help="trained model (.h5 or .keras)")
    parser.add_argument("-o", "--output", default="model.json",
                        help="document path (default: model.json)")
    parser.add_argument("--manifest", default=None,
                        help="also write an export manifest JSON here")
    args = parser.parse_args(argv)

    try:
        manifest = export_file(args.model, args.output, args.manifest)
    except UnsupportedLayer as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.output}")
    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
