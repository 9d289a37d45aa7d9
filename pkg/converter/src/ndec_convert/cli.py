"""ndec-convert: batch converter from source recordings to NDEC v1."""

import argparse
import sys

from .convert import convert_tree
from .reader import SourceFormatError


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ndec-convert",
        description="Convert MATLAB v7.3 / HDF5 primate-reaching recordings "
                    "to NDEC v1 session files (one .ndec + .json per input).",
    )
    parser.add_argument("source", help="a .mat file or a directory of them")
    parser.add_argument("--out-dir", default=".", help="output directory")
    args = parser.parse_args(argv)
    try:
        manifests = convert_tree(args.source, args.out_dir)
    except (SourceFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for m in manifests:
        print(f"{m['source']} -> {m['n_probes']} probes, "
              f"{m['n_samples']} samples")
    return 0


if __name__ == "__main__":
    sys.exit(main())
