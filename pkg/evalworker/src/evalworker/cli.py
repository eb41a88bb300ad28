"""Command-line entry point."""

from __future__ import annotations

import argparse
from pathlib import Path

from .worker import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="evalworker",
        description="Evaluation worker speaking the line protocol on "
                    "stdin/stdout; scores pipeline requests with "
                    "cross-validated scikit-learn models.")
    parser.add_argument("--data", required=True, type=Path,
                        help="directory holding datasets and their "
                             ".meta.json sidecars")
    args = parser.parse_args(argv)
    if not args.data.is_dir():
        parser.error(f"--data directory {args.data} does not exist")
    serve(args.data)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
