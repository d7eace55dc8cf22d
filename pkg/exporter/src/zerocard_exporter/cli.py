"""Command line: exporter --schema <glob> --out <path> --model <name>."""

from __future__ import annotations

import argparse
import json
import sys

from .export import DEFAULT_MODEL, ExportJob, ModelLoadError, SchemaParseError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exporter", description=__doc__)
    parser.add_argument("--schema", action="append", required=True,
                        help="schema JSON file or glob (repeatable)")
    parser.add_argument("--out", required=True, help="output ZCEMB1 path")
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help="sentence-transformer name or local path")
    parser.add_argument("--no-normalize", action="store_true",
                        help="write raw encoder outputs without unit-norm scaling")
    parser.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        schema_paths=args.schema,
        output_path=args.out,
        model_name=args.model,
        normalize=not args.no_normalize,
        batch_size=args.batch_size,
    )
    try:
        summary = export(job)
    except (SchemaParseError, ModelLoadError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
