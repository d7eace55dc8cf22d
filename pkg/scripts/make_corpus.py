#!/usr/bin/env python3
"""Generate a synthetic table corpus as CSV files plus sidecar schemas.

Example:
    python scripts/make_corpus.py --out data/corpus --tables 50 --seed 1234
"""

import argparse
from pathlib import Path

from zerocard import synth


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output root (tables/ and schemas/ created inside)")
    parser.add_argument("--tables", type=int, default=50)
    parser.add_argument("--seed", type=int, default=1234)
    parser.add_argument("--min-rows", type=int, default=300)
    parser.add_argument("--max-rows", type=int, default=2500)
    args = parser.parse_args()

    spec = synth.CorpusSpec(n_tables=args.tables, min_rows=args.min_rows, max_rows=args.max_rows)
    tables = synth.generate_corpus(spec, seed=args.seed)
    root = Path(args.out)
    synth.write_corpus(tables, root / "tables", root / "schemas")
    total_rows = sum(t.n_rows for t in tables)
    print(f"wrote {len(tables)} tables ({total_rows} rows) under {root}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
