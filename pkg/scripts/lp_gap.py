"""Integrality gap of the deterministic rebalancing model under expected demand.

    python scripts/lp_gap.py --sizes 4 9 --fleets 1 3 --instances 10
"""
import argparse
import json
import logging
from dataclasses import asdict
from pathlib import Path

from drrp.bench import lp_gap_study, summarize_gaps, write_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[4, 9])
    ap.add_argument("--fleets", type=int, nargs="+", default=[1])
    ap.add_argument("--instances", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--time-limit", type=float, default=600.0)
    ap.add_argument("--backend", choices=["native", "highs"], default="native")
    ap.add_argument("--out-dir", default="results/lp_gap")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    rows = lp_gap_study(tuple(args.sizes), tuple(args.fleets), args.instances, args.seed, args.time_limit,
                        backend=args.backend)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "gap_rows.csv", [asdict(r) for r in rows])
    summary = summarize_gaps(rows)
    write_rows(out / "gap_summary.csv", summary)
    for s in summary:
        print(json.dumps(s))


if __name__ == "__main__":
    main()
