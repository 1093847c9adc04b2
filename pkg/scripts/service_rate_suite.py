"""Run a suite config and print the paired improvement table.

    python scripts/service_rate_suite.py configs/grid9.toml
"""
import argparse
import logging

from drrp.bench import improvement_table, run_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    res = run_suite(args.config)
    print(f"{'nodes':>5} {'fleet':>5} {'method':>6} {'gain pp':>8} {'sd':>6} {'positive':>8}")
    for r in improvement_table(res["rows"], "rate_mean", scale=100.0):
        print(f"{r['nodes']:>5} {r['fleet']:>5} {r['method']:>6} {r['delta_mean']:>8.2f} {r['delta_sd']:>6.2f} "
              f"{r['positive']:>4}/{r['instances']}")
    for f in res["failures"]:
        print("FAILED", f)
    print("tables in", res["out_dir"])


if __name__ == "__main__":
    main()
