"""Deterministic vs random vs NN-seeded GA on the default device, over several root seeds.

    python3 scripts/run_compare.py --seeds 10 --budget 5000
"""

import argparse
import json

from tripchar.config import load_config
from tripchar.pipeline import compare


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--budget", type=int, default=5000)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--json", help="also write the full payload here")
    args = ap.parse_args()

    cfg = load_config()
    out = compare(cfg, args.budget, args.seeds, args.jobs)
    print(out.summary)
    print()
    print(f"{'seed':>4}  {'March':>6} {'Random':>6} {'NNGA':>6}  {'NNGA tpv - worst':>16}")
    for run in out.payload["runs"]:
        w = [r["wcr"] for r in run["rows"]]
        gap = run["rows"][2]["tpv"] - run["analytic_worst_case"]
        print(f"{run['root_seed']:>4}  {w[0]:6.3f} {w[1]:6.3f} {w[2]:6.3f}  {gap:16.3f}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(out.payload, f, indent=1)


if __name__ == "__main__":
    main()
