"""Use ratios with and without the power factor; writes fairness.csv."""

import argparse
from pathlib import Path

from geodc.experiments import fairness_table, rows_to_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--load-fraction", type=float, default=0.6)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    rows = fairness_table(load_fraction=args.load_fraction)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "fairness.csv").write_text(rows_to_csv(rows))
    for r in rows:
        print(f"{r['factor']:>15} dc{r['dc']} M={r['server_count']:>5} ratio {r['use_ratio_relaxed']:.4f} ({r['use_ratio_integer']:.4f} integer)")


if __name__ == "__main__":
    main()
