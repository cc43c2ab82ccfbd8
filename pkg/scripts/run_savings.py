"""Savings of each policy over the baseline across sizes, loads and price spreads."""

import argparse
from pathlib import Path

from geodc.experiments import BASELINE_NOTE, rows_to_csv, savings_table


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dcs", type=int, nargs="+", default=[2, 4, 6])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--load-fractions", type=float, nargs="+", default=[0.3, 0.6, 0.9])
    p.add_argument("--spreads", type=float, nargs="+", default=[1.0, 2.0])
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    rows = savings_table(tuple(args.dcs), range(args.seeds), tuple(args.load_fractions), tuple(args.spreads))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "savings.csv").write_text(rows_to_csv(rows, BASELINE_NOTE))
    for r in rows:
        print(
            f"I={r['I']} L={r['load_fraction']:.1f} spread={r['price_spread']:.1f} {r['policy']:>8}: "
            f"Phi {r['phi_saving_pct']:6.2f}%  money {r['money_saving_pct']:6.2f}%"
        )


if __name__ == "__main__":
    main()
