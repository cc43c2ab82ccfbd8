"""Heuristic against branch-and-bound for I in {2, 4, 6}; writes gaps.csv."""

import argparse
from pathlib import Path

from geodc.cli import workers
from geodc.experiments import gaps_table, rows_to_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dcs", type=int, nargs="+", default=[2, 4, 6])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    rows = gaps_table(tuple(args.dcs), range(args.seeds), workers=workers())
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "gaps.csv").write_text(rows_to_csv(rows))
    for I in args.dcs:
        sub = [r for r in rows if r["I"] == I]
        print(
            f"I={I}: mean Phi bb {sum(r['phi_bb'] for r in sub) / len(sub):.2f}, "
            f"max Phi gap {max(r['phi_gap_pct'] for r in sub):.4f}%, "
            f"max cost gap {max(abs(r['cost_gap_pct']) for r in sub):.4f}%, "
            f"mean nodes {sum(r['bb_nodes'] for r in sub) / len(sub):.1f}"
        )


if __name__ == "__main__":
    main()
