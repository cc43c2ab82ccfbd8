"""Day-long simulation of one generated chain, with and without storage."""

import argparse
from pathlib import Path

from geodc.scenario import ParameterRanges, generate, simulate, simulation_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dcs", type=int, default=4)
    p.add_argument("--slots", type=int, default=24)
    p.add_argument("--load-fraction", type=float, default=0.6)
    p.add_argument("--forecast-error", type=float, default=0.0)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    chain = generate(args.seed, args.dcs, slots=args.slots, ranges=ParameterRanges(load_fraction=args.load_fraction))
    idle = simulate(chain, passes=1)
    joint = simulate(chain, passes=2, forecast_error=args.forecast_error, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "simulation.csv").write_text(simulation_csv(chain, joint))
    for label, res in (("storage idle", idle), ("with storage", joint)):
        cost = sum(a.total_cost for r in res for a in r.allocations)
        print(f"{label}: purchase cost {cost:.2f}, charge left {sum(res[-1].soc_after):.1f} kWh")
    for r in joint:
        print(f"slot {r.slot:>2}: delta " + " ".join(f"{d.battery_delta_kwh:8.2f}" for d in r.decisions))


if __name__ == "__main__":
    main()
