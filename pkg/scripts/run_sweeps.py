"""Sensitivity sweeps over xi, beta and the number of shared classes.

    python scripts/run_sweeps.py                 # all three axes
    python scripts/run_sweeps.py --axes xi       # one axis
"""
import argparse
import csv
from pathlib import Path

from partialda.data import generate_synthetic_pda
from partialda.trainer import TrainConfig, aggregate, sweep

AXES = {
    "xi": ([0.0, 0.5, 1.0], ("full",)),
    "beta": ([0.0, 1.0, 5.0], ("full",)),
    "shared-classes": ([3, 5, 8, 10], ("edann", "baa")),
}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--axes", nargs="+", choices=sorted(AXES), default=sorted(AXES))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--interval", type=int, default=200)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()

    base = TrainConfig(n_iters=args.iters, interval=args.interval)
    generator = {"n_classes": 10, "dim": 16, "n_per_class": 200, "shift": 2.0, "seed": 0}
    dataset = generate_synthetic_pda(shared=5, **{k: v for k, v in generator.items()})
    args.out.mkdir(parents=True, exist_ok=True)
    for axis in args.axes:
        values, modes = AXES[axis]
        rows = sweep(axis, values, base, args.seeds, dataset=dataset, generator=generator, modes=modes)
        path = args.out / f"sweep_{axis}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        print(f"-- {axis} ({path})")
        for r in aggregate(rows):
            print(f"  {r['value']:>5}  {r['mode']:>6}  {100 * r['mean']:6.2f} +- {100 * r['std']:.2f}")


if __name__ == "__main__":
    main()
