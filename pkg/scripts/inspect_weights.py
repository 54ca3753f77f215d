"""Trace the class weights m over training for one full-mode run.

Prints m at every interval with shared classes marked, plus the
shared / source-only ratio, and optionally writes the trace as CSV.
"""
import argparse
from pathlib import Path

from partialda.data import generate_synthetic_pda
from partialda.schedules import write_weight_trace
from partialda.trainer import TrainConfig, train, weight_alignment


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--shared", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("edann", "baa", "full"), default="full")
    p.add_argument("--csv", type=Path, default=None)
    args = p.parse_args()

    ds = generate_synthetic_pda(shared=args.shared, seed=0)
    res = train(ds, TrainConfig(mode=args.mode, seed=args.seed))
    head = " ".join(f"{c:>5}{'*' if c in ds.shared_classes else ' '}" for c in range(ds.n_classes))
    print(f"{'iter':>5}  {head}   ratio")
    for cw in res.weights:
        ratio = weight_alignment(cw.weights, ds.shared_classes)["ratio"]
        print(f"{cw.updated_at:>5}  " + " ".join(f"{w:6.3f}" for w in cw.weights) + f"   {ratio:6.2f}")
    print("* shared class")
    if args.csv:
        write_weight_trace(args.csv, res.weights)


if __name__ == "__main__":
    main()
