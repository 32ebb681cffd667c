"""Paired comparison over user counts and seeds; one CSV row per run.

    python scripts/compare_sweep.py --users 8 12 16 20 --seeds 0 1 2 --out runs/sweep.csv
"""
from __future__ import annotations

import argparse
import csv
import time
from pathlib import Path

from comp_vr.config import ALGORITHMS, SimConfig
from comp_vr.experiment import compare


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--users", type=int, nargs="+", default=[8, 12, 16, 20])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--slots", type=int, default=1000)
    p.add_argument("--pretrain", type=int, default=2000)
    p.add_argument("--algorithms", nargs="+", default=list(ALGORITHMS))
    p.add_argument("--out", default="runs/sweep.csv")
    args = p.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_users", "seed", "algorithm", "objective", "fop", "ul_cancelled", "dl_cancelled", "failure"])
        for n in args.users:
            for seed in args.seeds:
                t0 = time.time()
                cfg = SimConfig(n_users=n, seed=seed, n_slots=args.slots, pretrain_realizations=args.pretrain)
                for alg, rep in compare(cfg, args.algorithms).items():
                    s = rep.summary()
                    w.writerow([n, seed, alg, s.get("objective"), s.get("fop"), s.get("ul_cancelled"),
                                s.get("dl_cancelled"), rep.failure or ""])
                fh.flush()
                print(f"N={n} seed={seed} done in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
