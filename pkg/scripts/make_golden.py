"""Regenerate the metrics regression fixture in tests/data/golden.

Rig files are random but seeded; the expected values come from the loop-based
reference implementations, not from the vectorized metrics under test.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from medtalk import oracle
from medtalk.rigcore import ControllerSets, RigSequence, read_rig, write_rig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "data" / "golden"))
    ap.add_argument("--clips", type=int, default=3)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    out = Path(args.out)
    (out / "pred").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    sets = ControllerSets.default()
    rows = []
    for i in range(args.clips):
        T = int(rng.integers(4, 12))
        gt = rng.uniform(0, 1, (T, 174))
        pred = gt + rng.normal(0, 0.05, (T, 174))
        name = f"clip{i:02d}.rig.txt"
        write_rig(RigSequence(gt), out / "gt" / name)
        write_rig(RigSequence(pred), out / "pred" / name)
        # score what was written, so the fixture is exact for the stored text
        p, g = read_rig(out / "pred" / name), read_rig(out / "gt" / name)
        rows.append([name[:-8], oracle.mle(p, g, sets), oracle.mee(p, g, sets),
                     oracle.eie(p, g, sets), oracle.frd(p, g, sets)])
    with open(out / "golden.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["clip", "mle", "mee", "eie", "frd"])
        for r in rows:
            w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
    print(f"wrote {len(rows)} clips to {out}")


if __name__ == "__main__":
    main()
