"""Run one ablation suite on the standard synthetic binary set and write its CSV.

    python scripts/run_ablation.py components --teacher-epochs 20 --student-epochs 40 --out runs/abl
"""
import argparse
import time
from pathlib import Path

from hfdnet.ablation import METRICS, SUITES, ablate, write_ablation_csv
from hfdnet.synthdata import Dataset, GenConfig
from hfdnet.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("suite", choices=sorted(SUITES))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--teacher-epochs", type=int, default=30)
    ap.add_argument("--student-epochs", type=int, default=60)
    ap.add_argument("--out", type=Path, default=Path("runs/ablation"))
    args = ap.parse_args()

    gen = GenConfig(seed=42)
    train = Dataset.generate(gen, 200)
    test = Dataset.generate(gen, 50, start=200)
    cfg = TrainConfig(teacher_epochs=args.teacher_epochs, student_epochs=args.student_epochs)
    start = time.perf_counter()
    rows = ablate(args.suite, train, test, cfg, args.seeds, progress=lambda s: print(s, flush=True))
    args.out.mkdir(parents=True, exist_ok=True)
    path = write_ablation_csv(rows, args.suite, args.out / f"{args.suite}.csv")
    for r in rows:
        print(f"{r.variant:>14} " + "  ".join(f"{m} {r.mean(m):.4f}±{r.sd(m):.4f}" for m in METRICS))
    print(f"wrote {path} in {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
