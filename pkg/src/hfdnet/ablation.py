"""Ablation harnesses: architecture components, block configurations, temperature.

Every variant trains one student per seed and reports held-out SAR metrics as
mean and sample standard deviation over seeds. Teachers share the student's
architecture (alignment head and block configuration); one teacher is trained
per (seed, architecture) and reused by every variant that needs it.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .metrics import summary
from .model import BLOCK_CONFIGS
from .synthdata import Dataset
from .trainer import TrainConfig, evaluate, train_student, train_teacher

METRICS = ("acc", "miou", "f1")
TEMPERATURES = (1.0, 5.0, 10.0, 50.0)
PAIRWISE_NOTE = ("three-block aggregation runs the alignment head pairwise left to right: "
                 "D1 into D2 then the result into D3; D1 is bilinearly resampled to the D2 grid")


@dataclass(frozen=True)
class Variant:
    name: str
    overrides: dict

    def config(self, base: TrainConfig) -> TrainConfig:
        loss_kw = {k: v for k, v in self.overrides.items() if k in ("temperature", "lam")}
        top_kw = {k: v for k, v in self.overrides.items() if k not in loss_kw}
        return replace(base, loss=replace(base.loss, **loss_kw), **top_kw)


SUITES: dict[str, tuple[Variant, ...]] = {
    "components": (
        Variant("backbone-only", {"hfam": False, "hfdm": False}),
        Variant("+HFDM", {"hfam": False, "hfdm": True}),
        Variant("+HFAM", {"hfam": True, "hfdm": False}),
        Variant("both", {"hfam": True, "hfdm": True}),
    ),
    "blocks": tuple(Variant(b, {"hfam": True, "hfdm": True, "blocks": b}) for b in BLOCK_CONFIGS),
    "temperature": tuple(Variant(f"T={T:g}", {"hfam": True, "hfdm": True, "temperature": T})
                         for T in TEMPERATURES),
}


@dataclass
class AblationRow:
    variant: str
    seeds: tuple[int, ...]
    per_seed: list[dict]
    seconds: float

    def mean(self, metric: str) -> float:
        return float(np.mean([r[metric] for r in self.per_seed]))

    def sd(self, metric: str) -> float:
        vals = [r[metric] for r in self.per_seed]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def check_suite(suite: str) -> tuple[Variant, ...]:
    if suite not in SUITES:
        raise ValueError(f"unknown ablation suite {suite!r}; valid suites: {', '.join(SUITES)}")
    return SUITES[suite]


def ablate(suite: str, train: Dataset, test: Dataset, cfg: TrainConfig, seeds=(0, 1, 2),
           progress: Callable[[str], None] | None = None) -> list[AblationRow]:
    variants = check_suite(suite)
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    teachers: dict[tuple, object] = {}
    rows = []
    for v in variants:
        per_seed = []
        start = time.perf_counter()
        for seed in seeds:
            vcfg = v.config(replace(cfg, seed=seed))
            teacher = None
            if vcfg.hfdm:
                key = (seed, vcfg.hfam, vcfg.blocks)
                if key not in teachers:
                    tcfg = replace(cfg, seed=seed, hfam=vcfg.hfam, blocks=vcfg.blocks)
                    teachers[key] = train_teacher(train, tcfg).model
                teacher = teachers[key]
            student = train_student(train, teacher, vcfg).model
            m = summary(evaluate(student, test), cfg.include_background)
            per_seed.append(m)
            if progress:
                progress(f"{suite} {v.name} seed={seed} " + " ".join(f"{k}={m[k]:.4f}" for k in METRICS))
        rows.append(AblationRow(v.name, seeds, per_seed, time.perf_counter() - start))
    return rows


def write_ablation_csv(rows: list[AblationRow], suite: str, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# suite={suite}; metrics on the held-out split, mean and sample sd over seeds\n")
        if suite == "blocks":
            fh.write(f"# {PAIRWISE_NOTE}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seeds"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "sd")])
        for r in rows:
            w.writerow([r.variant, " ".join(map(str, r.seeds))]
                       + [f"{x:.6f}" for m in METRICS for x in (r.mean(m), r.sd(m))])
    return path
