"""Two-stage training: EO teacher first, then a SAR student against the frozen teacher."""
from __future__ import annotations

import copy
import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .hfdm import distillation_loss
from .losses import LossConfig, seg_loss_terms
from .metrics import ConfusionMatrix, accumulate, summary
from .model import DEFAULT_BLOCKS, SegNet
from .synthdata import Dataset
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "step", "lr", "l_c", "l_f", "l_d", "total"]
PRECISIONS = {"float32": np.float32, "float64": np.float64}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr0: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    poly_power: float = 0.9
    teacher_epochs: int = 30
    student_epochs: int = 60
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    precision: str = "float32"
    num_classes: int = 2
    hfam: bool = True
    hfdm: bool = True
    blocks: str = DEFAULT_BLOCKS
    include_background: bool = True

    def __post_init__(self):
        for name in ("batch_size", "lr0", "adam_eps", "poly_power", "teacher_epochs", "student_epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch statistics)")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must be in (0, 1), got {getattr(self, name)}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


# -- config files -------------------------------------------------------------
_LOSS_KEYS = {"alpha": "alpha", "gamma": "gamma", "lambda": "lam", "temperature": "temperature",
              "focal_variant": "focal_variant"}


def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment."""
    valid = {f.name for f in fields(TrainConfig) if f.name != "loss"} | set(_LOSS_KEYS)
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in valid:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def apply_overrides(cfg: TrainConfig, values: dict) -> TrainConfig:
    """Return ``cfg`` with raw or typed values applied (loss keys included)."""
    loss_kw, top_kw = {}, {}
    for key, value in values.items():
        if key in _LOSS_KEYS:
            attr = _LOSS_KEYS[key]
            like = getattr(cfg.loss, attr)
            loss_kw[attr] = _coerce(value, like) if isinstance(value, str) else value
        else:
            like = getattr(cfg, key)
            top_kw[key] = _coerce(value, like) if isinstance(value, str) else value
    loss = replace(cfg.loss, **loss_kw) if loss_kw else cfg.loss
    return replace(cfg, loss=loss, **top_kw)


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    path = Path(path)
    return apply_overrides(base or TrainConfig(), parse_config_text(path.read_text(), str(path)))


# -- optimization -------------------------------------------------------------
def poly_lr(it: int, max_iter: int, lr0: float, power: float) -> float:
    if it < 0 or it > max_iter:
        raise ValueError(f"poly_lr: iteration {it} outside [0, {max_iter}]")
    return lr0 * (1.0 - it / max_iter) ** power


class Adam:
    """Bias-corrected Adam over named parameters."""

    def __init__(self, params: list[tuple[str, Tensor]], beta1: float = 0.5, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.t = 0

    def step(self, lr: float) -> None:
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient for parameter {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def adam_step(params: list[tuple[str, Tensor]], state: Adam, lr: float) -> None:
    state.step(lr)


# -- training loop --------------------------------------------------------------
@dataclass
class TrainResult:
    model: SegNet
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_miou: float = -math.inf
    diagnostics: dict = field(default_factory=dict)


def init_model(cfg: TrainConfig) -> SegNet:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0])))
    return SegNet(cfg.num_classes, use_hfam=cfg.hfam, blocks=cfg.blocks, rng=rng, dtype=cfg.dtype)


def _shuffle_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))


def _write_log(path: Path | None, rows: list[dict], header: list[str]) -> None:
    if path is None:
        return
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def teacher_features(teacher: SegNet, images: np.ndarray, blocks, batch_size: int = 8) -> dict[str, np.ndarray]:
    """Frozen-teacher decoder features for every sample (eval mode, no gradients)."""
    teacher.eval()
    dtype = next(iter(teacher.state_dict().values())).dtype
    chunks: dict[str, list[np.ndarray]] = {b: [] for b in blocks}
    with no_grad():
        for s in range(0, len(images), batch_size):
            out = teacher(Tensor._wrap(images[s : s + batch_size].astype(dtype, copy=False)))
            for b in blocks:
                chunks[b].append(out.features[b].data)
    return {b: np.concatenate(v) for b, v in chunks.items()}


def _fit(model: SegNet, images: np.ndarray, masks: np.ndarray, cfg: TrainConfig, epochs: int,
         targets: dict[str, np.ndarray] | None = None,
         log_path: Path | None = None, metrics_path: Path | None = None,
         progress: Callable[[dict], None] | None = None) -> TrainResult:
    N = len(masks)
    B = cfg.batch_size
    steps = N // B
    if steps < 1:
        raise TrainingError(f"dataset of {N} samples is smaller than one batch of {B}")
    max_iter = epochs * steps
    dtype = cfg.dtype
    distill = targets is not None and cfg.hfdm
    lam = cfg.loss.lam if distill else 0.0
    T = cfg.loss.temperature

    model.train()
    params = list(model.named_parameters())
    opt = Adam(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    shuffle = _shuffle_rng(cfg.seed)
    result = TrainResult(model)
    best_state = None
    metric_rows = []
    it = 0
    for epoch in range(epochs):
        perm = shuffle.permutation(N)
        sums = {"l_c": 0.0, "l_f": 0.0, "l_d": 0.0, "total": 0.0}
        cm = ConfusionMatrix.empty(cfg.num_classes)
        lr = cfg.lr0
        for step in range(steps):
            idx = np.sort(perm[step * B : (step + 1) * B])
            x = Tensor._wrap(images[idx].astype(dtype, copy=False))
            y = masks[idx]
            lr = poly_lr(it, max_iter, cfg.lr0, cfg.poly_power)
            out = model(x)
            l_c, l_f = seg_loss_terms(out.logits, y, cfg.loss)
            loss = l_c + l_f
            l_d_val = 0.0
            if distill:
                l_d = None
                for blk in model.distilled_blocks:
                    q_t = Tensor._wrap(targets[blk][idx])
                    term = distillation_loss(q_t, out.features[blk], T, result.diagnostics)
                    l_d = term if l_d is None else l_d + term
                l_d_val = l_d.item()
                if lam != 0:
                    loss = loss + l_d * lam
            total = loss.item()
            if not math.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            it += 1

            sums["l_c"] += l_c.item()
            sums["l_f"] += l_f.item()
            sums["l_d"] += l_d_val
            sums["total"] += total
            cm = accumulate(cm, out.logits.data.argmax(axis=1), y)

        row = {"epoch": epoch, "step": it, "lr": lr, **{k: v / steps for k, v in sums.items()}}
        result.history.append(row)
        m = summary(cm, cfg.include_background)
        metric_rows.append({"epoch": epoch, **m})
        row_m = {**row, **m}
        if progress:
            progress(row_m)
        log.info("epoch %d  l_c %.4f  l_f %.4f  l_d %.4f  miou %.4f", epoch, row["l_c"], row["l_f"],
                 row["l_d"], m["miou"])
        if m["miou"] > result.best_miou:
            result.best_miou = m["miou"]
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
    _write_log(log_path, result.history, LOG_HEADER)
    _write_log(metrics_path, metric_rows, ["epoch", "acc", "miou", "f1"])
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result


def train_teacher(data: Dataset, cfg: TrainConfig, log_path: Path | None = None,
                  metrics_path: Path | None = None, progress=None) -> TrainResult:
    """Minimize the segmentation loss on EO inputs; keeps the best-mIoU weights."""
    model = init_model(cfg)
    return _fit(model, data.eo, data.mask, cfg, cfg.teacher_epochs, log_path=log_path,
                metrics_path=metrics_path, progress=progress)


def check_compatible(teacher: SegNet, student: SegNet) -> None:
    ts, ss = teacher.backbone.state_dict(), student.backbone.state_dict()
    if list(ts) != list(ss) or any(ts[k].shape != ss[k].shape for k in ts):
        raise TrainingError("teacher and student backbones are not shape-compatible")
    for blk in student.distilled_blocks:
        if blk not in ("d1", "d2", "d3"):
            raise TrainingError(f"cannot distill unknown block {blk}")


def train_student(data: Dataset, teacher: SegNet | None, cfg: TrainConfig, log_path: Path | None = None,
                  metrics_path: Path | None = None, progress=None) -> TrainResult:
    """Train on SAR with the segmentation loss plus lambda * distillation loss.

    ``teacher=None`` (or ``cfg.hfdm=False``) gives the plain SAR baseline.
    The teacher runs once over the EO images in eval mode with gradients
    off; it is frozen, so its features are the same at every step.
    """
    model = init_model(cfg)
    targets = None
    if teacher is not None:
        check_compatible(teacher, model)
        if cfg.hfdm:
            targets = teacher_features(teacher, data.eo, model.distilled_blocks)
    return _fit(model, data.sar, data.mask, cfg, cfg.student_epochs, targets=targets,
                log_path=log_path, metrics_path=metrics_path, progress=progress)


# -- evaluation ----------------------------------------------------------------------
def predict(model: SegNet, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    model.eval()
    dtype = next(iter(model.state_dict().values())).dtype
    preds = []
    with no_grad():
        for s in range(0, len(images), batch_size):
            out = model(Tensor._wrap(images[s : s + batch_size].astype(dtype, copy=False)))
            preds.append(out.logits.data.argmax(axis=1))
    return np.concatenate(preds).astype(np.int64)


def evaluate(model: SegNet, data: Dataset, modality: str = "sar") -> ConfusionMatrix:
    images = data.sar if modality == "sar" else data.eo
    return accumulate(ConfusionMatrix.empty(data.num_classes), predict(model, images), data.mask)


def state_of(model: SegNet) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((k, v.copy()) for k, v in model.state_dict().items())
