"""Procedural paired EO/SAR scenes and their on-disk formats.

Randomness: sample ``index`` of a dataset with seed ``seed`` draws from
``numpy.random.Generator(PCG64(SeedSequence([seed, index])))``; nothing
else is random, so a (config, index) pair fixes the sample bit-exactly.

Files are binary 8-bit PGM (``P5``, maxval 255). A manifest is a text file
with one ``eo sar mask`` line of relative paths per sample.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .layers import interp_matrix


class PGMError(ValueError):
    pass


@dataclass
class GenConfig:
    seed: int = 42
    image_size: int = 64
    num_classes: int = 2
    shapes_per_image: tuple[int, int] = (2, 5)
    speckle_looks: int = 4
    layover_shift: int = 2
    texture_amplitude: float = 0.12
    eo_noise: float = 0.02

    def __post_init__(self):
        if self.num_classes not in (2, 5):
            raise ValueError(f"num_classes must be 2 (building mode) or 5 (land-cover mode), got {self.num_classes}")
        lo, hi = self.shapes_per_image
        if not 1 <= lo <= hi:
            raise ValueError(f"shapes_per_image must satisfy 1 <= lo <= hi, got {self.shapes_per_image}")
        if self.speckle_looks < 1:
            raise ValueError(f"speckle_looks must be a positive integer, got {self.speckle_looks}")


@dataclass
class SceneSample:
    eo: np.ndarray  # 1 x H x W in [0, 1]
    sar: np.ndarray  # 1 x H x W in [0, 1]
    mask: np.ndarray  # H x W class indices


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def gamma_speckle(rng: np.random.Generator, shape, looks: int) -> np.ndarray:
    """Unit-mean multiplicative speckle, Gamma(shape=L, scale=1/L)."""
    return rng.gamma(looks, 1.0 / looks, size=shape)


def _smooth_field(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    grid = rng.uniform(-1.0, 1.0, (cells, cells))
    A = interp_matrix(cells, size)
    return A @ grid @ A.T


def _polygon_mask(size: int, verts: np.ndarray) -> np.ndarray:
    """Rasterize a convex polygon (counter-clockwise vertices, (row, col))."""
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    inside = np.ones((size, size), dtype=bool)
    n = len(verts)
    for k in range(n):
        r0, c0 = verts[k]
        r1, c1 = verts[(k + 1) % n]
        cross = (r1 - r0) * (cc - c0) - (c1 - c0) * (rr - r0)
        inside &= cross <= 0
    return inside


def _shape_vertices(rng: np.random.Generator, size: int) -> np.ndarray:
    lo, hi = max(2.0, size / 16), size / 6
    cr, cc = rng.uniform(hi, size - hi, 2)
    kind = rng.integers(3)
    if kind == 2:
        # irregular convex polygon
        n = int(rng.integers(5, 8))
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        rad = rng.uniform(lo, hi, n)
        verts = np.stack([cr + rad * np.sin(ang), cc + rad * np.cos(ang)], axis=1)
    else:
        hr, hc = rng.uniform(lo, hi, 2)
        theta = 0.0 if kind == 0 else rng.uniform(0, np.pi)
        corners = np.array([[-hr, -hc], [-hr, hc], [hr, hc], [hr, -hc]])
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        verts = corners @ rot.T + [cr, cc]
    # sort counter-clockwise around the centroid in (col, row) orientation
    cen = verts.mean(axis=0)
    order = np.argsort(np.arctan2(verts[:, 0] - cen[0], verts[:, 1] - cen[1]))
    return verts[order]


def _class_level(cls: int, num_classes: int) -> float:
    if num_classes == 2:
        return 0.72
    # fill-level bands, one per land-cover class
    return 0.3 + 0.14 * cls


def _edges(mask: np.ndarray) -> np.ndarray:
    """Sensor-facing (top and left) boundary pixels of the foreground."""
    m = mask > 0
    above = np.zeros_like(m)
    above[1:] = m[:-1]
    left = np.zeros_like(m)
    left[:, 1:] = m[:, :-1]
    return m & ~(above & left)


def _shift(img: np.ndarray, dr: int, dc: int) -> np.ndarray:
    out = np.zeros_like(img)
    H, W = img.shape
    rs, rd = (slice(dr, H), slice(0, H - dr)) if dr >= 0 else (slice(0, H + dr), slice(-dr, H))
    cs, cd = (slice(dc, W), slice(0, W - dc)) if dc >= 0 else (slice(0, W + dc), slice(-dc, W))
    out[rd, cd] = img[rs, cs]
    return out


def generate_scene(cfg: GenConfig, index: int) -> SceneSample:
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index}")
    size = cfg.image_size
    lo, hi = cfg.shapes_per_image
    if size < 16 or hi > (size // 8) ** 2:
        raise ValueError(f"image size {size} too small for up to {hi} shapes (need size >= 16 and hi <= (size//8)^2)")
    rng = sample_rng(cfg.seed, index)
    K = cfg.num_classes

    mask = np.zeros((size, size), dtype=np.int64)
    level = 0.28 + 0.06 * _smooth_field(rng, size, 4)
    n_shapes = int(rng.integers(lo, hi + 1))
    for _ in range(n_shapes):
        inside = _polygon_mask(size, _shape_vertices(rng, size))
        cls = 1 if K == 2 else int(rng.integers(1, K))
        mask[inside] = cls
        level[inside] = _class_level(cls, K) + rng.uniform(-0.04, 0.04)

    texture = _smooth_field(rng, size, size // 4) + 0.5 * rng.uniform(-1, 1, (size, size))
    eo = level + cfg.texture_amplitude * texture + rng.normal(0.0, cfg.eo_noise, (size, size))

    # SAR: same geometry, flatter texture, multiplicative speckle, displaced bright edges
    sar_level = 0.25 + 0.45 * (level - 0.2)
    sar = (sar_level + 0.3 * cfg.texture_amplitude * texture) * gamma_speckle(rng, (size, size), cfg.speckle_looks)
    s = cfg.layover_shift
    streak = _shift(_edges(mask).astype(np.float64), s, s)
    sar = np.maximum(sar, streak * rng.uniform(0.8, 1.0, (size, size)))

    return SceneSample(
        eo=np.clip(eo, 0.0, 1.0)[None],
        sar=np.clip(sar, 0.0, 1.0)[None],
        mask=mask,
    )


def quantize(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 levels by round(v * 255), half up."""
    img = np.asarray(img, dtype=np.float64)
    if img.size and (img.min() < 0 or img.max() > 1):
        raise ValueError(f"image values must lie in [0, 1], got [{img.min()}, {img.max()}]")
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


# -- PGM --------------------------------------------------------------------
def write_pgm(img: np.ndarray, path: str | Path) -> Path:
    """Float images are quantized; integer arrays (masks) are written as-is."""
    path = Path(path)
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"write_pgm: expected a 2-D image, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        data = quantize(arr)
    else:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("write_pgm: integer values must lie in [0, 255]")
        data = arr.astype(np.uint8)
    H, W = data.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (W, H) + data.tobytes())
    return path


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def parse_pgm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P5":
        if buf[:2] in (b"P2", b"P1", b"P3", b"P4", b"P6"):
            raise PGMError(f"unsupported PNM format {buf[:2].decode()} at byte 0 (only binary P5 is supported)")
        raise PGMError("malformed PGM header at byte 0: missing P5 magic")
    pos = 2
    vals = []
    for name in ("width", "height", "maxval"):
        m = _TOKEN.match(buf, pos)
        if m is None or not m.group(1).isdigit():
            raise PGMError(f"malformed PGM header at byte {pos}: expected {name}")
        vals.append(int(m.group(1)))
        pos = m.end()
    W, H, maxval = vals
    if maxval != 255:
        raise PGMError(f"unsupported maxval {maxval} at byte {m.start(1)} (only 255)")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PGMError(f"malformed PGM header at byte {pos}: expected whitespace before pixel data")
    pos += 1
    need = W * H
    if len(buf) - pos < need:
        raise PGMError(f"truncated PGM payload at byte {len(buf)}: expected {need} bytes from byte {pos}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(H, W).copy()


def read_pgm(path: str | Path) -> np.ndarray:
    """Raw uint8 levels, H x W."""
    return parse_pgm(Path(path).read_bytes())


# -- datasets ---------------------------------------------------------------
@dataclass
class Dataset:
    """Stacked samples: eo/sar are N x 1 x H x W float32 levels/255, mask N x H x W."""

    eo: np.ndarray
    sar: np.ndarray
    mask: np.ndarray
    num_classes: int
    names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.mask.shape[0]

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.eo[idx], self.sar[idx], self.mask[idx], self.num_classes,
                       [self.names[i] for i in idx] if self.names else [])

    @classmethod
    def from_samples(cls, samples: Iterable[SceneSample], num_classes: int) -> "Dataset":
        samples = list(samples)
        # quantize so in-memory data matches what a PGM round trip yields
        eo = np.stack([quantize(s.eo) for s in samples]).astype(np.float32) / np.float32(255)
        sar = np.stack([quantize(s.sar) for s in samples]).astype(np.float32) / np.float32(255)
        mask = np.stack([s.mask for s in samples]).astype(np.int64)
        return cls(eo, sar, mask, num_classes, [f"{i:04d}" for i in range(len(samples))])

    @classmethod
    def generate(cls, cfg: GenConfig, count: int, start: int = 0) -> "Dataset":
        return cls.from_samples((generate_scene(cfg, start + i) for i in range(count)), cfg.num_classes)


def write_manifest(samples: Sequence[SceneSample], directory: str | Path, name: str = "manifest.txt") -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        if not (s.eo.shape[-2:] == s.sar.shape[-2:] == s.mask.shape):
            raise ValueError(f"sample {i}: eo {s.eo.shape}, sar {s.sar.shape} and mask {s.mask.shape} disagree")
        files = (f"eo_{i:04d}.pgm", f"sar_{i:04d}.pgm", f"mask_{i:04d}.pgm")
        write_pgm(s.eo, d / files[0])
        write_pgm(s.sar, d / files[1])
        write_pgm(s.mask.astype(np.uint8), d / files[2])
        lines.append(" ".join(files))
    path = d / name
    path.write_text("".join(line + "\n" for line in lines))
    return path


def read_manifest(path: str | Path) -> list[tuple[Path, Path, Path]]:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 paths, got {len(parts)}")
        files = tuple(path.parent / p for p in parts)
        for f in files:
            if not f.is_file():
                raise FileNotFoundError(f"{path}:{lineno}: missing file {f}")
        entries.append(files)
    return entries


def load_manifest(path: str | Path, num_classes: int) -> Dataset:
    path = Path(path)
    eos, sars, masks, names = [], [], [], []
    for lineno, (e, s, m) in enumerate(read_manifest(path), start=1):
        eo, sar, mask = read_pgm(e), read_pgm(s), read_pgm(m)
        if not (eo.shape == sar.shape == mask.shape):
            raise ValueError(f"{path}:{lineno}: sample {e.name} has mismatched sizes "
                             f"eo {eo.shape}, sar {sar.shape}, mask {mask.shape}")
        if eos and eo.shape != eos[0].shape:
            raise ValueError(f"{path}:{lineno}: sample {e.name} size {eo.shape} differs from {eos[0].shape}")
        if mask.max(initial=0) >= num_classes:
            raise ValueError(f"{path}:{lineno}: mask {m.name} has class {int(mask.max())} >= {num_classes}")
        eos.append(eo)
        sars.append(sar)
        masks.append(mask)
        names.append(e.stem.split("_", 1)[-1])
    if not eos:
        raise ValueError(f"{path}: manifest is empty")
    eo = np.stack(eos)[:, None].astype(np.float32) / np.float32(255)
    sar = np.stack(sars)[:, None].astype(np.float32) / np.float32(255)
    return Dataset(eo, sar, np.stack(masks).astype(np.int64), num_classes, names)
