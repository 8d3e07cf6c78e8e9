"""Synthetic correlated stereo pairs, on-disk pair datasets, and preprocessing.

Disk layout for real datasets:
    <root>/left/<id>.png
    <root>/right/<id>.png
    <root>/splits/{train,val,test}.txt   (newline-delimited id lists)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .config import SynthConfig


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one generated pair; a pure function of these fields."""

    height: int = 32
    width: int = 64
    num_shapes: int = 6
    disparity_px: int = 4
    occlusion_fraction: float = 0.1
    noise_std: float = 0.01
    seed: int = 0
    occlusion_patch: int = 8

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"height/width must be >= 1, got {self.height}x{self.width}")
        if not 0 <= self.disparity_px < self.width:
            raise ValueError(
                f"disparity_px must be in [0, width), got {self.disparity_px} with width {self.width}"
            )
        if not 0.0 <= self.occlusion_fraction < 1.0:
            raise ValueError(
                f"occlusion_fraction must be in [0, 1), got {self.occlusion_fraction}"
            )
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.num_shapes < 0:
            raise ValueError(f"num_shapes must be >= 0, got {self.num_shapes}")
        if self.occlusion_patch < 1:
            raise ValueError(f"occlusion_patch must be >= 1, got {self.occlusion_patch}")


@dataclass
class ImagePair:
    """A correlated (x, y) pair of same-shape RGB tensors with values in [0, 1]."""

    x: torch.Tensor
    y: torch.Tensor
    pair_id: str

    def validate(self) -> None:
        if self.x.shape != self.y.shape:
            raise ValueError(f"pair {self.pair_id}: shape mismatch {self.x.shape} vs {self.y.shape}")
        for name, t in (("x", self.x), ("y", self.y)):
            if t.min() < 0 or t.max() > 1:
                raise ValueError(f"pair {self.pair_id}: {name} outside [0, 1]")


def _render_canvas(rng: np.random.Generator, h: int, w: int, num_shapes: int) -> np.ndarray:
    """Random rectangles and ellipses over a flat background, channels-first."""
    img = np.empty((3, h, w), dtype=np.float64)
    img[:] = rng.uniform(0.2, 0.8, size=3)[:, None, None]
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(num_shapes):
        color = rng.uniform(0.0, 1.0, size=3)
        kind = rng.integers(0, 2)
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        ry = rng.uniform(0.08 * h, 0.35 * h)
        rx = rng.uniform(0.08 * w, 0.35 * w)
        if kind == 0:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img[:, mask] = color[:, None]
    return img


def _shift_right(img: np.ndarray, disparity: int) -> np.ndarray:
    """Horizontal shift by `disparity` columns; exposed edge filled by replication."""
    if disparity == 0:
        return img.copy()
    out = np.empty_like(img)
    out[:, :, disparity:] = img[:, :, :-disparity]
    out[:, :, :disparity] = img[:, :, :1]
    return out


def generate_synthetic_pair(spec: SyntheticSpec) -> ImagePair:
    """Emulate an overlapping-view pair: y is a shifted x with occlusions and noise."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    x = _render_canvas(rng, spec.height, spec.width, spec.num_shapes)
    y = _shift_right(x, spec.disparity_px)

    if spec.occlusion_fraction > 0:
        p = spec.occlusion_patch
        rows = math.ceil(spec.height / p)
        cols = math.ceil(spec.width / p)
        n_occ = round(spec.occlusion_fraction * rows * cols)
        replacement = _render_canvas(rng, spec.height, spec.width, spec.num_shapes)
        if n_occ > 0:
            cells = rng.choice(rows * cols, size=n_occ, replace=False)
            for cell in cells:
                r, c = divmod(int(cell), cols)
                sl = np.s_[:, r * p : (r + 1) * p, c * p : (c + 1) * p]
                y[sl] = replacement[sl]

    if spec.noise_std > 0:
        y = y + rng.normal(0.0, spec.noise_std, size=y.shape)
        y = np.clip(y, 0.0, 1.0)

    return ImagePair(
        x=torch.from_numpy(x.astype(np.float32)),
        y=torch.from_numpy(y.astype(np.float32)),
        pair_id=f"synth-{spec.seed:08d}",
    )


def preprocess(
    img: torch.Tensor,
    crop: Optional[tuple[int, int]],
    target: tuple[int, int],
) -> torch.Tensor:
    """Center-crop then area-average downsample to `target`; preserves [0, 1]."""
    if img.dim() != 3:
        raise ValueError(f"expected a CxHxW tensor, got shape {tuple(img.shape)}")
    _, h, w = img.shape
    ch, cw = crop if crop is not None else (h, w)
    th, tw = target
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    if th > ch or tw > cw:
        raise ValueError(f"target {th}x{tw} larger than crop {ch}x{cw}")
    top = (h - ch) // 2
    left = (w - cw) // 2
    out = img[:, top : top + ch, left : left + cw]
    if (ch, cw) != (th, tw):
        out = F.adaptive_avg_pool2d(out.unsqueeze(0), (th, tw)).squeeze(0)
    return out


def load_image_png(path: Path) -> torch.Tensor:
    """Read an RGB raster file into a float tensor in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise FileNotFoundError(f"missing image: {path}") from None
    except Exception as e:
        raise OSError(f"unreadable image: {path}") from e
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_image_png(path: Path, img: torch.Tensor) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = (img.clamp(0, 1) * 255.0).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).numpy()).save(path)


@dataclass
class DatasetSplit:
    """Train/val/test id lists; splits must be disjoint."""

    train: list[str]
    val: list[str]
    test: list[str]
    swap_augment: bool = False

    def validate(self) -> None:
        seen: dict[str, str] = {}
        for name in ("train", "val", "test"):
            for pid in getattr(self, name):
                if pid in seen:
                    raise ValueError(f"pair id '{pid}' in both {seen[pid]} and {name} splits")
                seen[pid] = name


def load_split(root: Path, swap_augment: bool = False) -> DatasetSplit:
    root = Path(root)

    def read(name: str) -> list[str]:
        p = root / "splits" / f"{name}.txt"
        if not p.exists():
            return []
        return [line.strip() for line in p.read_text().splitlines() if line.strip()]

    split = DatasetSplit(read("train"), read("val"), read("test"), swap_augment)
    split.validate()
    return split


def discover_ids(root: Path) -> list[str]:
    """Sorted stems present in both left/ and right/; errors list any orphans."""
    root = Path(root)
    left = {p.stem for p in (root / "left").glob("*.png")} if (root / "left").is_dir() else set()
    right = {p.stem for p in (root / "right").glob("*.png")} if (root / "right").is_dir() else set()
    orphans = sorted(left.symmetric_difference(right))
    if orphans:
        raise ValueError(f"unpaired ids (missing left or right file): {', '.join(orphans)}")
    return sorted(left)


class PairDataset:
    """Lazy pair loader yielding preprocessed ImagePairs, optionally swap-augmented."""

    def __init__(
        self,
        root: Path,
        ids: Sequence[str],
        swap_augment: bool = False,
        crop: Optional[tuple[int, int]] = None,
        target: Optional[tuple[int, int]] = None,
    ):
        self.root = Path(root)
        self.ids = list(ids)
        self.swap_augment = swap_augment
        self.crop = crop
        self.target = target

    def __len__(self) -> int:
        return len(self.ids) * (2 if self.swap_augment else 1)

    def _load(self, pid: str) -> tuple[torch.Tensor, torch.Tensor]:
        left = load_image_png(self.root / "left" / f"{pid}.png")
        right = load_image_png(self.root / "right" / f"{pid}.png")
        if self.target is not None:
            left = preprocess(left, self.crop, self.target)
            right = preprocess(right, self.crop, self.target)
        return left, right

    def __getitem__(self, idx: int) -> ImagePair:
        n = len(self.ids)
        if not 0 <= idx < len(self):
            raise IndexError(idx)
        swapped = idx >= n
        pid = self.ids[idx % n]
        left, right = self._load(pid)
        if swapped:
            return ImagePair(x=right, y=left, pair_id=f"{pid}~swap")
        return ImagePair(x=left, y=right, pair_id=pid)

    def __iter__(self) -> Iterator[ImagePair]:
        for i in range(len(self)):
            yield self[i]


def load_pair_dataset(
    root: Path,
    split: str | DatasetSplit = "train",
    swap_augment: bool = False,
    crop: Optional[tuple[int, int]] = None,
    target: Optional[tuple[int, int]] = None,
) -> PairDataset:
    """Open one split of a left/right directory dataset.

    Passing a split name reads `<root>/splits/<name>.txt`; when that file is
    absent the ids are discovered from the directory contents.
    """
    root = Path(root)
    if isinstance(split, DatasetSplit):
        ids = split.train
        swap_augment = swap_augment or split.swap_augment
    else:
        ids = getattr(load_split(root), split)
        if not ids and not (root / "splits" / f"{split}.txt").exists():
            ids = discover_ids(root)
    for pid in ids:
        for side in ("left", "right"):
            p = root / side / f"{pid}.png"
            if not p.exists():
                raise FileNotFoundError(f"missing image: {p}")
    return PairDataset(root, ids, swap_augment=swap_augment, crop=crop, target=target)


def write_synthetic_dataset(out_dir: Path, cfg: SynthConfig) -> DatasetSplit:
    """Render `cfg.count` pairs to PNG files plus split lists; reruns are byte-identical."""
    out_dir = Path(out_dir)
    ids = []
    for i in range(cfg.count):
        spec = SyntheticSpec(
            height=cfg.height,
            width=cfg.width,
            num_shapes=cfg.num_shapes,
            disparity_px=cfg.disparity_px,
            occlusion_fraction=cfg.occlusion_fraction,
            noise_std=cfg.noise_std,
            seed=cfg.seed + i,
        )
        pair = generate_synthetic_pair(spec)
        save_image_png(out_dir / "left" / f"{pair.pair_id}.png", pair.x)
        save_image_png(out_dir / "right" / f"{pair.pair_id}.png", pair.y)
        ids.append(pair.pair_id)

    f_train, f_val, _ = cfg.split_fractions
    n_train = round(cfg.count * f_train)
    n_val = round(cfg.count * f_val)
    split = DatasetSplit(
        train=ids[:n_train],
        val=ids[n_train : n_train + n_val],
        test=ids[n_train + n_val :],
    )
    split_dir = out_dir / "splits"
    split_dir.mkdir(parents=True, exist_ok=True)
    for name in ("train", "val", "test"):
        text = "".join(f"{pid}\n" for pid in getattr(split, name))
        (split_dir / f"{name}.txt").write_text(text)
    return split


def synthetic_pairs(cfg: SynthConfig, count: Optional[int] = None, seed0: int = 0) -> list[ImagePair]:
    """In-memory batch of generated pairs (no disk round-trip)."""
    n = cfg.count if count is None else count
    pairs = []
    for i in range(n):
        spec = SyntheticSpec(
            height=cfg.height,
            width=cfg.width,
            num_shapes=cfg.num_shapes,
            disparity_px=cfg.disparity_px,
            occlusion_fraction=cfg.occlusion_fraction,
            noise_std=cfg.noise_std,
            seed=cfg.seed + seed0 + i,
        )
        pairs.append(generate_synthetic_pair(spec))
    return pairs
