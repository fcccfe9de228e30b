"""Dataset loading, augmentation recipes, and the synthetic generator.

Layout on disk: ``<root>/images/<id>.png`` and ``<root>/edges/<id>.png``,
8-bit grayscale or RGB. Augmented datasets are lazy: the index of
(source, crop, orientation) triples is built up front, pixels are
transformed on access, so large recipes cost no memory.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .seeding import stream


@dataclass
class Sample:
    image: np.ndarray            # (H, W, 3) in [0, 1]
    label: np.ndarray            # (H, W, 1) in [0, 1]
    id: str = ""


@dataclass
class LoadResult:
    samples: list
    orphan_images: list = field(default_factory=list)
    orphan_labels: list = field(default_factory=list)
    corrupt: list = field(default_factory=list)


def read_image(path, channels):
    with Image.open(path) as img:
        img = img.convert("RGB" if channels == 3 else "L")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if channels == 1:
        arr = arr[:, :, np.newaxis]
    return arr


def load_dataset(root) -> LoadResult:
    root = Path(root)
    img_dir, lbl_dir = root / "images", root / "edges"
    if not img_dir.is_dir() or not lbl_dir.is_dir():
        raise DataError(f"{root} must contain images/ and edges/ directories")
    images = {p.stem: p for p in sorted(img_dir.iterdir()) if p.is_file()}
    labels = {p.stem: p for p in sorted(lbl_dir.iterdir()) if p.is_file()}
    result = LoadResult(samples=[])
    result.orphan_images = sorted(set(images) - set(labels))
    result.orphan_labels = sorted(set(labels) - set(images))
    for stem in sorted(set(images) & set(labels)):
        try:
            image = read_image(images[stem], 3)
            label = read_image(labels[stem], 1)
        except (OSError, UnidentifiedImageError) as e:
            result.corrupt.append(f"{stem}: {e}")
            continue
        if image.shape[:2] != label.shape[:2]:
            result.corrupt.append(
                f"{stem}: image {image.shape[:2]} vs label {label.shape[:2]}")
            continue
        result.samples.append(Sample(image=image, label=label, id=stem))
    return result


def save_gray_png(path, values):
    """Store a [0, 1] map as 8-bit grayscale, round-half-up quantization."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 3:
        if v.shape[2] != 1:
            raise DataError(f"expected single-channel map, got {v.shape}")
        v = v[:, :, 0]
    q = np.floor(255.0 * np.clip(v, 0.0, 1.0) + 0.5).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path)


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentSpec:
    crop: int                    # square crop extent
    mode: str = "random"         # "random" | "grid"
    crops_per_image: int = 20    # random mode only
    grid_overlap: int = 2        # grid mode: stride = crop / grid_overlap
    hflip: bool = False          # add the mirrored copy of every crop
    rotations: tuple = (0,)      # quarter-turn multiples of 90 degrees

    def __post_init__(self):
        if self.mode not in ("random", "grid"):
            raise DataError(f"augment mode must be random|grid, got {self.mode!r}")
        if self.crop < 1 or self.crops_per_image < 1 or self.grid_overlap < 1:
            raise DataError("augment spec extents must be positive")
        if any(r % 90 for r in self.rotations):
            raise DataError(f"rotations must be multiples of 90: {self.rotations}")


def biped_recipe() -> AugmentSpec:
    """20 random 384-pixel crops per source, each kept in 4 orientations."""
    return AugmentSpec(crop=384, mode="random", crops_per_image=20,
                       hflip=False, rotations=(0, 90, 180, 270))


def bsds_recipe() -> AugmentSpec:
    """Half-overlapping 256-pixel grid crops, mirrored and quarter-rotated."""
    return AugmentSpec(crop=256, mode="grid", grid_overlap=2,
                       hflip=True, rotations=(0, 90, 180, 270))


def _grid_origins(extent, crop, stride):
    xs = list(range(0, extent - crop + 1, stride))
    last = extent - crop
    if xs[-1] != last:
        xs.append(last)
    return xs


def _orient(arr, flip, quarter_turns):
    if flip:
        arr = arr[:, ::-1, :]
    if quarter_turns:
        arr = np.rot90(arr, k=quarter_turns, axes=(0, 1))
    return np.ascontiguousarray(arr)


class AugmentedDataset(Sequence):
    """Lazy view over (source, crop origin, orientation) combinations."""

    def __init__(self, samples, spec: AugmentSpec, seed=0):
        self.samples = list(samples)
        self.spec = spec
        self.index = []
        for si, s in enumerate(self.samples):
            h, w = s.image.shape[:2]
            if h < spec.crop or w < spec.crop:
                raise DataError(
                    f"sample {s.id or si}: crop {spec.crop} exceeds {h}x{w}")
            if spec.mode == "random":
                rng = stream(seed, f"crop.{s.id or si}")
                origins = [
                    (int(rng.integers(0, h - spec.crop + 1)),
                     int(rng.integers(0, w - spec.crop + 1)))
                    for _ in range(spec.crops_per_image)
                ]
            else:
                stride = max(1, spec.crop // spec.grid_overlap)
                origins = [(y, x)
                           for y in _grid_origins(h, spec.crop, stride)
                           for x in _grid_origins(w, spec.crop, stride)]
            for ci, (y, x) in enumerate(origins):
                for flip in ((False, True) if spec.hflip else (False,)):
                    for rot in spec.rotations:
                        self.index.append((si, ci, y, x, flip, rot // 90))

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i):
        si, ci, y, x, flip, qt = self.index[i]
        src = self.samples[si]
        c = self.spec.crop
        image = _orient(src.image[y:y + c, x:x + c, :], flip, qt)
        label = _orient(src.label[y:y + c, x:x + c, :], flip, qt)
        tag = f"{src.id or si}__c{ci:02d}{'_f' if flip else ''}_r{qt * 90}"
        return Sample(image=image, label=label, id=tag)


# ---------------------------------------------------------------------------
# synthetic scenes


def region_boundaries(mask):
    """Binary map of region transitions: a pixel is marked when its right or
    lower 4-neighbor belongs to a different region."""
    m = np.asarray(mask)
    edges = np.zeros(m.shape, dtype=bool)
    edges[:, :-1] |= m[:, :-1] != m[:, 1:]
    edges[:-1, :] |= m[:-1, :] != m[1:, :]
    return edges


def synth_scene(height, width, rng):
    """One scene: (image (H,W,3), label (H,W,1), region mask (H,W) int).

    Renders 2-5 filled shapes (ellipse / rectangle / triangle) in painter's
    order over a flat background, each region at a distinct gray level, then
    adds slight level jitter and pixel noise. The label marks region
    transitions of the clean mask, so it stays exact under the noise.
    """
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    mask = np.zeros((height, width), dtype=np.int64)
    hi = 6 if min(height, width) >= 48 else 4
    count = int(rng.integers(2, hi))
    scale = min(height, width)
    for k in range(1, count + 1):
        kind = rng.integers(0, 3)
        cy = rng.uniform(0.2, 0.8) * height
        cx = rng.uniform(0.2, 0.8) * width
        r = rng.uniform(0.07, 0.13) * scale
        if kind == 0:
            ry, rx = r * rng.uniform(0.7, 1.3), r * rng.uniform(0.7, 1.3)
            hit = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
        elif kind == 1:
            ry, rx = r * rng.uniform(0.7, 1.3), r * rng.uniform(0.7, 1.3)
            hit = (np.abs(ys - cy) <= ry) & (np.abs(xs - cx) <= rx)
        else:
            base = rng.uniform(0, 2 * math.pi)
            angs = base + np.array([0.0, 2.1, 4.2]) + rng.uniform(-0.3, 0.3, 3)
            vy = cy + 1.4 * r * np.sin(angs)
            vx = cx + 1.4 * r * np.cos(angs)
            hit = np.ones((height, width), dtype=bool)
            for a in range(3):
                b = (a + 1) % 3
                c3 = (a + 2) % 3
                cross = ((vx[b] - vx[a]) * (ys - vy[a])
                         - (vy[b] - vy[a]) * (xs - vx[a]))
                # keep the half-plane containing the opposite vertex
                side = ((vx[b] - vx[a]) * (vy[c3] - vy[a])
                        - (vy[b] - vy[a]) * (vx[c3] - vx[a]))
                hit &= cross * np.sign(side) >= 0
        mask[hit] = k
    levels = rng.permutation(np.linspace(0.15, 0.9, count + 1))
    levels = np.clip(levels + rng.uniform(-0.03, 0.03, count + 1), 0.0, 1.0)
    gray = levels[mask]
    gray = np.clip(gray + rng.normal(0.0, 0.015, gray.shape), 0.0, 1.0)
    image = np.repeat(gray[:, :, np.newaxis], 3, axis=2)
    label = region_boundaries(mask).astype(np.float64)[:, :, np.newaxis]
    return image, label, mask


def synth_generate(count, height, width, seed) -> list:
    """Deterministic list of synthetic samples."""
    if height < 16 or width < 16:
        raise DataError(f"synthetic extents must be >= 16, got {height}x{width}")
    out = []
    for i in range(count):
        rng = stream(seed, f"synth.{i}")
        image, label, _ = synth_scene(height, width, rng)
        out.append(Sample(image=image, label=label, id=f"synth-{i:04d}"))
    return out


def write_dataset(samples, root):
    """Emit the on-disk layout (images/ + edges/) for a sample list."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "edges").mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_gray_png(root / "images" / f"{s.id}.png", s.image[:, :, 0])
        save_gray_png(root / "edges" / f"{s.id}.png", s.label)
    return root
