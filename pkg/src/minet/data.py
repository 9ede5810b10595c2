"""Dataset loading, normalization, augmentation, and batch iteration.

Expected layout: root/{train,test}/{images,masks}/NAME.png with
name-matched pairs, optionally nested one level into class subfolders
(inclusion / patches / scratches). Images may be PNG or PGM, 8-bit.

Pixel pipeline: grayscale by luminance, scale to [0,1], then normalize
as (x - 0.4669) / 0.2437. Masks binarize at >= 128. The published
"variance value 0.2437" is applied as a standard-deviation-like divisor;
dividing by a true variance would not match the mean subtraction's scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from minet import backend
from minet.tensor import Tensor

MEAN = 0.4669
STD = 0.2437
DEFECT_CLASSES = ("inclusion", "patches", "scratches")


@dataclass
class Sample:
    image: Tensor        # (1,1,H,W) normalized
    mask: Tensor         # (1,1,H,W) in {0,1}
    id: str
    defect_class: str = "unknown"


@dataclass
class AugmentConfig:
    resize_to: int = 368
    crop_to: int = 336
    hflip: bool = True
    mean: float = MEAN
    std: float = STD
    seed: int = 0

    def __post_init__(self):
        if self.crop_to > self.resize_to:
            raise ValueError(f"crop_to={self.crop_to} exceeds resize_to={self.resize_to}")
        if self.std <= 0:
            raise ValueError("std must be positive")


def normalize(x, mean=MEAN, std=STD):
    return (x - mean) / std


def denormalize(x, mean=MEAN, std=STD):
    return x * std + mean


def _read_gray(path) -> np.ndarray:
    """8-bit PNG/PGM -> grayscale float in [0,1] (luminance for RGB)."""
    with Image.open(path) as im:
        if im.mode in ("L", "P"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        elif im.mode in ("RGB", "RGBA"):
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
            arr = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        else:
            raise ValueError(f"{path}: unsupported image mode {im.mode!r} (8-bit only)")
    return arr / 255.0


def load_sample(image_path, mask_path, mean=MEAN, std=STD, dtype=np.float32) -> Sample:
    image_path, mask_path = Path(image_path), Path(mask_path)
    try:
        img = _read_gray(image_path)
        with Image.open(mask_path) as im:
            if im.mode not in ("L", "P", "1", "RGB"):
                raise ValueError(f"{mask_path}: unsupported mask mode {im.mode!r}")
            mask_raw = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot load pair image={image_path} mask={mask_path}: {exc}") from exc
    if img.shape != mask_raw.shape:
        raise ValueError(f"size mismatch: image {image_path} is {img.shape}, "
                         f"mask {mask_path} is {mask_raw.shape}")
    image = normalize(img, mean, std).astype(dtype)[None, None]
    mask = (mask_raw >= 128).astype(dtype)[None, None]
    cls = image_path.parent.name if image_path.parent.name in DEFECT_CLASSES else "unknown"
    return Sample(Tensor(image), Tensor(mask), image_path.stem, cls)


def _resize_nearest(x: np.ndarray, oh, ow) -> np.ndarray:
    h, w = x.shape[2], x.shape[3]
    yi = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(np.intp), h - 1)
    xi = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(np.intp), w - 1)
    return x[:, :, yi][:, :, :, xi]


def resize_sample(sample: Sample, size: int) -> Sample:
    """Bilinear for the image, nearest + re-binarize for the mask."""
    img = backend.resize_bilinear_forward(sample.image.data, size, size)
    mask = (_resize_nearest(sample.mask.data, size, size) >= 0.5).astype(sample.mask.dtype)
    return Sample(Tensor(img), Tensor(mask), sample.id, sample.defect_class)


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator,
            force_flip: Optional[bool] = None) -> Sample:
    """Resize to cfg.resize_to, random crop to cfg.crop_to, joint
    horizontal flip. Identical geometric parameters for image and mask."""
    s = resize_sample(sample, cfg.resize_to)
    img, mask = s.image.data, s.mask.data
    margin = cfg.resize_to - cfg.crop_to
    if margin > 0:
        oy = int(rng.integers(0, margin + 1))
        ox = int(rng.integers(0, margin + 1))
        img = img[:, :, oy:oy + cfg.crop_to, ox:ox + cfg.crop_to]
        mask = mask[:, :, oy:oy + cfg.crop_to, ox:ox + cfg.crop_to]
    flip = force_flip if force_flip is not None else (cfg.hflip and rng.random() < 0.5)
    if flip:
        img = img[:, :, :, ::-1].copy()
        mask = mask[:, :, :, ::-1].copy()
    return Sample(Tensor(img), Tensor(mask), s.id, s.defect_class)


def discover_pairs(root, split):
    """(image_path, mask_path) pairs under root/split; name-matched."""
    root = Path(root)
    img_dir = root / split / "images"
    mask_dir = root / split / "masks"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"missing image directory: {img_dir}")
    if not mask_dir.is_dir():
        raise FileNotFoundError(f"missing mask directory: {mask_dir}")
    images = sorted(p for p in img_dir.rglob("*") if p.suffix.lower() in (".png", ".pgm"))
    pairs = []
    for img in images:
        rel = img.relative_to(img_dir)
        candidates = [mask_dir / rel] + [
            (mask_dir / rel).with_suffix(ext) for ext in (".png", ".pgm")]
        mask = next((c for c in candidates if c.exists()), None)
        if mask is None:
            raise FileNotFoundError(f"no mask for image {img} under {mask_dir}")
        pairs.append((img, mask))
    if not pairs:
        raise FileNotFoundError(f"no images found under {img_dir}")
    return pairs


def read_index_file(path):
    """Optional newline-separated name filter."""
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]


def epoch_items(pairs, rng):
    """One epoch's item order: every sample once plain and once
    pre-flipped, shuffled together (the 810 -> 1620 doubling)."""
    items = [(p, False) for p in pairs] + [(p, True) for p in pairs]
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def iterate_batches(pairs, batch_size, cfg: AugmentConfig, rng: np.random.Generator,
                    dtype=np.float32):
    """Yield (images, masks, ids) batches for one epoch; the final short
    batch is kept. Deterministic for a fixed generator state."""
    if not pairs:
        raise ValueError("iterate_batches: empty sample index")
    items = epoch_items(pairs, rng)
    for i in range(0, len(items), batch_size):
        chunk = items[i:i + batch_size]
        imgs, masks, ids = [], [], []
        for (img_path, mask_path), flip in chunk:
            s = load_sample(img_path, mask_path, cfg.mean, cfg.std, dtype)
            s = augment(s, cfg, rng, force_flip=flip)
            imgs.append(s.image.data)
            masks.append(s.mask.data)
            ids.append(s.id + ("_flip" if flip else ""))
        yield (Tensor(np.concatenate(imgs, axis=0)),
               Tensor(np.concatenate(masks, axis=0)), ids)
