from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from .errors import ValidationError

IMAGE_EXTS = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"}
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)


@dataclass
class SamplePair:
    image: torch.Tensor  # [3, S, S], normalised
    mask: torch.Tensor  # [1, S, S], {0, 1}
    image_id: str
    original_size: Tuple[int, int]  # (height, width) of the image on disk
    flags: List[str] = field(default_factory=list)


def _stems(folder: Path):
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_EXTS}


def image_to_tensor(img: Image.Image, size: int) -> torch.Tensor:
    img = img.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.array(MEAN, np.float32)) / np.array(STD, np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def mask_to_tensor(mask: Image.Image, size: int) -> torch.Tensor:
    mask = mask.convert("L").resize((size, size), Image.NEAREST)
    arr = (np.asarray(mask) > 127).astype(np.float32)
    return torch.from_numpy(arr)[None]


def load_dataset(root, image_size: int = 416) -> List[SamplePair]:
    """Load ``root/images`` and ``root/masks`` pairs matched by file stem, sorted by id."""
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise ValidationError(f"{root} must contain images/ and masks/ folders")
    images, masks = _stems(img_dir), _stems(mask_dir)
    if not images:
        raise ValidationError(f"no images found in {img_dir}")
    unmatched = sorted(set(images) ^ set(masks))
    if unmatched:
        raise ValidationError(f"unmatched file stems in {root}: {', '.join(unmatched)}")
    pairs = []
    for stem in sorted(images):
        with Image.open(images[stem]) as img, Image.open(masks[stem]) as mask:
            flags = []
            if img.size != mask.size:
                flags.append(f"size mismatch: image {img.size} vs mask {mask.size}")
            w, h = img.size
            pairs.append(SamplePair(image_to_tensor(img, image_size), mask_to_tensor(mask, image_size),
                                    stem, (h, w), flags))
    return pairs


def stack(pairs: List[SamplePair]):
    return torch.stack([p.image for p in pairs]), torch.stack([p.mask for p in pairs])


def synthetic_sample(rng: np.random.Generator, size: int):
    """A random ellipse or rectangle with its own texture on a noise background."""
    def texture(sigma):
        t = ndimage.gaussian_filter(rng.standard_normal((size, size, 3)), (sigma, sigma, 0))
        return (t - t.mean()) / (t.std() + 1e-8)

    yy, xx = np.mgrid[:size, :size]
    cy, cx = rng.uniform(0.3, 0.7, 2) * size
    ry, rx = rng.uniform(0.12, 0.28, 2) * size
    if rng.random() < 0.5:
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
    else:
        mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    bg_color = rng.uniform(0.2, 0.5, 3)
    fg_color = np.clip(bg_color + rng.choice([-1, 1]) * rng.uniform(0.25, 0.4, 3), 0, 1)
    img = np.where(mask[..., None], fg_color + 0.06 * texture(1.0), bg_color + 0.08 * texture(2.0))
    img = np.clip(img, 0, 1)
    return (img * 255).round().astype(np.uint8), mask.astype(np.uint8) * 255


def write_synthetic_dataset(root, n: int = 8, size: int = 64, seed: int = 0) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        img, mask = synthetic_sample(rng, size)
        Image.fromarray(img).save(root / "images" / f"sample_{i:03d}.png")
        Image.fromarray(mask).save(root / "masks" / f"sample_{i:03d}.png")
    return root
