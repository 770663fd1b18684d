"""Image I/O, paired datasets, synthetic low-light pairs, crop/flip augmentation.

The bit-exact on-disk format is binary PPM (P6, maxval 255): trivial to
parse, no library dependence.  PNG is supported opportunistically through
Pillow when it is importable.  Images live internally as float64 H x W x 3
arrays in [0, 1] (value / 255).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .tensor import ContractViolation, Prng

log = logging.getLogger("dlen.image")


class ImageFormatError(ValueError):
    """The file is not a supported image or is malformed."""


@dataclass
class ImageBuffer:
    """An RGB image: 8-bit at the file boundary, [0,1] float internally."""

    pixels: np.ndarray  # [H, W, 3] float64 in [0, 1]

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ContractViolation(f"ImageBuffer expects HxWx3 pixels, got {p.shape}")
        self.pixels = p

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_bytes8(self) -> np.ndarray:
        """Clamp to [0,1] and quantize round-half-up to 8 bits."""
        clamped = np.clip(self.pixels, 0.0, 1.0)
        return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)

    def to_chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.pixels.transpose(2, 0, 1))

    @staticmethod
    def from_chw(chw: np.ndarray) -> "ImageBuffer":
        return ImageBuffer(np.asarray(chw, dtype=np.float64).transpose(1, 2, 0))


_PPM_HEADER = re.compile(rb"^P6\s+(\d+)\s+(\d+)\s+(\d+)\s")


def _read_ppm(raw: bytes, path: Path) -> ImageBuffer:
    m = _PPM_HEADER.match(raw)
    if not m:
        raise ImageFormatError(f"{path}: not a binary PPM (P6) file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    body = raw[m.end():]
    need = width * height * 3
    if len(body) < need:
        raise ImageFormatError(
            f"{path}: truncated pixel data ({len(body)} of {need} bytes)")
    pix = np.frombuffer(body[:need], dtype=np.uint8).reshape(height, width, 3)
    return ImageBuffer(pix.astype(np.float64) / 255.0)


def load_image(path) -> ImageBuffer:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"P6":
        return _read_ppm(raw, path)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            from PIL import Image
        except ImportError as exc:
            raise ImageFormatError(f"{path}: PNG support requires Pillow") from exc
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
        return ImageBuffer(arr.astype(np.float64) / 255.0)
    raise ImageFormatError(f"{path}: unrecognized image format")


def save_image(img: ImageBuffer, path) -> None:
    path = Path(path)
    data = img.to_bytes8()
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:
            raise ImageFormatError(f"{path}: PNG support requires Pillow") from exc
        Image.fromarray(data, mode="RGB").save(path)
        return
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    path.write_bytes(header + data.tobytes())


# -- paired datasets ---------------------------------------------------------

@dataclass
class PairedDataset:
    root: Path
    entries: List[Tuple[Path, Path]]

    def __len__(self) -> int:
        return len(self.entries)


class EmptyDatasetError(ValueError):
    """A dataset directory matched zero low/high pairs."""


def scan_dataset(root) -> PairedDataset:
    """Match files of identical name under root/low and root/high, sorted."""
    root = Path(root)
    low_dir, high_dir = root / "low", root / "high"
    for d in (low_dir, high_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"dataset subdirectory missing: {d}")
    low = {p.name: p for p in low_dir.iterdir() if p.is_file()}
    high = {p.name: p for p in high_dir.iterdir() if p.is_file()}
    for name in sorted(set(low) ^ set(high)):
        side = "high" if name in low else "low"
        log.warning("unmatched file %s (no %s/ counterpart)", name, side)
    names = sorted(set(low) & set(high))
    if not names:
        raise EmptyDatasetError(f"no matched low/high pairs under {root}")
    return PairedDataset(root, [(low[n], high[n]) for n in names])


# -- synthetic pairs and augmentation ---------------------------------------

def synth_lowlight(img: ImageBuffer, gamma: float, gain: float,
                   noise_sigma: float, seed: int) -> ImageBuffer:
    """Darken an image: clamp(gain * in^gamma + N(0, sigma)), seeded."""
    if gamma <= 0:
        raise ContractViolation(f"synth gamma must be positive, got {gamma}")
    if not 0 < gain <= 1:
        raise ContractViolation(f"synth gain must be in (0, 1], got {gain}")
    if noise_sigma < 0:
        raise ContractViolation(f"synth noise sigma must be >= 0, got {noise_sigma}")
    out = gain * np.power(img.pixels, gamma)
    if noise_sigma > 0:
        noise = Prng(seed).normal(img.pixels.shape, std=noise_sigma, dtype=np.float64)
        out = out + noise
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def random_crop_pair(low: np.ndarray, high: np.ndarray, size: int,
                     rng: Prng) -> Tuple[np.ndarray, np.ndarray]:
    """Same size x size window from both images of a pair ([C,H,W] arrays)."""
    if low.shape != high.shape:
        raise ContractViolation(f"pair shape mismatch: {low.shape} vs {high.shape}")
    _, h, w = low.shape
    if h < size or w < size:
        raise ContractViolation(f"image {h}x{w} smaller than crop {size}")
    top = int(rng.randint(1, h - size + 1)[0])
    left = int(rng.randint(1, w - size + 1)[0])
    sl = (slice(None), slice(top, top + size), slice(left, left + size))
    return low[sl], high[sl]


def augment_pair(low: np.ndarray, high: np.ndarray,
                 rng: Prng) -> Tuple[np.ndarray, np.ndarray]:
    """One of identity / h-flip / v-flip / rot90 / rot180 / rot270, uniform."""
    choice = int(rng.randint(1, 6)[0])
    def apply(x):
        if choice == 1:
            x = x[:, :, ::-1]
        elif choice == 2:
            x = x[:, ::-1, :]
        elif choice >= 3:
            x = np.rot90(x, k=choice - 2, axes=(1, 2))
        return np.ascontiguousarray(x)
    return apply(low), apply(high)
