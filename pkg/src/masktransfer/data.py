"""Unpaired two-domain image datasets and deterministic batch streaming.

Directory layout convention:
    <root>/trainA/*.png  <root>/trainB/*.png
    <root>/testA/*.png   <root>/testB/*.png
    <root>/masksB/*.png  (synthetic data only; 8-bit grayscale, 0 or 255)
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


class DataError(ValueError):
    """Raised for unusable dataset directories, files or parameters."""


def normalize(pixels: np.ndarray) -> np.ndarray:
    """Map uint8 pixel values [0, 255] linearly to float32 [-1, 1]."""
    return pixels.astype(np.float32) / 127.5 - 1.0


def denormalize(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] float values back to uint8, rounding to nearest."""
    u = np.rint((np.clip(values, -1.0, 1.0) + 1.0) * 127.5)
    return u.astype(np.uint8)


def load_image(path, resolution: int) -> np.ndarray:
    """Load one image file as a (3, H, W) float32 array in [-1, 1]."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (resolution, resolution):
                im = im.resize((resolution, resolution), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode image file {path}: {exc}") from exc
    return normalize(arr).transpose(2, 0, 1)


def save_image(values: np.ndarray, path) -> None:
    """Write a (3, H, W) array in [-1, 1] as a PNG file."""
    arr = denormalize(np.asarray(values)).transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def save_mask(mask: np.ndarray, path) -> None:
    """Write an (H, W) mask in [0, 1] as an 8-bit grayscale PNG."""
    arr = np.rint(np.clip(np.asarray(mask, dtype=np.float64), 0, 1) * 255)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def load_mask(path) -> np.ndarray:
    """Load an 8-bit grayscale PNG as an (H, W) float array in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


def _list_images(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"image directory not found: {root}")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    return files


@dataclass
class UnpairedDataset:
    """Two unpaired image collections with a shared resolution.

    No pairing exists between `images_a` and `images_b`; their lengths are
    allowed to differ. Arrays are (N, 3, H, W) float32 in [-1, 1].
    """

    images_a: np.ndarray
    images_b: np.ndarray
    resolution: int
    split: str = "train"

    def __post_init__(self):
        for name, imgs in (("images_a", self.images_a), ("images_b", self.images_b)):
            if imgs.ndim != 4 or imgs.shape[1] != 3:
                raise DataError(f"{name} must be (N, 3, H, W), got {imgs.shape}")
            if imgs.shape[2] != self.resolution or imgs.shape[3] != self.resolution:
                raise DataError(
                    f"{name} resolution {imgs.shape[2:]} != {self.resolution}"
                )

    @property
    def n_a(self) -> int:
        return len(self.images_a)

    @property
    def n_b(self) -> int:
        return len(self.images_b)


def _split_index(n: int, split_fraction: float) -> int:
    # floor with a small epsilon so e.g. 0.29 * 100 -> 29, not 28
    return int(np.floor(n * split_fraction + 1e-9))


def load_unpaired(root_a, root_b, resolution: int, split_fraction: float):
    """Load two image directories into deterministic train/test datasets.

    The split is by sorted-filename order: the first floor(n * split_fraction)
    files of each domain form the train set, the remainder the test set.
    Returns (train, test) UnpairedDataset objects.
    """
    if not 0.0 < split_fraction < 1.0:
        raise DataError(f"split_fraction must be in (0, 1), got {split_fraction}")
    files_a = _list_images(root_a)
    files_b = _list_images(root_b)
    for name, files in (("A", files_a), ("B", files_b)):
        if len(files) < 2:
            raise DataError(f"domain {name} needs at least 2 images, found {len(files)}")

    def stack(files):
        return np.stack([load_image(f, resolution) for f in files])

    out = []
    for split in ("train", "test"):
        parts = []
        for files in (files_a, files_b):
            k = _split_index(len(files), split_fraction)
            chosen = files[:k] if split == "train" else files[k:]
            if not chosen:
                raise DataError(
                    f"{split} split is empty for one domain "
                    f"(n={len(files)}, split_fraction={split_fraction})"
                )
            parts.append(stack(chosen))
        out.append(UnpairedDataset(parts[0], parts[1], resolution, split))
    return out[0], out[1]


def load_dataset_root(root, resolution: int, split: str = "train") -> UnpairedDataset:
    """Load a <root>/{train,test}{A,B} directory tree for one split."""
    root = Path(root)
    files_a = _list_images(root / f"{split}A")
    files_b = _list_images(root / f"{split}B")
    if not files_a or not files_b:
        raise DataError(f"empty domain under {root} for split {split}")
    images_a = np.stack([load_image(f, resolution) for f in files_a])
    images_b = np.stack([load_image(f, resolution) for f in files_b])
    return UnpairedDataset(images_a, images_b, resolution, split)


@dataclass
class BatchStream:
    """Deterministic, single-consumer stream of unpaired (A, B) batch pairs.

    Each epoch draws independent shuffles for the two domains, seeded by
    (seed, epoch_index), so identical construction arguments replay the
    identical batch sequence. A and B positions carry no pairing.
    """

    dataset: UnpairedDataset
    batch_size: int
    seed: int = 0
    _epoch: int = field(default=0, repr=False)
    _cursor: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError(f"batch_size must be positive, got {self.batch_size}")
        if self.batch_size > min(self.dataset.n_a, self.dataset.n_b):
            raise DataError(
                f"batch_size {self.batch_size} exceeds domain size "
                f"{min(self.dataset.n_a, self.dataset.n_b)}"
            )
        self._reshuffle()

    @property
    def batches_per_epoch(self) -> int:
        return min(self.dataset.n_a, self.dataset.n_b) // self.batch_size

    def _reshuffle(self):
        rng = np.random.default_rng([self.seed & 0x7FFFFFFF, self._epoch])
        self._order_a = rng.permutation(self.dataset.n_a)
        self._order_b = rng.permutation(self.dataset.n_b)

    def seek(self, batches_consumed: int):
        """Fast-forward to just after `batches_consumed` emitted batches."""
        per = self.batches_per_epoch
        self._epoch = batches_consumed // per
        self._cursor = batches_consumed % per
        self._reshuffle()

    def next_batch(self):
        """Return the next (batch_a, batch_b) pair of float32 torch tensors."""
        if self._cursor >= self.batches_per_epoch:
            self._epoch += 1
            self._cursor = 0
            self._reshuffle()
        lo = self._cursor * self.batch_size
        hi = lo + self.batch_size
        idx_a = self._order_a[lo:hi]
        idx_b = self._order_b[lo:hi]
        self._cursor += 1
        batch_a = torch.from_numpy(self.dataset.images_a[idx_a].copy())
        batch_b = torch.from_numpy(self.dataset.images_b[idx_b].copy())
        return batch_a, batch_b
