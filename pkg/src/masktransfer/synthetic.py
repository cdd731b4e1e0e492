"""Procedural two-domain dataset with ground-truth attribute masks.

Domain A: smooth gradient background plus one colored disc (the base shape).
Domain B: the same generative family plus a dark "glasses" glyph (two discs
joined by a bar) whose position and scale are pure functions of the base
shape, so correct transfer must adapt the glyph to the target image.

The glyph is painted strictly on top: outside its mask a B image equals the
attribute-free rendering pixel for pixel.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, UnpairedDataset, denormalize, normalize, save_image, save_mask

SUPPORTED_RESOLUTIONS = (32, 64, 128)

# glyph geometry relative to the base shape radius r
GLYPH_DISC_RADIUS = 0.78
GLYPH_DX = 1.00
GLYPH_DY = 0.55
GLYPH_BAR_HALF_HEIGHT = 0.26


def sample_params(rng: np.random.Generator) -> dict:
    """Draw the generative parameters of one sample (fractions of the image)."""
    hue = rng.uniform(-0.2, 0.9, size=6)
    return {
        "bg_color0": hue[0:3].tolist(),
        "bg_color1": hue[3:6].tolist(),
        "bg_angle": float(rng.uniform(0, 2 * np.pi)),
        "cx": float(rng.uniform(0.38, 0.62)),
        "cy": float(rng.uniform(0.40, 0.64)),
        "radius": float(rng.uniform(0.13, 0.19)),
        "shape_color": rng.uniform(-0.2, 0.9, size=3).tolist(),
        "glyph_color": rng.uniform(-1.0, -0.5, size=3).tolist(),
    }


def glyph_mask(params: dict, resolution: int) -> np.ndarray:
    """Boolean (H, W) mask of the glyph implied by the base shape geometry."""
    r = params["radius"] * resolution
    cx = params["cx"] * resolution
    cy = params["cy"] * resolution - GLYPH_DY * r
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64) + 0.5
    rg = GLYPH_DISC_RADIUS * r
    left = (xx - (cx - GLYPH_DX * r)) ** 2 + (yy - cy) ** 2 <= rg**2
    right = (xx - (cx + GLYPH_DX * r)) ** 2 + (yy - cy) ** 2 <= rg**2
    bar = (np.abs(yy - cy) <= GLYPH_BAR_HALF_HEIGHT * r) & (np.abs(xx - cx) <= GLYPH_DX * r)
    return left | right | bar


def render_sample(params: dict, resolution: int, with_glyph: bool) -> np.ndarray:
    """Render one sample as a (3, H, W) float32 image in [-1, 1].

    Pixel values are snapped to the uint8 grid so PNG round-trips are exact.
    """
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64) + 0.5
    u = xx / resolution - 0.5
    v = yy / resolution - 0.5
    t = np.clip((np.cos(params["bg_angle"]) * u + np.sin(params["bg_angle"]) * v) + 0.5, 0, 1)
    c0 = np.asarray(params["bg_color0"])[:, None, None]
    c1 = np.asarray(params["bg_color1"])[:, None, None]
    img = c0 + t[None] * (c1 - c0)

    cx = params["cx"] * resolution
    cy = params["cy"] * resolution
    r = params["radius"] * resolution
    disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2
    img = np.where(disc[None], np.asarray(params["shape_color"])[:, None, None], img)

    # snap the attribute-free rendering first so the glyph stays a pure overlay
    img = normalize(denormalize(img.astype(np.float32)))
    if with_glyph:
        g = glyph_mask(params, resolution)
        gc = normalize(denormalize(np.asarray(params["glyph_color"], dtype=np.float32)))
        img = np.where(g[None], gc[:, None, None].astype(np.float32), img)
    return img.astype(np.float32)


@dataclass
class SyntheticSample:
    image: np.ndarray  # (3, H, W) in [-1, 1]
    gt_mask: np.ndarray  # (H, W) uint8 in {0, 1}; all-zero for domain A
    domain: str  # "A" or "B"
    params: dict


@dataclass
class SyntheticDataset:
    samples_a: list
    samples_b: list
    resolution: int
    seed: int

    @property
    def images_a(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples_a])

    @property
    def images_b(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples_b])

    @property
    def masks_b(self) -> np.ndarray:
        return np.stack([s.gt_mask for s in self.samples_b])

    def to_unpaired(self, split: str = "train") -> UnpairedDataset:
        return UnpairedDataset(self.images_a, self.images_b, self.resolution, split)


def generate_synthetic(n_per_domain: int, resolution: int, seed: int) -> SyntheticDataset:
    """Generate n samples per domain, fully reproducible from the seed."""
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise DataError(
            f"unsupported resolution {resolution}, expected one of {SUPPORTED_RESOLUTIONS}"
        )
    if n_per_domain < 1:
        raise DataError(f"n_per_domain must be >= 1, got {n_per_domain}")
    rng = np.random.default_rng(seed)
    empty = np.zeros((resolution, resolution), dtype=np.uint8)
    samples_a = []
    samples_b = []
    for _ in range(n_per_domain):
        p = sample_params(rng)
        samples_a.append(SyntheticSample(render_sample(p, resolution, False), empty, "A", p))
    for _ in range(n_per_domain):
        p = sample_params(rng)
        mask = glyph_mask(p, resolution).astype(np.uint8)
        samples_b.append(SyntheticSample(render_sample(p, resolution, True), mask, "B", p))
    return SyntheticDataset(samples_a, samples_b, resolution, seed)


def write_dataset(root, train: SyntheticDataset, test: SyntheticDataset) -> None:
    """Write train/test splits in the standard directory layout plus params.json."""
    root = Path(root)
    params = {"resolution": train.resolution, "train": {}, "test": {}}
    for split, ds in (("train", train), ("test", test)):
        for dom, samples in (("A", ds.samples_a), ("B", ds.samples_b)):
            names = []
            for i, s in enumerate(samples):
                name = f"{dom.lower()}_{i:05d}.png"
                save_image(s.image, root / f"{split}{dom}" / name)
                if dom == "B":
                    save_mask(s.gt_mask.astype(np.float64), root / "masksB" / f"{split}_{name}")
                names.append({"file": name, "params": s.params})
            params[split][dom] = names
    with open(root / "params.json", "w") as f:
        json.dump(params, f, indent=1, sort_keys=True)


def read_params(root) -> dict:
    with open(Path(root) / "params.json") as f:
        return json.load(f)
