"""Mask algebra: blend raw decoder output into a carrier image, binarize
masks, and compose attribute removal. All pure, pixelwise functions."""

from typing import NamedTuple

import torch


class MaskedOutput(NamedTuple):
    mask: torch.Tensor  # (N, 1, H, W) in (0, 1)
    raw: torch.Tensor  # (N, 3, H, W) in (-1, 1)


class BinaryMask(NamedTuple):
    mask: torch.Tensor  # (N, 1, H, W) in {0, 1}
    threshold: float


def compose(carrier: torch.Tensor, out: MaskedOutput) -> torch.Tensor:
    """Blend: mask * raw + (1 - mask) * carrier, elementwise.

    The single-channel mask broadcasts across the color channels.
    """
    mask, raw = out
    if raw.shape != carrier.shape:
        raise ValueError(f"carrier shape {tuple(carrier.shape)} != raw {tuple(raw.shape)}")
    if mask.shape[-2:] != carrier.shape[-2:] or mask.shape[0] != carrier.shape[0]:
        raise ValueError(f"mask shape {tuple(mask.shape)} incompatible with carrier")
    return mask * raw + (1.0 - mask) * carrier


def binarize(mask: torch.Tensor, threshold: float) -> BinaryMask:
    """Elementwise indicator(mask > threshold); idempotent for any threshold in (0, 1)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return BinaryMask((mask > threshold).to(mask.dtype), threshold)


def compose_removal(b: torch.Tensor, unmasked: torch.Tensor, binary: BinaryMask) -> torch.Tensor:
    """(1 - M) * b + M * unmasked: replace only the masked pixels of b.

    Same blend kernel as compose(), with the binary mask selecting the
    attribute-free rendering.
    """
    return compose(b, MaskedOutput(binary.mask, unmasked))
