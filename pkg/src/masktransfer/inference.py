"""User-facing procedures over a frozen model: guided transfer, weakly
supervised segmentation, attribute removal, latent interpolation, and the
two-stage pipelines. All operations are deterministic and accept any image
at the model resolution, regardless of domain."""

from typing import NamedTuple

import torch

from .composition import BinaryMask, MaskedOutput, binarize, compose, compose_removal
from .networks import ModelBundle


class TransferResult(NamedTuple):
    output: torch.Tensor  # z = mask * raw + (1 - mask) * a
    mask: torch.Tensor  # soft mask in (0, 1)
    raw: torch.Tensor  # raw decoder image in (-1, 1)


def _as_batch(x: torch.Tensor):
    if x.ndim == 3:
        return x.unsqueeze(0), True
    return x, False


def _unbatch(x: torch.Tensor, squeeze: bool):
    return x.squeeze(0) if squeeze else x


@torch.no_grad()
def transfer(bundle: ModelBundle, a: torch.Tensor, b: torch.Tensor) -> TransferResult:
    """Place the separate content of guide b onto target a."""
    bundle.eval()
    a_b, squeeze = _as_batch(a)
    b_b, _ = _as_batch(b)
    common = bundle.encode_common(a_b)
    separate = bundle.encode_separate(b_b)
    mask, raw = bundle.decode_b(common, separate)
    out = compose(a_b, MaskedOutput(mask, raw))
    return TransferResult(
        _unbatch(out, squeeze), _unbatch(mask, squeeze), _unbatch(raw, squeeze)
    )


@torch.no_grad()
def soft_mask(bundle: ModelBundle, b: torch.Tensor) -> torch.Tensor:
    """Self-mask m(b, b): feed the same image to both encoder inputs."""
    bundle.eval()
    b_b, squeeze = _as_batch(b)
    mask, _ = bundle.decode_b(bundle.encode_common(b_b), bundle.encode_separate(b_b))
    return _unbatch(mask, squeeze)


def segment(bundle: ModelBundle, b: torch.Tensor, threshold: float = 0.5) -> BinaryMask:
    """Weakly supervised segmentation: binarized self-mask of b."""
    return binarize(soft_mask(bundle, b), threshold)


@torch.no_grad()
def remove(bundle: ModelBundle, b: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    """Remove the separate content of b inside the binarized self-mask.

    Pixels outside the mask are taken from b verbatim.
    """
    bundle.eval()
    b_b, squeeze = _as_batch(b)
    common = bundle.encode_common(b_b)
    separate = bundle.encode_separate(b_b)
    mask, _ = bundle.decode_b(common, separate)
    unmasked = bundle.decode_a(common)
    out = compose_removal(b_b, unmasked, binarize(mask, threshold))
    return _unbatch(out, squeeze)


@torch.no_grad()
def interpolate(
    bundle: ModelBundle, a: torch.Tensor, b1: torch.Tensor, b2: torch.Tensor, steps: int
) -> list:
    """Decode a uniform path between the separate codes of b1 and b2, with a
    fixed target a. Endpoints equal transfer(a, b1) and transfer(a, b2)."""
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    bundle.eval()
    a_b, squeeze = _as_batch(a)
    common = bundle.encode_common(a_b)
    s1 = bundle.encode_separate(_as_batch(b1)[0])
    s2 = bundle.encode_separate(_as_batch(b2)[0])
    frames = []
    for i in range(steps):
        t = i / (steps - 1)
        mask, raw = bundle.decode_b(common, (1.0 - t) * s1 + t * s2)
        out = compose(a_b, MaskedOutput(mask, raw))
        frames.append(
            TransferResult(
                _unbatch(out, squeeze), _unbatch(mask, squeeze), _unbatch(raw, squeeze)
            )
        )
    return frames


def _check_same_resolution(m1: ModelBundle, m2: ModelBundle):
    if m1.config.resolution != m2.config.resolution:
        raise ValueError(
            f"models have different resolutions: {m1.config.resolution} vs "
            f"{m2.config.resolution}"
        )


def sequential_transfer(
    model1: ModelBundle, model2: ModelBundle, a: torch.Tensor,
    guide1: torch.Tensor, guide2: torch.Tensor,
) -> torch.Tensor:
    """Apply two independently trained transfers in sequence; the intermediate
    image is re-encoded from pixel space."""
    _check_same_resolution(model1, model2)
    stage1 = transfer(model1, a, guide1).output
    return transfer(model2, stage1, guide2).output


def remove_then_add(
    model_rm: ModelBundle, model_add: ModelBundle, b_src: torch.Tensor,
    guide: torch.Tensor, threshold: float = 0.5,
) -> torch.Tensor:
    """Strip the source's separate content, then add the guide's content."""
    _check_same_resolution(model_rm, model_add)
    stripped = remove(model_rm, b_src, threshold)
    return transfer(model_add, stripped, guide).output
