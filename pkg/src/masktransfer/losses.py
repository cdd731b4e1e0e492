"""Training objectives: domain confusion, discriminator, reconstruction,
mask-minimality and latent cycle losses, plus the weighted total with
ablation toggles and norm variants."""

import json
from dataclasses import dataclass, field, replace

import torch

from .composition import MaskedOutput, compose

EPS = 1e-7

GENERATOR_TERMS = ("dc", "recon1_a", "recon1_b", "cycle", "recon2_a", "recon2_b")


@dataclass(frozen=True)
class LossWeights:
    """Term weights and ablation switches.

    Dropping a term is numerically identical to setting its weight to zero.
    `mask_l2_coeff`, when set, replaces both mask-minimality reconstruction
    terms with an explicit L2 penalty on the transfer mask.
    """

    lambda1: float = 5.0  # recon1_a
    lambda2: float = 5.0  # recon1_b
    lambda3: float = 1.0  # cycle
    lambda4: float = 0.7  # recon2_a
    lambda5: float = 0.7  # recon2_b
    dropped: frozenset = field(default_factory=frozenset)
    recon1_norm: str = "l1"
    recon2_norm: str = "l1"
    mask_l2_coeff: float | None = None

    def __post_init__(self):
        for lam in (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5):
            if lam < 0:
                raise ValueError(f"loss weights must be non-negative, got {lam}")
        unknown = set(self.dropped) - set(GENERATOR_TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms in dropped: {sorted(unknown)}")
        for norm in (self.recon1_norm, self.recon2_norm):
            if norm not in ("l1", "l2"):
                raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")

    def drop(self, *terms) -> "LossWeights":
        return replace(self, dropped=self.dropped | set(terms))

    def effective_weight(self, term: str) -> float:
        if term in self.dropped:
            return 0.0
        if term in ("recon2_a", "recon2_b") and self.mask_l2_coeff is not None:
            return 0.0
        lam = {
            "dc": 1.0,
            "recon1_a": self.lambda1,
            "recon1_b": self.lambda2,
            "cycle": self.lambda3,
            "recon2_a": self.lambda4,
            "recon2_b": self.lambda5,
        }
        return lam[term]


@dataclass
class LossReport:
    """Per-term scalar values of one training step."""

    step: int = -1
    dc: float = 0.0
    recon1_a: float = 0.0
    recon1_b: float = 0.0
    cycle: float = 0.0
    recon2_a: float = 0.0
    recon2_b: float = 0.0
    mask_l2: float = 0.0
    total: float = 0.0
    disc: float = 0.0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        return cls(**json.loads(line))


class NonFiniteLoss(RuntimeError):
    """Raised when a loss term evaluates to NaN or infinity."""

    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is non-finite: {value}")
        self.term = term


def bce(p: torch.Tensor, q: float) -> torch.Tensor:
    """Binary cross entropy -(q log p + (1-q) log(1-p)), mean over the batch.

    Probabilities are clamped into [EPS, 1-EPS] so endpoints are finite.
    """
    p = p.clamp(EPS, 1.0 - EPS)
    return -(q * torch.log(p) + (1.0 - q) * torch.log(1.0 - p)).mean()


def _recon(x: torch.Tensor, target: torch.Tensor, norm: str) -> torch.Tensor:
    diff = x - target
    return diff.abs().mean() if norm == "l1" else (diff**2).mean()


def domain_confusion_loss(bundle, batch_a, batch_b) -> torch.Tensor:
    """Push discriminator outputs for both domains' common codes toward 1.

    Gradients flow through the discriminator into the encoder; the caller is
    responsible for not stepping the discriminator's parameters on this term.
    """
    pa = bundle.discriminate(bundle.encode_common(batch_a))
    pb = bundle.discriminate(bundle.encode_common(batch_b))
    return bce(pa, 1.0) + bce(pb, 1.0)


def discriminator_loss(bundle, batch_a, batch_b) -> torch.Tensor:
    """Adversary objective: label A-codes 0 and B-codes 1; codes are detached."""
    ca = bundle.encode_common(batch_a).detach()
    cb = bundle.encode_common(batch_b).detach()
    return bce(bundle.discriminate(ca), 0.0) + bce(bundle.discriminate(cb), 1.0)


def recon1_a(bundle, batch_a, norm: str = "l1") -> torch.Tensor:
    """Reconstruction of domain-A images through the common code alone."""
    return _recon(bundle.decode_a(bundle.encode_common(batch_a)), batch_a, norm)


def recon1_b(bundle, batch_b, norm: str = "l1") -> torch.Tensor:
    """Remove the separate content of b via the A-decoder, blend it back
    through the mask, and demand the result reconstructs b."""
    cb = bundle.encode_common(batch_b)
    sb = bundle.encode_separate(batch_b)
    carrier = bundle.decode_a(cb)
    mask, raw = bundle.decode_b(cb, sb)
    blended = compose(carrier, MaskedOutput(mask, raw))
    return _recon(blended, batch_b, norm)


def recon2(bundle, batch, norm: str = "l1") -> torch.Tensor:
    """Self-transfer reconstruction: blending x with itself as both inputs
    must give back x, which indirectly keeps the mask minimal."""
    common = bundle.encode_common(batch)
    separate = bundle.encode_separate(batch)
    mask, raw = bundle.decode_b(common, separate)
    blended = compose(batch, MaskedOutput(mask, raw))
    return _recon(blended, batch, norm)


def cycle_loss(bundle, batch_a, batch_b) -> torch.Tensor:
    """MSE between the codes of the transferred image and the input codes."""
    ca = bundle.encode_common(batch_a)
    sb = bundle.encode_separate(batch_b)
    mask, raw = bundle.decode_b(ca, sb)
    z = compose(batch_a, MaskedOutput(mask, raw))
    return _recon(bundle.encode_common(z), ca, "l2") + _recon(
        bundle.encode_separate(z), sb, "l2"
    )


def total_loss(bundle, batch_a, batch_b, weights: LossWeights):
    """Evaluate all enabled generator-side terms over shared forward passes.

    Returns (total: torch scalar with graph, report: LossReport with the
    discriminator field left at 0). Raises NonFiniteLoss naming the first
    term that is NaN or infinite.
    """
    w = {term: weights.effective_weight(term) for term in GENERATOR_TERMS}
    use_mask_l2 = weights.mask_l2_coeff is not None

    ca = cb = sa = sb = None
    if w["dc"] or w["recon1_a"] or w["recon1_b"] or w["cycle"] or w["recon2_a"] or use_mask_l2:
        ca = bundle.encode_common(batch_a)
    if w["dc"] or w["recon1_b"] or w["recon2_b"]:
        cb = bundle.encode_common(batch_b)
    if w["recon2_a"]:
        sa = bundle.encode_separate(batch_a)
    if w["recon1_b"] or w["cycle"] or w["recon2_b"] or use_mask_l2:
        sb = bundle.encode_separate(batch_b)

    terms = {}
    if w["dc"]:
        terms["dc"] = bce(bundle.discriminate(ca), 1.0) + bce(bundle.discriminate(cb), 1.0)
    if w["recon1_a"]:
        terms["recon1_a"] = _recon(bundle.decode_a(ca), batch_a, weights.recon1_norm)
    if w["recon1_b"]:
        carrier = bundle.decode_a(cb)
        mask_bb, raw_bb = bundle.decode_b(cb, sb)
        terms["recon1_b"] = _recon(
            compose(carrier, MaskedOutput(mask_bb, raw_bb)), batch_b, weights.recon1_norm
        )
    if w["cycle"] or use_mask_l2:
        mask_ab, raw_ab = bundle.decode_b(ca, sb)
        if w["cycle"]:
            z = compose(batch_a, MaskedOutput(mask_ab, raw_ab))
            terms["cycle"] = _recon(bundle.encode_common(z), ca, "l2") + _recon(
                bundle.encode_separate(z), sb, "l2"
            )
        if use_mask_l2:
            terms["mask_l2"] = (mask_ab**2).mean()
    if w["recon2_a"]:
        mask_aa, raw_aa = bundle.decode_b(ca, sa)
        terms["recon2_a"] = _recon(
            compose(batch_a, MaskedOutput(mask_aa, raw_aa)), batch_a, weights.recon2_norm
        )
    if w["recon2_b"]:
        mask_bb2, raw_bb2 = bundle.decode_b(cb, sb)
        terms["recon2_b"] = _recon(
            compose(batch_b, MaskedOutput(mask_bb2, raw_bb2)), batch_b, weights.recon2_norm
        )

    total = None
    report = LossReport()
    for term, value in terms.items():
        scalar = float(value.detach())
        if not torch.isfinite(value.detach()):
            raise NonFiniteLoss(term, scalar)
        setattr(report, term, scalar)
        weight = weights.mask_l2_coeff if term == "mask_l2" else w[term]
        contribution = weight * value
        total = contribution if total is None else total + contribution
    if total is None:
        total = torch.zeros((), dtype=batch_a.dtype, device=batch_a.device)
    report.total = float(total.detach())
    return total, report
