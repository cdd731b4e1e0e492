"""Quantitative evaluation: KID (polynomial-kernel MMD), Fréchet distance,
domain-classifier accuracy, cosine similarity, IoU and mask coverage."""

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .data import UnpairedDataset
from .inference import soft_mask, transfer
from .networks import down_block


def polynomial_kernel(x: np.ndarray, y: np.ndarray, gamma: float = 0.01) -> float:
    """k(x, y) = (gamma * <x, y> + 1)^3 for two equal-length vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected equal-length vectors, got {x.shape} and {y.shape}")
    return float((gamma * np.dot(x, y) + 1.0) ** 3)


def _gram(x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    return (gamma * (x @ y.T) + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray, gamma: float = 0.01) -> float:
    """Unbiased squared MMD with the cubic polynomial kernel; the diagonals
    of the within-set Gram matrices are excluded."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    if n < 2 or m < 2:
        raise ValueError("need at least 2 samples per set")
    kxx = _gram(x, x, gamma)
    kyy = _gram(y, y, gamma)
    kxy = _gram(x, y, gamma)
    sum_xx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    sum_yy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(sum_xx + sum_yy - 2.0 * kxy.mean())


def kid(
    feats_x: np.ndarray,
    feats_y: np.ndarray,
    gamma: float = 0.01,
    subsets: int = 10,
    subset_size: int | None = None,
    seed: int = 0,
):
    """KID as mean +- sd of unbiased MMD^2 over random subsets, scaled x100."""
    feats_x = np.asarray(feats_x, dtype=np.float64)
    feats_y = np.asarray(feats_y, dtype=np.float64)
    if subset_size is None:
        subset_size = min(100, len(feats_x), len(feats_y))
    if subset_size < 2:
        raise ValueError(f"subset_size must be >= 2, got {subset_size}")
    if len(feats_x) < subset_size or len(feats_y) < subset_size:
        raise ValueError(
            f"need >= {subset_size} features per set, got {len(feats_x)} and {len(feats_y)}"
        )
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(subsets):
        ix = rng.choice(len(feats_x), subset_size, replace=False)
        iy = rng.choice(len(feats_y), subset_size, replace=False)
        values.append(mmd2_unbiased(feats_x[ix], feats_y[iy], gamma))
    values = np.asarray(values) * 100.0
    return float(values.mean()), float(values.std())


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(feats_x: np.ndarray, feats_y: np.ndarray, eps: float = 1e-6) -> float:
    """Gaussian Fréchet distance ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^1/2).

    Covariance square roots use symmetric eigendecomposition with negative
    eigenvalues clipped at zero; degenerate covariances get eps*I.
    """
    x = np.atleast_2d(np.asarray(feats_x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(feats_y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    mu1, mu2 = x.mean(0), y.mean(0)
    s1 = np.cov(x, rowvar=False).reshape(x.shape[1], x.shape[1])
    s2 = np.cov(y, rowvar=False).reshape(y.shape[1], y.shape[1])
    for s in (s1, s2):
        if np.linalg.eigvalsh(s).min() < eps:
            s += eps * np.eye(s.shape[0])
    r1 = _psd_sqrt(s1)
    cross = _psd_sqrt(r1 @ s2 @ r1)
    dist = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2.0 * cross))
    return max(dist, 0.0)


def cosine_similarity(e1: np.ndarray, e2: np.ndarray) -> float:
    e1 = np.asarray(e1, dtype=np.float64).ravel()
    e2 = np.asarray(e2, dtype=np.float64).ravel()
    denom = np.linalg.norm(e1) * np.linalg.norm(e2)
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.dot(e1, e2) / denom, -1.0, 1.0))


def iou(m1, m2) -> float:
    """Intersection over union of two binary masks; both-empty counts as 1."""
    a = np.asarray(getattr(m1, "mask", m1)).astype(bool)
    b = np.asarray(getattr(m2, "mask", m2)).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def mask_coverage(masks) -> float:
    """Mean soft-mask value over all pixels and images, as a percentage."""
    return float(np.mean(np.asarray(masks)) * 100.0)


class DomainClassifier(nn.Module):
    """Small convolutional A-vs-B classifier; its 128-d penultimate layer
    doubles as the default embedding extractor for KID / FD / similarity."""

    def __init__(self, resolution: int = 64):
        super().__init__()
        self.resolution = resolution
        self.blocks = nn.Sequential(down_block(3, 32), down_block(32, 64), down_block(64, 128))
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.embed = nn.Sequential(nn.Linear(128 * 16, 128), nn.LeakyReLU(0.2))
        self.head = nn.Linear(128, 1)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = self.pool(self.blocks(x)).flatten(1)
        return self.embed(h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.head(self.features(x))).squeeze(1)


class ClassifierExtractor:
    """Frozen embedding extractor backed by a domain classifier."""

    def __init__(self, classifier: DomainClassifier, provenance: str = "domain-classifier"):
        self.classifier = classifier
        self.provenance = provenance
        self.dim = 128

    @torch.no_grad()
    def __call__(self, images: torch.Tensor) -> np.ndarray:
        self.classifier.eval()
        out = []
        for lo in range(0, len(images), 64):
            out.append(self.classifier.features(images[lo : lo + 64]).cpu().numpy())
        return np.concatenate(out, axis=0)


def train_domain_classifier(
    dataset: UnpairedDataset,
    holdout: UnpairedDataset | None = None,
    epochs: int = 3,
    batch_size: int = 64,
    seed: int = 0,
    device=None,
) -> tuple[DomainClassifier, float]:
    """Train an A-vs-B classifier on the train split; labels: A=0, B=1.

    Returns (frozen classifier, held-out accuracy). Warns when that accuracy
    is below 95%, since downstream metrics become unreliable.
    """
    device = device or torch.device("cpu")
    torch.manual_seed(seed)
    clf = DomainClassifier(dataset.resolution).to(device)
    opt = torch.optim.Adam(clf.parameters(), lr=1e-3)
    bce = nn.BCELoss()
    images = np.concatenate([dataset.images_a, dataset.images_b])
    labels = np.concatenate(
        [np.zeros(dataset.n_a, dtype=np.float32), np.ones(dataset.n_b, dtype=np.float32)]
    )
    rng = np.random.default_rng(seed)
    clf.train()
    for _ in range(epochs):
        order = rng.permutation(len(images))
        for lo in range(0, len(order) - batch_size + 1, batch_size):
            idx = order[lo : lo + batch_size]
            x = torch.from_numpy(images[idx]).to(device)
            y = torch.from_numpy(labels[idx]).to(device)
            opt.zero_grad()
            loss = bce(clf(x), y)
            loss.backward()
            opt.step()
    clf.eval()
    eval_set = holdout or dataset
    acc_a = classifier_accuracy(clf, torch.from_numpy(eval_set.images_a), "A")
    acc_b = classifier_accuracy(clf, torch.from_numpy(eval_set.images_b), "B")
    accuracy = (acc_a * eval_set.n_a + acc_b * eval_set.n_b) / (eval_set.n_a + eval_set.n_b)
    if accuracy < 95.0:
        warnings.warn(
            f"domain classifier held-out accuracy {accuracy:.1f}% < 95%; "
            "classifier-based metrics may be unreliable"
        )
    return clf, accuracy


@torch.no_grad()
def classify(classifier: DomainClassifier, images: torch.Tensor) -> np.ndarray:
    """Hard labels: True means domain B."""
    classifier.eval()
    out = []
    for lo in range(0, len(images), 64):
        out.append((classifier(images[lo : lo + 64]) > 0.5).cpu().numpy())
    return np.concatenate(out)


def classifier_accuracy(classifier: DomainClassifier, images: torch.Tensor, target: str) -> float:
    """Percentage of images labeled as `target` ('A' or 'B')."""
    if target not in ("A", "B"):
        raise ValueError(f"target must be 'A' or 'B', got {target!r}")
    labels = classify(classifier, images)
    frac = np.mean(labels) if target == "B" else np.mean(~labels)
    return float(frac * 100.0)


@dataclass
class EvalReport:
    n_pairs: int = 0
    n_b: int = 0
    kid_mean: float | None = None
    kid_sd: float | None = None
    fd: float | None = None
    classifier_accuracy: float | None = None
    mean_cosine_similarity: float | None = None
    mean_iou: float | None = None
    sd_iou: float | None = None
    mask_coverage_percent: float | None = None
    per_image: list = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        d = {k: v for k, v in self.__dict__.items() if k != "per_image"}
        return json.dumps(d, sort_keys=True, indent=1)

    def table(self) -> str:
        rows = [
            ("pairs evaluated", f"{self.n_pairs}"),
            ("KID x100", _fmt_pm(self.kid_mean, self.kid_sd)),
            ("Frechet distance", _fmt(self.fd)),
            ("classified as B (%)", _fmt(self.classifier_accuracy)),
            ("cosine similarity", _fmt(self.mean_cosine_similarity)),
            ("segmentation IoU", _fmt_pm(self.mean_iou, self.sd_iou)),
            ("mask coverage (%)", _fmt(self.mask_coverage_percent)),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["pair", "cosine", "iou", "labeled_b"])
            writer.writeheader()
            for row in self.per_image:
                writer.writerow(row)


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def _fmt_pm(mean, sd):
    return "n/a" if mean is None else f"{mean:.4f} +- {sd:.4f}"


ALL_METRICS = ("kid", "fd", "classifier", "similarity", "iou", "coverage")


def evaluate(
    bundle,
    test_set: UnpairedDataset,
    classifier: DomainClassifier,
    gt_masks: np.ndarray | None = None,
    metrics=ALL_METRICS,
    max_pairs: int = 200,
    threshold: float = 0.5,
    seed: int = 0,
) -> EvalReport:
    """Run transfer over sampled held-out (a, b) pairs and compute metrics.

    `gt_masks` (N_b, H, W) enables the IoU metric on the self-masks of the
    test B images. KID/FD compare transferred outputs against real B images
    in the classifier's embedding space.
    """
    report = EvalReport()
    if not metrics:
        report.n_pairs = 0
        report.n_b = test_set.n_b
        return report
    rng = np.random.default_rng(seed)
    n_pairs = min(max_pairs, test_set.n_a * test_set.n_b)
    idx_a = rng.integers(0, test_set.n_a, n_pairs)
    idx_b = rng.integers(0, test_set.n_b, n_pairs)
    report.n_pairs = n_pairs
    report.n_b = test_set.n_b

    a = torch.from_numpy(test_set.images_a[idx_a])
    b = torch.from_numpy(test_set.images_b[idx_b])
    outputs, masks = [], []
    for lo in range(0, n_pairs, 32):
        result = transfer(bundle, a[lo : lo + 32], b[lo : lo + 32])
        outputs.append(result.output)
        masks.append(result.mask)
    outputs = torch.cat(outputs)
    masks = torch.cat(masks)

    extractor = ClassifierExtractor(classifier)
    labeled_b = classify(classifier, outputs)
    if "classifier" in metrics:
        report.classifier_accuracy = float(np.mean(labeled_b) * 100.0)
    if "kid" in metrics or "fd" in metrics:
        feats_out = extractor(outputs)
        feats_real = extractor(b)
        if "kid" in metrics:
            report.kid_mean, report.kid_sd = kid(feats_out, feats_real, seed=seed)
        if "fd" in metrics:
            report.fd = frechet_distance(feats_out, feats_real)
    cosines = [None] * n_pairs
    if "similarity" in metrics:
        feats_src = extractor(a)
        feats_out = extractor(outputs)
        cosines = [cosine_similarity(feats_src[i], feats_out[i]) for i in range(n_pairs)]
        report.mean_cosine_similarity = float(np.mean(cosines))
    if "coverage" in metrics:
        report.mask_coverage_percent = mask_coverage(masks.numpy())
    ious = [None] * n_pairs
    if "iou" in metrics and gt_masks is not None:
        b_all = torch.from_numpy(test_set.images_b)
        self_masks = []
        for lo in range(0, test_set.n_b, 32):
            self_masks.append(soft_mask(bundle, b_all[lo : lo + 32]))
        self_masks = torch.cat(self_masks).numpy()[:, 0]
        per_b = [
            iou(self_masks[i] > threshold, gt_masks[i] > 0) for i in range(test_set.n_b)
        ]
        report.mean_iou = float(np.mean(per_b))
        report.sd_iou = float(np.std(per_b))
        ious = [per_b[j] for j in idx_b]
    report.per_image = [
        {"pair": i, "cosine": cosines[i], "iou": ious[i], "labeled_b": bool(labeled_b[i])}
        for i in range(n_pairs)
    ]
    return report
