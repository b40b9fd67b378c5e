"""Realism (Frechet distance of feature statistics) and eye-area diversity scores."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .imagekit import DEFAULT_BOX, EyeBox, FaceImage, crop_eye_region

log = logging.getLogger(__name__)

NEG_TRACE_TOL = 1e-6


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"cov shape {self.cov.shape} does not match mean dim {d}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise ValueError("cov is not symmetric")
        if self.n < 2:
            raise ValueError("need n >= 2 samples")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _as_batch(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        return images.unsqueeze(0) if images.dim() == 3 else images
    return torch.stack([im.pixels if isinstance(im, FaceImage) else im for im in images])


# --- backends -------------------------------------------------------------------

class RandomProjectionBackend:
    """Deterministic test features: pooled pixels times a fixed seeded Gaussian matrix."""

    def __init__(self, dim: int = 64, pool: int = 16, seed: int = 0):
        self.name = "random-projection"
        self.dim = dim
        self.pool = pool
        rng = np.random.default_rng(seed)
        n_in = 3 * pool * pool
        self.weight = rng.standard_normal((n_in, dim)) / np.sqrt(n_in)

    def extract(self, images) -> np.ndarray:
        x = _as_batch(images).detach().to(torch.float64)
        x = F.adaptive_avg_pool2d(x, self.pool).flatten(1).numpy()
        return x @ self.weight


class InceptionBackend:
    """Pool features of an ImageNet Inception-v3 (needs torchvision weights available locally)."""

    def __init__(self):
        from torchvision.models import Inception_V3_Weights, inception_v3

        self.name = "inception"
        self.dim = 2048
        self.net = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1, aux_logits=True)
        self.net.fc = torch.nn.Identity()
        self.net.eval()
        self.mean = torch.tensor([0.485, 0.456, 0.406])[:, None, None]
        self.std = torch.tensor([0.229, 0.224, 0.225])[:, None, None]

    def extract(self, images) -> np.ndarray:
        x = _as_batch(images).detach().float()
        x = F.interpolate((x + 1) / 2, size=(299, 299), mode="bilinear", align_corners=False)
        with torch.no_grad():
            feats = self.net((x - self.mean) / self.std)
        return feats.double().numpy()


class BlurL1Perceptual:
    """Test perceptual distance: mean absolute difference averaged over box-blur scales."""

    def __init__(self, scales: int = 3):
        self.name = "blur-l1"
        self.scales = scales

    def distance(self, a, b) -> float:
        x = _as_batch(a).to(torch.float64)
        y = _as_batch(b).to(torch.float64)
        if x.shape != y.shape:
            raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
        total, used = 0.0, 0
        for s in range(self.scales):
            k = 2 ** s
            if min(x.shape[-2:]) < k:
                break
            xs = F.avg_pool2d(x, k, stride=1) if k > 1 else x
            ys = F.avg_pool2d(y, k, stride=1) if k > 1 else y
            total += float((xs - ys).abs().mean())
            used += 1
        return total / used


class LPIPSPerceptual:
    """Learned perceptual distance from the ``lpips`` package, if installed."""

    def __init__(self, net: str = "alex"):
        import lpips

        self.name = f"lpips-{net}"
        self.model = lpips.LPIPS(net=net, verbose=False)

    def distance(self, a, b) -> float:
        with torch.no_grad():
            return float(self.model(_as_batch(a).float(), _as_batch(b).float()).mean())


FEATURE_BACKENDS: dict[str, Callable] = {
    "random-projection": RandomProjectionBackend,
    "inception": InceptionBackend,
}
PERCEPTUAL_BACKENDS: dict[str, Callable] = {
    "blur-l1": BlurL1Perceptual,
    "lpips": LPIPSPerceptual,
}


def feature_backend(name: str):
    try:
        return FEATURE_BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown feature backend {name!r}; have {sorted(FEATURE_BACKENDS)}") from None


def perceptual_backend(name: str):
    try:
        return PERCEPTUAL_BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown perceptual backend {name!r}; have {sorted(PERCEPTUAL_BACKENDS)}") from None


# --- Frechet distance -------------------------------------------------------------

def stats_from_features(feats: np.ndarray) -> FeatureStats:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError("need at least 2 feature rows")
    cov = np.cov(feats, rowvar=False, ddof=1)
    return FeatureStats(feats.mean(axis=0), 0.5 * (np.atleast_2d(cov) + np.atleast_2d(cov).T), feats.shape[0])


def feature_stats(backend, images) -> FeatureStats:
    x = _as_batch(images)
    if x.shape[0] < 2:
        raise ValueError("feature statistics need at least 2 images")
    return stats_from_features(backend.extract(x))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def _trace_sqrt_product(c1: np.ndarray, c2: np.ndarray) -> float:
    # Tr((C1 C2)^1/2) = Tr((S C2 S)^1/2) with S = C1^1/2; the inner matrix is symmetric PSD
    s = _psd_sqrt(c1)
    inner = s @ c2 @ s
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    return float(np.sqrt(np.clip(vals, 0, None)).sum())


def frechet_distance(s1: FeatureStats, s2: FeatureStats, jitter: float = 1e-6) -> float:
    """``|mu1 - mu2|^2 + Tr(C1 + C2 - 2 (C1 C2)^1/2)``."""
    if s1.dim != s2.dim:
        raise ValueError(f"feature dims differ: {s1.dim} vs {s2.dim}")
    diff = s1.mean - s2.mean
    c1, c2 = s1.cov, s2.cov
    tr = _trace_sqrt_product(c1, c2)
    if not np.isfinite(tr):
        eye = np.eye(s1.dim) * jitter
        log.warning("matrix square root not finite; retrying with jitter %g", jitter)
        tr = _trace_sqrt_product(c1 + eye, c2 + eye)
        if not np.isfinite(tr):
            raise ArithmeticError("matrix square root failed after jitter")
    fd = float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * tr)
    if fd < 0:
        if fd < -NEG_TRACE_TOL * max(1.0, np.trace(c1) + np.trace(c2)):
            raise ArithmeticError(f"Frechet distance came out negative ({fd})")
        fd = 0.0
    return fd


def fid_between_sets(backend, set1, set2) -> float:
    return frechet_distance(feature_stats(backend, set1), feature_stats(backend, set2))


# --- eye-area diversity -------------------------------------------------------------

Generator = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def _as_generator(state, direction: str) -> Generator:
    if callable(state) and not isinstance(state, torch.nn.Module):
        return state
    from .trainer import remove_glasses, wear_glasses

    fn = remove_glasses if direction == "removal" else wear_glasses
    return lambda img, ex: fn(state, img, ex, strict=False).pixels


def elpips_diversity(perceptual, state, inputs, exemplars, n_exemplars: int = 10,
                     box: EyeBox = DEFAULT_BOX, direction: str = "removal") -> float:
    """Mean pairwise eye-crop perceptual distance among exemplar-guided outputs.

    Every input is rendered with the first ``n_exemplars`` exemplars; the
    distance is averaged over unordered output pairs, then over inputs.
    ``state`` is a trained state/bundle or any ``(img, exemplar) -> img``
    callable.
    """
    if n_exemplars < 2:
        raise ValueError("n_exemplars must be >= 2")
    ex = _as_batch(exemplars)
    if ex.shape[0] < n_exemplars:
        raise ValueError(f"only {ex.shape[0]} exemplars for n_exemplars={n_exemplars}")
    generate = _as_generator(state, direction)
    xs = _as_batch(inputs)
    scores = []
    for x in xs:
        crops = [crop_eye_region(generate(x, ex[k]), box) for k in range(n_exemplars)]
        pair = [perceptual.distance(crops[i], crops[j])
                for i, j in itertools.combinations(range(n_exemplars), 2)]
        scores.append(float(np.mean(pair)))
    return float(np.mean(scores))


def _paired_outputs(bundle, inputs, exemplars, direction: str) -> torch.Tensor:
    from .trainer import remove_glasses, wear_glasses

    fn = remove_glasses if direction == "removal" else wear_glasses
    return torch.stack([fn(bundle, x, exemplars[i % exemplars.shape[0]]).pixels for i, x in enumerate(inputs)])


def evaluate(bundle, held_a: torch.Tensor, held_b: torch.Tensor, features, perceptual,
             n_exemplars: int = 10, box: Optional[EyeBox] = None) -> dict:
    """Realism and diversity report for both directions on held-out images.

    Removal outputs of held-out A images (exemplar ``i`` is held-out B image
    ``i mod |B|``) are compared against real held-out B images, and
    wearing outputs against real held-out A images.
    """
    box = box or bundle.box
    removal = _paired_outputs(bundle, held_a, held_b, "removal")
    wearing = _paired_outputs(bundle, held_b, held_a, "wearing")
    n_ex = min(n_exemplars, held_a.shape[0], held_b.shape[0])
    return {
        "backend": f"{features.name}/{perceptual.name}",
        "fid_wearing": fid_between_sets(features, wearing, held_a),
        "fid_removal": fid_between_sets(features, removal, held_b),
        "elpips_wearing": elpips_diversity(perceptual, bundle, held_b, held_a, n_ex, box, "wearing"),
        "elpips_removal": elpips_diversity(perceptual, bundle, held_a, held_b, n_ex, box, "removal"),
        "n_images": int(held_a.shape[0] + held_b.shape[0]),
        "n_exemplars": int(n_ex),
    }
