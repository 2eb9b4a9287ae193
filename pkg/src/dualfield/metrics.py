"""Quantitative evaluation of edits: PSNR, SSIM, and embedding-space metrics.

SSIM follows the reference formulation: luminance grayscale, 11x11 Gaussian
window with sigma 1.5, K1=0.01, K2=0.03, dynamic range 1, averaged over the
valid (unpadded) region.

The embedding metrics run over any embedder backend. The text-image
direction score is the raw cosine between the image-embedding difference
(edited - original) and the caption-embedding difference; the direction
consistency is the mean cosine between embeddings of renders from adjacent
camera poses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP = 99.0


class MetricError(ValueError):
    """A metric is undefined for the given inputs."""


@dataclass(frozen=True)
class CaptionPair:
    original_caption: str
    edited_caption: str

    def __post_init__(self):
        if not self.original_caption or not self.edited_caption:
            raise ValueError("captions must be non-empty")


@dataclass
class MetricReport:
    c_t2i: float
    c_dir: float
    ssim: float
    psnr: float
    per_view: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"c_t2i": self.c_t2i, "c_dir": self.c_dir, "ssim": self.ssim,
                "psnr": self.psnr, "per_view": self.per_view}


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 99."""
    a, b = _check_pair(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse < 1e-10:
        return PSNR_CAP
    return min(-10.0 * math.log10(mse), PSNR_CAP)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _local_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Separable Gaussian, then crop to the valid region.
    half = kernel.size // 2
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[half:-half, half:-half]


def to_luminance(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64) @ LUMA_WEIGHTS


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity on the luminance channel."""
    a, b = _check_pair(a, b)
    x, y = to_luminance(a), to_luminance(b)
    if min(x.shape) < SSIM_WINDOW:
        raise MetricError(f"images must be at least {SSIM_WINDOW}px per side")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_x = _local_mean(x, kernel)
    mu_y = _local_mean(y, kernel)
    var_x = _local_mean(x * x, kernel) - mu_x ** 2
    var_y = _local_mean(y * y, kernel) - mu_y ** 2
    cov = _local_mean(x * y, kernel) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(ssim_map.mean())


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise MetricError("zero vector in cosine similarity")
    return float(np.dot(a, b) / (na * nb))


def clip_t2i(original: np.ndarray, edited: np.ndarray, captions: CaptionPair,
             embedder) -> float:
    """Cosine between the image-embedding and caption-embedding directions."""
    v_img = embedder.embed_image(edited).values - embedder.embed_image(original).values
    v_text = (embedder.embed_text(captions.edited_caption).values
              - embedder.embed_text(captions.original_caption).values)
    if np.linalg.norm(v_img) == 0.0 or np.linalg.norm(v_text) == 0.0:
        raise MetricError("degenerate direction vector (identical embeddings)")
    return _cosine(v_img, v_text)


def clip_dir_consistency(renders: Sequence[np.ndarray], embedder) -> float:
    """Mean cosine of image embeddings over consecutive render pairs."""
    if len(renders) < 2:
        raise MetricError("need at least two renders for direction consistency")
    embeds = [embedder.embed_image(r).values for r in renders]
    return float(np.mean([_cosine(embeds[i], embeds[i + 1]) for i in range(len(embeds) - 1)]))


def evaluate_edit(originals: Sequence[np.ndarray], edits: Sequence[np.ndarray],
                  captions: CaptionPair, embedder) -> MetricReport:
    """Full report over paired original/edited view sets.

    Views whose edit direction is degenerate in embedding space (edit equals
    the original) carry no alignment signal; their c_t2i is reported as null
    and excluded from the aggregate, which falls back to 0 when every view is
    degenerate.
    """
    if len(originals) != len(edits) or not originals:
        raise MetricError("need equal non-empty original and edited sets")
    per_view = []
    for i, (orig, edit) in enumerate(zip(originals, edits)):
        try:
            t2i = clip_t2i(orig, edit, captions, embedder)
        except MetricError:
            t2i = None
        per_view.append({
            "view": i,
            "psnr": psnr(orig, edit),
            "ssim": ssim(orig, edit),
            "c_t2i": t2i,
        })
    c_dir = (clip_dir_consistency(list(edits), embedder) if len(edits) >= 2
             else 1.0)
    defined = [v["c_t2i"] for v in per_view if v["c_t2i"] is not None]
    return MetricReport(
        c_t2i=float(np.mean(defined)) if defined else 0.0,
        c_dir=c_dir,
        ssim=float(np.mean([v["ssim"] for v in per_view])),
        psnr=float(np.mean([v["psnr"] for v in per_view])),
        per_view=per_view)
