"""Pluggable 2D editor and embedding backends, plus the consistency indicator.

Two synthetic editors make the editing loop testable offline:

* the oracle editor applies a fixed, prompt-keyed color transform to the
  ORIGINAL image (ignoring the render), so its targets are multi-view
  consistent by construction;
* the sticky editor only performs the oracle edit while the render still
  looks like the original (mean absolute difference below a threshold) and
  otherwise parrots the render back, reproducing the editor/trainer mutual
  reinforcement that traps plain dataset-update loops in local optima.

The HTTP backend speaks the model-backend-service protocol (base64 PNG over
JSON) for running against a real editor/encoder service.
"""

from __future__ import annotations

import base64
import hashlib
import io
from dataclasses import dataclass

import numpy as np



class BackendError(Exception):
    """Editing or embedding backend failure."""


class ScoringError(ValueError):
    """Consistency score could not be computed (degenerate embedding)."""


@dataclass(frozen=True)
class EditorConfig:
    prompt: str
    s_image: float = 1.5
    s_text: float = 7.5
    steps: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.s_image <= 0.0 or self.s_text <= 0.0:
            raise ValueError("guidance weights must be positive")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", vals)
        if not np.all(np.isfinite(vals)):
            raise ValueError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _check_resolution(original: np.ndarray, render: np.ndarray) -> None:
    if original.shape != render.shape:
        raise ValueError(f"image shapes differ: {original.shape} vs {render.shape}")


# ---------------------------------------------------------------------------
# Prompt registry: linear channel mixes (zero-preserving, [0,1]-preserving)
# plus an optional mask derived from the original image.
# ---------------------------------------------------------------------------

def _mask_all(image: np.ndarray) -> np.ndarray:
    return np.ones(image.shape[:2], dtype=bool)


def _mask_bright(image: np.ndarray) -> np.ndarray:
    luma = image @ np.array([0.299, 0.587, 0.114])
    return luma > 0.15


_LUMA = np.array([0.299, 0.587, 0.114])

PROMPT_TRANSFORMS = {
    "identity": (np.eye(3), _mask_all),
    "swap-rb": (np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]), _mask_all),
    "grayscale": (np.tile(_LUMA, (3, 1)), _mask_all),
    "darken": (0.5 * np.eye(3), _mask_all),
    "redshift": (np.array([[0.7, 0.2, 0.1], [0.05, 0.45, 0.0], [0.05, 0.0, 0.35]]), _mask_all),
    "tint-object-red": (np.array([[0.8, 0.1, 0.1], [0.1, 0.3, 0.0], [0.1, 0.0, 0.3]]), _mask_bright),
}


def oracle_edit(original: np.ndarray, prompt: str) -> np.ndarray:
    """The target edit for a prompt: masked linear color transform of the original."""
    try:
        matrix, mask_fn = PROMPT_TRANSFORMS[prompt]
    except KeyError:
        raise BackendError(f"no synthetic transform registered for prompt {prompt!r}; "
                           f"known prompts: {sorted(PROMPT_TRANSFORMS)}")
    img = np.asarray(original, dtype=np.float64)
    out = img.copy()
    mask = mask_fn(img)
    out[mask] = img[mask] @ matrix.T
    return out.astype(original.dtype, copy=False)


class OracleEditor:
    """Deterministic, multi-view-consistent editor; ignores the render."""

    name = "synthetic-oracle"
    deterministic = True

    def edit(self, original: np.ndarray, render: np.ndarray, config: EditorConfig) -> np.ndarray:
        _check_resolution(original, render)
        return oracle_edit(original, config.prompt)


class StickyEditor:
    """Editor that reinforces whatever the model already shows.

    Performs the true edit only when the render is close to the original
    (mean absolute difference < tau); otherwise returns the render unchanged.
    """

    name = "synthetic-sticky"
    deterministic = True

    def __init__(self, tau: float = 0.05):
        self.tau = tau

    def edit(self, original: np.ndarray, render: np.ndarray, config: EditorConfig) -> np.ndarray:
        _check_resolution(original, render)
        mad = float(np.abs(np.asarray(render, dtype=np.float64)
                           - np.asarray(original, dtype=np.float64)).mean())
        if mad < self.tau:
            return oracle_edit(original, config.prompt)
        return render


class ToyEmbedder:
    """Deterministic 27-dim embedder: 8-bin channel histograms + mean color.

    Text embeds as a unit vector expanded from a content hash, so identical
    strings always map to the same direction.
    """

    name = "toy"
    deterministic = True
    dim = 27

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected HxWx3 image, got {img.shape}")
        parts = [np.histogram(img[..., ch], bins=8, range=(0.0, 1.0))[0] / img[..., ch].size
                 for ch in range(3)]
        parts.append(img.reshape(-1, 3).mean(axis=0))
        return EmbeddingVector(np.concatenate(parts))

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("text must be non-empty")
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(int.from_bytes(digest[:8], "little"))))
        vec = rng.standard_normal(self.dim)
        return EmbeddingVector(vec / np.linalg.norm(vec))


# ---------------------------------------------------------------------------
# HTTP adapter for the model-backend service
# ---------------------------------------------------------------------------

def encode_png_b64(image: np.ndarray) -> str:
    from PIL import Image

    data = np.rint(255.0 * np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_b64(payload: str) -> np.ndarray:
    from PIL import Image

    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    with Image.open(io.BytesIO(raw)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / np.float32(255.0)


class HttpBackend:
    """Editor + embedder served over HTTP (see the service wire protocol)."""

    deterministic = False

    def __init__(self, endpoint: str, timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.name = f"http:{self.endpoint}"

    def _post(self, route: str, payload: dict) -> dict:
        import requests

        url = f"{self.endpoint}{route}"
        try:
            resp = requests.post(url, json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendError(f"backend unreachable at {url}: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"backend {url} returned {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def edit(self, original: np.ndarray, render: np.ndarray, config: EditorConfig) -> np.ndarray:
        _check_resolution(original, render)
        body = self._post("/edit", {
            "original": encode_png_b64(original),
            "render": encode_png_b64(render),
            "prompt": config.prompt,
            "s_image": config.s_image,
            "s_text": config.s_text,
            "steps": config.steps,
            "seed": config.seed,
        })
        edited = decode_png_b64(body["image"])
        if edited.shape != original.shape:
            raise BackendError("backend returned an image with a different resolution")
        return edited

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        body = self._post("/embed_image", {"image": encode_png_b64(image)})
        return EmbeddingVector(np.asarray(body["values"], dtype=np.float64))

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("text must be non-empty")
        body = self._post("/embed_text", {"text": text})
        return EmbeddingVector(np.asarray(body["values"], dtype=np.float64))


def make_editor(name: str, endpoint: str | None = None, tau: float = 0.05):
    if name == "synthetic-oracle":
        return OracleEditor()
    if name == "synthetic-sticky":
        return StickyEditor(tau=tau)
    if name == "http":
        if not endpoint:
            raise ValueError("http backend requires an endpoint URL")
        return HttpBackend(endpoint)
    raise ValueError(f"unknown editor backend {name!r}")


def make_embedder(name: str, endpoint: str | None = None):
    if name == "toy":
        return ToyEmbedder()
    if name == "http":
        if not endpoint:
            raise ValueError("http backend requires an endpoint URL")
        return HttpBackend(endpoint)
    raise ValueError(f"unknown embedder backend {name!r}")


# ---------------------------------------------------------------------------
# Consistency indicator
# ---------------------------------------------------------------------------

def _ncos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ScoringError("zero-norm embedding in consistency score")
    return (float(np.dot(a, b) / (na * nb)) + 1.0) / 2.0


def consistency_score(edited: np.ndarray, original: np.ndarray,
                      config: EditorConfig, embedder) -> float:
    """Edit reliability in [0, 1]: agreement with the original image times
    agreement with the prompt, each as a cosine mapped onto [0, 1]."""
    _check_resolution(edited, original)
    e_edit = embedder.embed_image(edited).values
    e_orig = embedder.embed_image(original).values
    e_text = embedder.embed_text(config.prompt).values
    return _ncos(e_edit, e_orig) * _ncos(e_edit, e_text)
