"""Editor and embedder model wrappers.

Stub mode serves deterministic fakes so the wire protocol can be exercised
without GPU weights: the edit endpoint returns the original image unchanged
and the embedder is a unit-normalized color-histogram descriptor. Real mode
lazily loads a diffusion instruction-editor and a contrastive image/text
encoder from the hub if the optional dependencies are installed.
"""

from __future__ import annotations

import base64
import binascii
import io
import threading

import numpy as np
from PIL import Image


class ImagePayloadError(ValueError):
    """Base64 or PNG decoding failed for a request image field."""


def decode_image(field: str, payload: str) -> Image.Image:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ImagePayloadError(f"field {field!r} is not valid base64: {exc}") from exc
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise ImagePayloadError(f"field {field!r} is not a decodable image: {exc}") from exc
    return img.convert("RGB")


def encode_image(img: Image.Image) -> str:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class StubEditor:
    """Identity editor: returns the original image at the same resolution."""

    name = "stub-identity"

    def edit(self, original: Image.Image, render: Image.Image, prompt: str,
             s_image: float, s_text: float, steps: int, seed: int) -> Image.Image:
        return original


class StubEmbedder:
    """Histogram embedder: per-channel 8-bin histograms plus mean color,
    unit-normalized. Deterministic and resolution-independent."""

    name = "stub-histogram"
    dim = 27

    def embed_image(self, image: Image.Image) -> np.ndarray:
        arr = np.asarray(image, dtype=np.float64) / 255.0
        parts = [np.histogram(arr[..., ch], bins=8, range=(0.0, 1.0))[0] / arr[..., ch].size
                 for ch in range(3)]
        parts.append(arr.reshape(-1, 3).mean(axis=0))
        vec = np.concatenate(parts)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_text(self, text: str) -> np.ndarray:
        import hashlib

        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(int.from_bytes(digest[:8], "little"))))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)


class RealEditor:
    """Instruction-conditioned diffusion editor loaded from the hub.

    Requires the optional `real` extra (torch + diffusers); loading happens
    on first construction and can take minutes.
    """

    name = "diffusion-instruct"

    def __init__(self, model_id: str = "timbrooks/instruct-pix2pix"):
        import torch
        from diffusers import StableDiffusionInstructPix2PixPipeline

        self._torch = torch
        self.pipe = StableDiffusionInstructPix2PixPipeline.from_pretrained(
            model_id, torch_dtype=torch.float16 if torch.cuda.is_available() else torch.float32)
        self.pipe.to("cuda" if torch.cuda.is_available() else "cpu")

    def edit(self, original: Image.Image, render: Image.Image, prompt: str,
             s_image: float, s_text: float, steps: int, seed: int) -> Image.Image:
        generator = self._torch.Generator(device=self.pipe.device).manual_seed(seed)
        out = self.pipe(prompt, image=render, num_inference_steps=steps,
                        image_guidance_scale=s_image, guidance_scale=s_text,
                        generator=generator)
        return out.images[0].resize(original.size)


class RealEmbedder:
    """Contrastive image/text encoder (CLIP family) loaded from the hub."""

    name = "contrastive-encoder"

    def __init__(self, model_id: str = "openai/clip-vit-large-patch14"):
        from transformers import CLIPModel, CLIPProcessor

        self.model = CLIPModel.from_pretrained(model_id)
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.dim = self.model.config.projection_dim

    def embed_image(self, image: Image.Image) -> np.ndarray:
        inputs = self.processor(images=image, return_tensors="pt")
        feats = self.model.get_image_features(**inputs).detach().numpy()[0]
        return feats / np.linalg.norm(feats)

    def embed_text(self, text: str) -> np.ndarray:
        inputs = self.processor(text=[text], return_tensors="pt", padding=True)
        feats = self.model.get_text_features(**inputs).detach().numpy()[0]
        return feats / np.linalg.norm(feats)


class ModelRegistry:
    """Holds the (lazily) loaded models and serializes access to each."""

    def __init__(self, mode: str = "stub"):
        if mode not in ("stub", "real"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.editor = None
        self.embedder = None
        self.editor_lock = threading.Lock()
        self.embedder_lock = threading.Lock()

    def load(self) -> None:
        if self.mode == "stub":
            self.editor = StubEditor()
            self.embedder = StubEmbedder()
            return
        try:
            self.editor = RealEditor()
            self.embedder = RealEmbedder()
        except ImportError as exc:
            raise RuntimeError(
                "real mode needs the optional dependencies: pip install "
                "'model-backend-service[real]'") from exc
