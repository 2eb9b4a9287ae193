"""Image file IO: 8-bit PNG for interchange, raw float32 dumps for bit-exact work.

PNG values map to floats by k/255; writing quantizes with round(255*x) after
clamping to [0, 1]. The IMGF dump is little-endian float32 with a 16-byte
header (magic "IMGF", u32 height, u32 width, u32 channels) and exists so
renders can be compared or reloaded without quantization loss.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

IMGF_MAGIC = b"IMGF"


class ImageFormatError(ValueError):
    """Raised for unreadable or malformed image files."""


def read_png(path: str | Path) -> np.ndarray:
    """Load a PNG as float32 HxWx3 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"cannot decode image file {path}: {exc}") from exc
    return arr / np.float32(255.0)


def write_png(path: str | Path, image: np.ndarray) -> None:
    """Write an HxWx3 float image in [0, 1] as 8-bit PNG."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected HxWx3 image, got shape {img.shape}")
    data = np.rint(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def write_imgf(path: str | Path, image: np.ndarray) -> None:
    """Write an HxWx3 float image as a lossless little-endian f32 dump."""
    img = np.ascontiguousarray(image, dtype="<f4")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected HxWx3 image, got shape {img.shape}")
    h, w, c = img.shape
    with open(path, "wb") as f:
        f.write(IMGF_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(img.tobytes())


def read_imgf(path: str | Path) -> np.ndarray:
    """Load an IMGF dump written by write_imgf."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != IMGF_MAGIC:
            raise ImageFormatError(f"not an IMGF file: {path}")
        h, w, c = struct.unpack("<III", header[4:])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != h * w * c:
        raise ImageFormatError(f"truncated IMGF file: {path}")
    return data.reshape(h, w, c).copy()


def quantize_unit(image: np.ndarray) -> np.ndarray:
    """Snap a float image to the 8-bit grid (k/255), matching PNG round-trip."""
    return (np.rint(255.0 * np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)) / 255.0).astype(np.float32)
