"""Dual-field voxel representation.

Each field is a dense lattice over [-1, 1]^3 holding pre-activation hidden
features per vertex: a scalar density feature and a 3-vector color feature.
Field evaluation is trilinear interpolation; a static (frozen) and a dynamic
(trainable) grid are blended at the hidden-feature level by weights that grow
as w_max * tanh(rate * t) and can be scaled down jointly by a retreat factor
gamma in [0, 1]. Decoding to (density, rgb) uses a truncated exponential and
a sigmoid.

Features are stored as float32 (the checkpoint wire type) and promoted to
float64 for arithmetic, so save/load round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .scene import DOMAIN_MAX, DOMAIN_MIN

CHECKPOINT_MAGIC = b"DFN1"
FLAG_STATIC = 0x01
FLAG_DYNAMIC = 0x02

# Pre-activation density features are clamped here before exp() so the
# decoder can never overflow; never binding in normal training.
SIGMA_CLAMP = 15.0
# Color pre-activations clamp where float64 sigmoid still stays strictly
# inside (0, 1); beyond +-36 it would round to exactly 0 or 1.
COLOR_CLAMP = 36.0


class CheckpointError(Exception):
    """Unreadable or malformed checkpoint file."""


@dataclass
class FeatureGrid:
    """Dense vertex lattice of hidden features over the domain cube."""

    density: np.ndarray  # (Nx, Ny, Nz) float32, pre-activation
    color: np.ndarray  # (Nx, Ny, Nz, 3) float32, pre-activation

    def __post_init__(self):
        self.density = np.ascontiguousarray(self.density, dtype=np.float32)
        self.color = np.ascontiguousarray(self.color, dtype=np.float32)
        if self.density.ndim != 3 or self.color.shape != self.density.shape + (3,):
            raise ValueError("density must be (Nx,Ny,Nz) and color (Nx,Ny,Nz,3)")
        if min(self.density.shape) < 2:
            raise ValueError("grid needs at least 2 vertices per axis")
        if not (np.all(np.isfinite(self.density)) and np.all(np.isfinite(self.color))):
            raise ValueError("grid features must be finite")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.density.shape

    @classmethod
    def zeros(cls, resolution: tuple[int, int, int], density_init: float = 0.0) -> "FeatureGrid":
        nx, ny, nz = resolution
        return cls(np.full((nx, ny, nz), density_init, dtype=np.float32),
                   np.zeros((nx, ny, nz, 3), dtype=np.float32))

    def copy(self) -> "FeatureGrid":
        return FeatureGrid(self.density.copy(), self.color.copy())


def blend_weight(t: float, w_max: float, rate: float) -> float:
    """Schedule w(t) = w_max * tanh(rate * t): 0 at t=0, saturating at w_max."""
    if t < 0:
        raise ValueError("iteration count must be nonnegative")
    if not (0.0 <= w_max <= 1.0):
        raise ValueError("w_max must lie in [0, 1]")
    if rate <= 0.0:
        raise ValueError("growth rate must be positive")
    return w_max * float(np.tanh(rate * t))


@dataclass
class BlendState:
    """Blend-weight schedule plus the annealing scaler state."""

    w_max_sigma: float = 0.1
    w_max_c: float = 0.1
    rate: float = 0.005
    t: int = 0
    gamma: float = 1.0  # most recent retreat scaler
    t0: float = 1.0  # annealing start temperature

    def w_sigma(self) -> float:
        return blend_weight(self.t, self.w_max_sigma, self.rate)

    def w_c(self) -> float:
        return blend_weight(self.t, self.w_max_c, self.rate)


@dataclass
class DualFieldModel:
    static: FeatureGrid
    dynamic: FeatureGrid
    blend: BlendState

    def __post_init__(self):
        if self.static.resolution != self.dynamic.resolution:
            raise ValueError("static and dynamic grids must share a resolution")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.static.resolution


def init_model(resolution: tuple[int, int, int] = (64, 64, 64),
               density_init: float = -3.0,
               blend: BlendState | None = None) -> DualFieldModel:
    """Fresh model: mildly transparent static grid, all-zero dynamic grid."""
    return DualFieldModel(
        static=FeatureGrid.zeros(resolution, density_init=density_init),
        dynamic=FeatureGrid.zeros(resolution),
        blend=blend if blend is not None else BlendState(),
    )


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stencil:
    """Per-point trilinear cell coordinates against one grid resolution."""

    base: np.ndarray  # (M,) flattened low-corner vertex index
    fx: np.ndarray  # (M,) within-cell coordinates
    fy: np.ndarray
    fz: np.ndarray
    resolution: tuple[int, int, int]


def point_stencil(resolution: tuple[int, int, int], pts: np.ndarray) -> Stencil:
    """Locate points in the lattice; errors for points outside the domain."""
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (M, 3)")
    eps = 1e-9
    if np.any(pts < DOMAIN_MIN - eps) or np.any(pts > DOMAIN_MAX + eps):
        raise ValueError("point outside the domain cube [-1, 1]^3")
    nx, ny, nz = resolution
    res = np.array([nx, ny, nz], dtype=np.float64)
    u = (pts - DOMAIN_MIN) / (DOMAIN_MAX - DOMAIN_MIN) * (res - 1.0)
    base = np.floor(u).astype(np.int64)
    np.clip(base, 0, [nx - 2, ny - 2, nz - 2], out=base)
    frac = u - base
    base_flat = (base[:, 0] * ny + base[:, 1]) * nz + base[:, 2]
    return Stencil(base=base_flat, fx=np.ascontiguousarray(frac[:, 0]),
                   fy=np.ascontiguousarray(frac[:, 1]),
                   fz=np.ascontiguousarray(frac[:, 2]),
                   resolution=(nx, ny, nz))


def grid_features_at(grid: FeatureGrid, stencil: Stencil) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate vertex features for a precomputed stencil (float64 out)."""
    _, ny, nz = stencil.resolution
    return kernels.trilerp_gather(grid.density.reshape(-1), grid.color.reshape(-1, 3),
                                  stencil.base, stencil.fx, stencil.fy, stencil.fz, ny, nz)


def scatter_features(grad_density: np.ndarray, grad_color: np.ndarray, stencil: Stencil,
                     d_h_sigma: np.ndarray, d_h_c: np.ndarray) -> None:
    """Adjoint of grid_features_at: accumulate into vertex-shaped grad arrays."""
    _, ny, nz = stencil.resolution
    kernels.trilerp_scatter(grad_density.reshape(-1), grad_color.reshape(-1, 3),
                            stencil.base, stencil.fx, stencil.fy, stencil.fz,
                            np.ascontiguousarray(d_h_sigma),
                            np.ascontiguousarray(d_h_c), ny, nz)


def sample_features(grid: FeatureGrid, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Trilinear field evaluation at one point inside the domain."""
    h_sigma, h_c = sample_features_many(grid, np.asarray(x, dtype=np.float64).reshape(1, 3))
    return float(h_sigma[0]), h_c[0]


def sample_features_many(grid: FeatureGrid, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return grid_features_at(grid, point_stencil(grid.resolution, pts))


# ---------------------------------------------------------------------------
# Fusion and decoding
# ---------------------------------------------------------------------------

def fuse(h_static: np.ndarray | float, h_dynamic: np.ndarray | float, w: float) -> np.ndarray | float:
    """Hidden-feature blend (1 - w) * static + w * dynamic."""
    hs = np.asarray(h_static, dtype=np.float64)
    hd = np.asarray(h_dynamic, dtype=np.float64)
    if hs.shape != hd.shape:
        raise ValueError(f"feature shapes differ: {hs.shape} vs {hd.shape}")
    out = (1.0 - w) * hs + w * hd
    return float(out) if out.ndim == 0 else out


def decode(h_sigma: np.ndarray | float, h_c: np.ndarray) -> tuple[np.ndarray | float, np.ndarray]:
    """Activate hidden features: truncated exp for density, sigmoid for color."""
    sigma = np.exp(np.clip(h_sigma, -SIGMA_CLAMP, SIGMA_CLAMP))
    h_c = np.clip(np.asarray(h_c, dtype=np.float64), -COLOR_CLAMP, COLOR_CLAMP)
    rgb = 1.0 / (1.0 + np.exp(-h_c))
    if np.ndim(h_sigma) == 0:
        return float(sigma), rgb
    return sigma, rgb


def effective_weights(blend: BlendState, gamma: float) -> tuple[float, float]:
    """Retreated blend weights (gamma * w_sigma, gamma * w_c)."""
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("gamma must lie in [0, 1]")
    return gamma * blend.w_sigma(), gamma * blend.w_c()


def query_many(model: DualFieldModel, pts: np.ndarray, gamma: float = 1.0,
               ) -> tuple[np.ndarray, np.ndarray]:
    """Fused field evaluation: sample both grids, blend, decode."""
    w_sigma, w_c = effective_weights(model.blend, gamma)
    stencil = point_stencil(model.resolution, pts)
    hs_sigma, hs_c = grid_features_at(model.static, stencil)
    if w_sigma == 0.0 and w_c == 0.0:
        return decode(hs_sigma, hs_c)
    hd_sigma, hd_c = grid_features_at(model.dynamic, stencil)
    return decode(fuse(hs_sigma, hd_sigma, w_sigma), fuse(hs_c, hd_c, w_c))


def query(model: DualFieldModel, x: np.ndarray, gamma: float = 1.0) -> tuple[float, np.ndarray]:
    sigma, rgb = query_many(model, np.asarray(x, dtype=np.float64).reshape(1, 3), gamma)
    return float(sigma[0]), rgb[0]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: DualFieldModel, path: str | Path) -> None:
    """Binary checkpoint; see README for the exact layout.

    Layout: magic "DFN1"; u32 x3 resolution; u8 grid-presence flags; six f64
    blend scalars (w_max_sigma, w_max_c, rate, t, gamma, t0); then per grid
    (static, dynamic) the density and color features as little-endian f32 in
    x-major (C) order.
    """
    nx, ny, nz = model.resolution
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<III", nx, ny, nz))
        f.write(struct.pack("<B", FLAG_STATIC | FLAG_DYNAMIC))
        b = model.blend
        f.write(struct.pack("<6d", b.w_max_sigma, b.w_max_c, b.rate, float(b.t), b.gamma, b.t0))
        for grid in (model.static, model.dynamic):
            f.write(np.ascontiguousarray(grid.density, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(grid.color, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> DualFieldModel:
    with open(path, "rb") as f:
        header = f.read(65)
        if len(header) < 65 or header[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad or truncated header in {path}")
        nx, ny, nz = struct.unpack_from("<III", header, 4)
        (flags,) = struct.unpack_from("<B", header, 16)
        vals = struct.unpack_from("<6d", header, 17)
        blend = BlendState(w_max_sigma=vals[0], w_max_c=vals[1], rate=vals[2],
                           t=int(vals[3]), gamma=vals[4], t0=vals[5])
        n = nx * ny * nz

        def read_grid() -> FeatureGrid:
            density = np.frombuffer(f.read(4 * n), dtype="<f4")
            color = np.frombuffer(f.read(12 * n), dtype="<f4")
            if density.size != n or color.size != 3 * n:
                raise CheckpointError(f"truncated checkpoint {path}")
            return FeatureGrid(density.reshape(nx, ny, nz).copy(),
                               color.reshape(nx, ny, nz, 3).copy())

        static = read_grid() if flags & FLAG_STATIC else FeatureGrid.zeros((nx, ny, nz))
        dynamic = read_grid() if flags & FLAG_DYNAMIC else FeatureGrid.zeros((nx, ny, nz))
    return DualFieldModel(static=static, dynamic=dynamic, blend=blend)


def with_blend(model: DualFieldModel, **changes) -> DualFieldModel:
    """Model sharing the same grids with an updated blend state."""
    return DualFieldModel(model.static, model.dynamic, replace(model.blend, **changes))
