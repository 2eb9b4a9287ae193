"""Differentiable volume rendering over the dual-field model.

Per ray: N samples on [near, far], transmittance T_i = exp(-sum_{j<i} d_j s_j),
per-sample weight w_i = T_i (1 - exp(-d_i s_i)), pixel color
sum_i w_i c_i + T_{N+1} * background. The final delta is the bin width so the
identity sum_i w_i + T_{N+1} = 1 holds exactly.

Stratified jitter is drawn from counter-based per-pixel streams (seed hashed
with pixel coordinates), so images are independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Iterable

import numpy as np

from . import kernels
from .field import (DualFieldModel, Stencil, decode, effective_weights, fuse,
                    grid_features_at, point_stencil)
from .scene import CameraPose, Ray, camera_ray_grid, intersect_aabb
from .util import hash_u01

DEFAULT_TRAIN_SAMPLES = 64
DEFAULT_RENDER_SAMPLES = 128
_CHUNK_RAYS = 16384


@dataclass(frozen=True)
class RaySamples:
    ts: np.ndarray  # (N,), strictly increasing within [near, far]
    positions: np.ndarray  # (N, 3)
    deltas: np.ndarray  # (N,), positive; last entry is the bin width


@dataclass(frozen=True)
class CompositeResult:
    color: np.ndarray  # (3,)
    weights: np.ndarray  # (N,)
    transmittances: np.ndarray  # (N,), T_1 = 1
    residual_transmittance: float


@dataclass
class RenderOptions:
    n_samples: int = DEFAULT_RENDER_SAMPLES
    gamma: float = 1.0
    background: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    seed: int = 0
    strategy: str = "uniform"


def _sample_ts(nears: np.ndarray, fars: np.ndarray, n: int,
               jitter: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Bin sampling for a batch of rays: ts (B, N) and deltas (B, N)."""
    span = (fars - nears)[:, None]
    offsets = (np.full((1, n), 0.5) if jitter is None else jitter)
    ts = nears[:, None] + span * (np.arange(n)[None, :] + offsets) / n
    h = span / n
    deltas = np.concatenate([np.diff(ts, axis=1), np.broadcast_to(h, (ts.shape[0], 1))], axis=1)
    return ts, deltas


def sample_along_ray(ray: Ray, n: int, strategy: str = "uniform",
                     rng: np.random.Generator | None = None) -> RaySamples:
    """Place n samples on the ray segment: bin midpoints or one draw per bin."""
    if n < 1:
        raise ValueError("need at least one sample")
    if strategy == "uniform":
        jitter = None
    elif strategy == "stratified":
        if rng is None:
            raise ValueError("stratified sampling requires a seeded generator")
        jitter = rng.random((1, n))
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    ts, deltas = _sample_ts(np.array([ray.near]), np.array([ray.far]), n, jitter)
    positions = ray.origin[None, :] + ts[0][:, None] * ray.direction[None, :]
    return RaySamples(ts=ts[0], positions=positions, deltas=deltas[0])


@dataclass(frozen=True)
class BatchComposite:
    color: np.ndarray  # (B, 3)
    weights: np.ndarray  # (B, N)
    transmittances: np.ndarray  # (B, N)
    residual: np.ndarray  # (B,)
    alphas: np.ndarray  # (B, N)


def composite_rays(sigmas: np.ndarray, colors: np.ndarray, deltas: np.ndarray,
                   background: np.ndarray) -> BatchComposite:
    """Alpha-composite batched samples: sigmas/deltas (B, N), colors (B, N, 3)."""
    if np.any(sigmas < 0.0):
        raise ValueError("densities must be nonnegative")
    if np.any(deltas <= 0.0):
        raise ValueError("deltas must be positive")
    color, weights, trans, alphas, residual = kernels.composite_forward(
        np.ascontiguousarray(sigmas, dtype=np.float64),
        np.ascontiguousarray(colors, dtype=np.float64),
        np.ascontiguousarray(deltas, dtype=np.float64),
        np.ascontiguousarray(background, dtype=np.float64))
    return BatchComposite(color=color, weights=weights, transmittances=trans,
                          residual=residual, alphas=alphas)


def composite(sigmas: np.ndarray, colors: np.ndarray, deltas: np.ndarray,
              background: np.ndarray) -> CompositeResult:
    """Single-ray compositing; see composite_rays for the batched form."""
    sigmas = np.asarray(sigmas, dtype=np.float64).reshape(1, -1)
    colors = np.asarray(colors, dtype=np.float64).reshape(1, -1, 3)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(1, -1)
    if not (sigmas.shape[1] == colors.shape[1] == deltas.shape[1]):
        raise ValueError("sigmas, colors, and deltas must have equal length")
    out = composite_rays(sigmas, colors, deltas, np.asarray(background, dtype=np.float64))
    return CompositeResult(color=out.color[0], weights=out.weights[0],
                           transmittances=out.transmittances[0],
                           residual_transmittance=float(out.residual[0]))


@dataclass
class TraceCache:
    """Intermediates of a forward trace, kept for the backward pass."""

    stencil: Stencil  # flattened over B*N samples
    sigmas: np.ndarray  # (B, N) decoded density
    rgbs: np.ndarray  # (B, N, 3) decoded color
    h_sigma: np.ndarray  # (B, N) fused pre-activation
    deltas: np.ndarray  # (B, N)
    comp: BatchComposite
    w_sigma: float
    w_c: float


def trace_rays(model: DualFieldModel, origins: np.ndarray, dirs: np.ndarray,
               nears: np.ndarray, fars: np.ndarray, n_samples: int,
               gamma: float, background: np.ndarray,
               jitter: np.ndarray | None = None,
               keep_cache: bool = False) -> tuple[np.ndarray, TraceCache | None]:
    """Render a batch of rays that all intersect the domain; returns (B, 3)."""
    b = origins.shape[0]
    ts, deltas = _sample_ts(nears, fars, n_samples, jitter)
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    # Guard boundary samples against float drift out of the domain.
    np.clip(pts, -1.0, 1.0, out=pts)

    w_sigma, w_c = effective_weights(model.blend, gamma)
    stencil = point_stencil(model.resolution, pts.reshape(-1, 3))
    hs_sigma, hs_c = grid_features_at(model.static, stencil)
    if w_sigma == 0.0 and w_c == 0.0:
        h_sigma, h_c = hs_sigma, hs_c
    else:
        hd_sigma, hd_c = grid_features_at(model.dynamic, stencil)
        h_sigma = fuse(hs_sigma, hd_sigma, w_sigma)
        h_c = fuse(hs_c, hd_c, w_c)
    sigmas, rgbs = decode(h_sigma, h_c)
    sigmas = sigmas.reshape(b, n_samples)
    rgbs = rgbs.reshape(b, n_samples, 3)
    comp = composite_rays(sigmas, rgbs, deltas, background)
    cache = None
    if keep_cache:
        cache = TraceCache(stencil=stencil, sigmas=sigmas, rgbs=rgbs,
                           h_sigma=h_sigma.reshape(b, n_samples),
                           deltas=deltas, comp=comp, w_sigma=w_sigma, w_c=w_c)
    return comp.color, cache


def render_pixels(model: DualFieldModel, origins: np.ndarray, dirs: np.ndarray,
                  opts: RenderOptions, pixel_ids: np.ndarray | None = None) -> np.ndarray:
    """Render arbitrary rays, painting background where the domain is missed."""
    origins = origins.reshape(-1, 3)
    dirs = dirs.reshape(-1, 3)
    background = np.asarray(opts.background, dtype=np.float64)
    t0, t1 = intersect_aabb(origins, dirs)
    t0 = np.maximum(t0, 0.0)
    hit = t1 > t0
    out = np.tile(background, (origins.shape[0], 1))
    idx = np.nonzero(hit)[0]
    for start in range(0, idx.size, _CHUNK_RAYS):
        sel = idx[start:start + _CHUNK_RAYS]
        jitter = None
        if opts.strategy == "stratified":
            ids = sel if pixel_ids is None else np.asarray(pixel_ids).reshape(-1)[sel]
            jitter = hash_u01(opts.seed, ids[:, None], np.arange(opts.n_samples)[None, :])
        colors, _ = trace_rays(model, origins[sel], dirs[sel], t0[sel], t1[sel],
                               opts.n_samples, opts.gamma, background, jitter)
        out[sel] = colors
    return out


def render_image(model: DualFieldModel, pose: CameraPose,
                 opts: RenderOptions | None = None) -> np.ndarray:
    """Render the full view: one ray per pixel center, (H, W, 3) float64."""
    opts = opts or RenderOptions()
    origins, dirs = camera_ray_grid(pose)
    flat = render_pixels(model, origins, dirs, opts)
    return flat.reshape(pose.height, pose.width, 3)


def render_views(model: DualFieldModel, poses: Iterable[CameraPose],
                 opts: RenderOptions | None = None) -> list[np.ndarray]:
    return [render_image(model, pose, opts) for pose in poses]
