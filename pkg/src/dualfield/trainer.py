"""Loss, hand-derived gradients, and first-order optimization of grid features.

The backward pass is the exact adjoint of the rendering chain
decode(fuse(trilinear(grid))) -> alpha compositing -> weighted L2 loss,
accumulated with serial, fixed-order reductions, so training is
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import kernels
from .field import (SIGMA_CLAMP, BlendState, DualFieldModel, FeatureGrid, init_model,
                    scatter_features)
from .renderer import trace_rays
from .scene import EditDataset, intersect_aabb, pixel_rays
from .util import TAG_TRAIN, derive_rng

# Stream discriminators so reconstruction and editing never share batches.
PHASE_STATIC = 0
PHASE_EDIT = 1


@dataclass
class RayBatch:
    """Target pixels with their world rays and per-view loss weights."""

    origins: np.ndarray  # (B, 3)
    dirs: np.ndarray  # (B, 3) unit
    targets: np.ndarray  # (B, 3) in [0, 1]
    weights: np.ndarray  # (B,) positive, one per ray's source view
    view_idx: np.ndarray  # (B,)

    def __len__(self) -> int:
        return self.origins.shape[0]


@dataclass
class OptimizerState:
    """Adam moments for one grid's density and color features."""

    m_density: np.ndarray
    v_density: np.ndarray
    m_color: np.ndarray
    v_color: np.ndarray
    step_count: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(grid: FeatureGrid, lr: float = 1e-2, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(
        m_density=np.zeros(grid.density.shape),
        v_density=np.zeros(grid.density.shape),
        m_color=np.zeros(grid.color.shape),
        v_color=np.zeros(grid.color.shape),
        lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def rgb_loss(predicted: np.ndarray, target: np.ndarray, weight: np.ndarray) -> float:
    """Per-view-weighted squared error, summed over the batch."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if not (predicted.shape == target.shape and weight.shape[0] == predicted.shape[0]):
        raise ValueError("predicted, target, and weight lengths must match")
    return float((weight * ((predicted - target) ** 2).sum(axis=-1)).sum())


def compute_normalized_weights(scores) -> np.ndarray:
    """Per-view loss weights S_i / mean(S), treating unset scores as neutral.

    The mean is taken over views that have a cached score; views never yet
    scored get weight 1 (equivalently: they are treated as sitting at the
    mean). The returned weights always average to 1.
    """
    scores = list(scores)
    cached = np.array([s for s in scores if s is not None], dtype=np.float64)
    if cached.size == 0:
        return np.ones(len(scores))
    if np.any(cached < 0.0):
        raise ValueError("consistency scores must be nonnegative")
    mean = cached.mean()
    if mean <= 0.0:
        raise ValueError("cannot normalize: every cached score is zero")
    return np.array([1.0 if s is None else s / mean for s in scores])


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(model: DualFieldModel, batch: RayBatch, n_samples: int = 64,
             gamma: float = 1.0, background: np.ndarray | None = None,
             jitter: np.ndarray | None = None, wrt: str = "dynamic",
             ) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Loss and exact gradients w.r.t. one grid's vertex features.

    Rays missing the domain cube contribute a constant (background) residual
    and no gradient. `wrt` picks which field receives gradients: "dynamic"
    (editing; the static grid is frozen) or "static" (reconstruction).

    Returns (loss, (grad_density, grad_color)) with gradient arrays shaped
    like the grid's features.
    """
    if len(batch) == 0:
        raise ValueError("empty ray batch")
    if wrt not in ("dynamic", "static"):
        raise ValueError("wrt must be 'dynamic' or 'static'")
    background = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)

    t0, t1 = intersect_aabb(batch.origins, batch.dirs)
    t0 = np.maximum(t0, 0.0)
    hit = t1 > t0
    res = model.resolution
    grad_density = np.zeros(res)
    grad_color = np.zeros(res + (3,))

    loss = 0.0
    miss = ~hit
    if miss.any():
        resid = background[None, :] - batch.targets[miss]
        loss += float((batch.weights[miss] * (resid ** 2).sum(axis=-1)).sum())
    if not hit.any():
        return loss, (grad_density, grad_color)

    sel = np.nonzero(hit)[0]
    jit = None if jitter is None else jitter[sel]
    colors, cache = trace_rays(model, batch.origins[sel], batch.dirs[sel],
                               t0[sel], t1[sel], n_samples, gamma, background,
                               jitter=jit, keep_cache=True)
    targets = batch.targets[sel]
    weights = batch.weights[sel]
    loss += rgb_loss(colors, targets, weights)

    comp = cache.comp
    d_color = 2.0 * weights[:, None] * (colors - targets)  # (B, 3)

    d_sigma = np.empty_like(cache.sigmas)
    d_rgb = np.empty_like(cache.rgbs)
    kernels.composite_backward(d_color, cache.rgbs, cache.deltas, comp.weights,
                               comp.transmittances, comp.alphas, comp.residual,
                               background, d_sigma, d_rgb)

    # Decoder adjoints. The exp clamp zeroes gradients outside (-15, 15).
    active = np.abs(cache.h_sigma) < SIGMA_CLAMP
    d_h_sigma = d_sigma * cache.sigmas * active
    d_h_c = d_rgb * cache.rgbs * (1.0 - cache.rgbs)

    # Fusion adjoint onto the chosen grid.
    if wrt == "dynamic":
        f_sigma, f_c = cache.w_sigma, cache.w_c
    else:
        f_sigma, f_c = 1.0 - cache.w_sigma, 1.0 - cache.w_c
    if f_sigma != 0.0 or f_c != 0.0:
        scatter_features(grad_density, grad_color, cache.stencil,
                         (f_sigma * d_h_sigma).reshape(-1),
                         (f_c * d_h_c).reshape(-1, 3))
    return loss, (grad_density, grad_color)


def adam_step(features: tuple[np.ndarray, np.ndarray],
              grads: tuple[np.ndarray, np.ndarray],
              state: OptimizerState) -> tuple[tuple[np.ndarray, np.ndarray], OptimizerState]:
    """Bias-corrected Adam update of (density, color) feature arrays."""
    density, color = features
    g_density, g_color = grads
    if g_density.shape != density.shape or g_color.shape != color.shape:
        raise ValueError("gradient shapes must match feature shapes")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = []
    for theta, g, m, v in ((density, g_density, state.m_density, state.v_density),
                           (color, g_color, state.m_color, state.v_color)):
        theta = np.ascontiguousarray(theta)
        new = np.empty(theta.shape, dtype=theta.dtype)
        kernels.adam_update(theta.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                            m.reshape(-1), v.reshape(-1), state.lr, state.beta1,
                            state.beta2, state.eps, bc1, bc2, new.reshape(-1))
        out.append(new)
    return (out[0], out[1]), state


# ---------------------------------------------------------------------------
# Batch assembly and training loops
# ---------------------------------------------------------------------------

def sample_ray_batch(dataset: EditDataset, batch_size: int,
                     rng: np.random.Generator, view_weights: np.ndarray | None = None,
                     source: str = "current") -> RayBatch:
    """Draw random (view, pixel) targets uniformly from the dataset."""
    n_views = len(dataset)
    height, width = dataset.resolution
    view_idx = rng.integers(0, n_views, batch_size)
    rows = rng.integers(0, height, batch_size)
    cols = rng.integers(0, width, batch_size)
    origins = np.empty((batch_size, 3))
    dirs = np.empty((batch_size, 3))
    targets = np.empty((batch_size, 3))
    for v in np.unique(view_idx):
        mask = view_idx == v
        view = dataset.views[v]
        o, d = pixel_rays(view.pose, rows[mask], cols[mask])
        origins[mask] = o
        dirs[mask] = d
        image = view.current if source == "current" else view.original
        targets[mask] = image[rows[mask], cols[mask]].astype(np.float64)
    if view_weights is None:
        weights = np.ones(batch_size)
    else:
        weights = np.asarray(view_weights, dtype=np.float64)[view_idx]
    return RayBatch(origins=origins, dirs=dirs, targets=targets,
                    weights=weights, view_idx=view_idx)


class TrainLogger:
    """Append-only CSV log shared by reconstruction and editing runs."""

    COLUMNS = ("iteration", "loss", "w_sigma", "w_c", "gamma_used", "temperature")

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self.rows: list[tuple] = []
        if self.path is not None and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(self.COLUMNS)

    def log(self, iteration: int, loss: float, w_sigma: float, w_c: float,
            gamma_used: float, temperature: float) -> None:
        row = (iteration, loss, w_sigma, w_c, gamma_used, temperature)
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow(row)


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 1024
    n_samples: int = 64
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grid_resolution: tuple[int, int, int] = (64, 64, 64)
    density_init: float = -3.0
    seed: int = 0
    strategy: str = "stratified"
    background: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    blend: BlendState = dc_field(default_factory=BlendState)
    log_path: str | Path | None = None


def train_static(dataset: EditDataset, config: TrainConfig | None = None,
                 logger: TrainLogger | None = None) -> DualFieldModel:
    """Fit the static grid to the original images (unweighted L2).

    The dynamic grid stays zero and the blend schedule stays at t=0, so the
    returned model rendered at any gamma reproduces the reconstruction.
    """
    config = config or TrainConfig()
    model = init_model(config.grid_resolution, config.density_init, config.blend)
    state = init_optimizer(model.static, config.lr, config.beta1, config.beta2, config.eps)
    logger = logger or TrainLogger(config.log_path)
    for it in range(config.iterations):
        rng = derive_rng(config.seed, TAG_TRAIN, PHASE_STATIC, it)
        batch = sample_ray_batch(dataset, config.batch_size, rng, source="original")
        jitter = rng.random((len(batch), config.n_samples)) if config.strategy == "stratified" else None
        loss, grads = backward(model, batch, n_samples=config.n_samples,
                               background=config.background, jitter=jitter, wrt="static")
        (model.static.density, model.static.color), state = adam_step(
            (model.static.density, model.static.color), grads, state)
        logger.log(it, loss, 0.0, 0.0, 1.0, blend_temperature(model.blend))
    return model


def blend_temperature(blend: BlendState) -> float:
    # Convenience for logging; the annealing schedule itself lives in idu.
    return blend.t0 / np.log10(10.0 + blend.t)


def train_step_dynamic(model: DualFieldModel, dataset: EditDataset,
                       state: OptimizerState, view_weights: np.ndarray,
                       iteration: int, config: TrainConfig) -> float:
    """One editing-phase SGD step on the dynamic grid over the mixed dataset."""
    rng = derive_rng(config.seed, TAG_TRAIN, PHASE_EDIT, iteration)
    batch = sample_ray_batch(dataset, config.batch_size, rng,
                             view_weights=view_weights, source="current")
    jitter = rng.random((len(batch), config.n_samples)) if config.strategy == "stratified" else None
    loss, grads = backward(model, batch, n_samples=config.n_samples,
                           background=config.background, jitter=jitter, wrt="dynamic")
    (model.dynamic.density, model.dynamic.color), state = adam_step(
        (model.dynamic.density, model.dynamic.color), grads, state)
    return loss
