"""Camera geometry, multiview dataset IO, and synthetic ground-truth scenes.

Conventions (declared, since upstream captures vary): right-handed world,
camera looks along -z of its own frame, image y points down, and pixel (row,
col) is sampled at its center (col+0.5, row+0.5). The canonical scene domain
is the axis-aligned cube [-1, 1]^3; rays are clipped against it.

Datasets live on disk as a `transforms.json` manifest plus 8-bit PNG frames:
{fl_x, fl_y, cx, cy, w, h, frames: [{file_path, transform_matrix}]} with
transform_matrix a 4x4 row-major camera-to-world matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .images import quantize_unit, read_png, write_png
from .util import TAG_SCENE, derive_rng

DOMAIN_MIN = -1.0
DOMAIN_MAX = 1.0
DEFAULT_BOUNDS = np.array([[DOMAIN_MIN] * 3, [DOMAIN_MAX] * 3], dtype=np.float64)

# Fallback ray extent when bounds clipping is not applied or the ray misses.
DEFAULT_NEAR = 0.0
DEFAULT_FAR = 10.0

MANIFEST_NAME = "transforms.json"

ORTHONORMAL_TOL = 1e-6


class DatasetError(Exception):
    """Base class for dataset load/save failures."""


class ManifestError(DatasetError):
    """Missing or malformed transforms.json."""


class MissingImageError(DatasetError):
    """A frame referenced by the manifest has no image file."""


class InvalidPoseError(DatasetError, ValueError):
    """Camera rotation is not a proper orthonormal matrix."""


class MixedResolutionError(DatasetError):
    """Frames in one dataset do not share a single resolution."""


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera: camera-to-world rotation/translation plus intrinsics."""

    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)
        if rot.shape != (3, 3):
            raise InvalidPoseError(f"rotation must be 3x3, got {rot.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(tr)):
            raise InvalidPoseError("pose contains non-finite values")
        if np.abs(rot @ rot.T - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise InvalidPoseError("rotation is not orthonormal within 1e-6")
        if np.linalg.det(rot) < 0.0:
            raise InvalidPoseError("rotation has determinant -1 (improper)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True)
class Ray:
    """World-space ray with unit direction and a [near, far) sampling segment."""

    origin: np.ndarray  # (3,)
    direction: np.ndarray  # (3,), unit norm
    near: float
    far: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length within 1e-6")
        if not (0.0 <= self.near < self.far):
            raise ValueError(f"require 0 <= near < far, got [{self.near}, {self.far}]")


@dataclass
class View:
    """One dataset entry: pristine image, working image, camera, cached score."""

    original: np.ndarray  # (H, W, 3) float32 in [0, 1]
    current: np.ndarray  # (H, W, 3) float32 in [0, 1]
    pose: CameraPose
    score: float | None = None


@dataclass
class EditDataset:
    views: list[View]
    prompt: str = ""
    cursor: int = 0

    def __post_init__(self):
        if not self.views:
            raise ValueError("dataset must contain at least one view")
        res = self.views[0].original.shape[:2]
        for v in self.views:
            if v.original.shape[:2] != res or v.current.shape[:2] != res:
                raise MixedResolutionError("all views must share one resolution")
        if not (0 <= self.cursor < len(self.views)):
            raise ValueError("cursor out of range")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.views[0].original.shape[:2]

    def __len__(self) -> int:
        return len(self.views)

    def scores(self) -> list[float | None]:
        return [v.score for v in self.views]


@dataclass(frozen=True)
class AnalyticScene:
    """Closed-form density/color functions used as a test-time ground truth.

    Both callables are pure and vectorized: (M, 3) points -> (M,) densities
    and (M, 3) colors.
    """

    density_fn: Callable[[np.ndarray], np.ndarray]
    color_fn: Callable[[np.ndarray], np.ndarray]
    bounds: np.ndarray = field(default_factory=lambda: DEFAULT_BOUNDS.copy())


def intersect_aabb(origins: np.ndarray, directions: np.ndarray,
                   bounds: np.ndarray = DEFAULT_BOUNDS) -> tuple[np.ndarray, np.ndarray]:
    """Slab-test ray/box intersection.

    Returns (t_enter, t_exit) arrays; a ray misses the box iff
    t_exit <= max(t_enter, 0).
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (bounds[0] - o) * inv
        t1 = (bounds[1] - o) * inv
    # Zero direction components: parallel to the slab, inside iff within it.
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    inside = (o >= bounds[0]) & (o <= bounds[1])
    parallel = d == 0.0
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
    return lo.max(axis=-1), hi.min(axis=-1)


def camera_ray_grid(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Back-project every pixel center: (H, W, 3) origins and unit directions."""
    rows = np.arange(pose.height, dtype=np.float64)
    cols = np.arange(pose.width, dtype=np.float64)
    u = (cols[None, :] + 0.5 - pose.cx) / pose.fx
    v = (rows[:, None] + 0.5 - pose.cy) / pose.fy
    dirs_cam = np.stack(
        [np.broadcast_to(u, (pose.height, pose.width)),
         np.broadcast_to(v, (pose.height, pose.width)),
         np.full((pose.height, pose.width), -1.0)], axis=-1)
    dirs = dirs_cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.translation, dirs.shape)
    return origins, dirs


def pixel_rays(pose: CameraPose, rows: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized back-projection for selected (row, col) pixels."""
    u = (np.asarray(cols, dtype=np.float64) + 0.5 - pose.cx) / pose.fx
    v = (np.asarray(rows, dtype=np.float64) + 0.5 - pose.cy) / pose.fy
    dirs_cam = np.stack([u, v, -np.ones_like(u)], axis=-1)
    dirs = dirs_cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.translation, dirs.shape)
    return origins, dirs


def generate_rays(pose: CameraPose, pixels: Sequence[tuple[int, int]],
                  near: float = DEFAULT_NEAR, far: float = DEFAULT_FAR,
                  bounds: np.ndarray | None = DEFAULT_BOUNDS) -> list[Ray]:
    """Back-project pixel centers into world rays, one per pixel.

    near/far come from the scene-bounds intersection clamped into the
    configured [near, far] defaults; rays that miss the bounds keep the
    defaults (the renderer paints such pixels with the background).
    """
    for row, col in pixels:
        if not (0 <= row < pose.height and 0 <= col < pose.width):
            raise ValueError(f"pixel ({row}, {col}) outside [0,{pose.height})x[0,{pose.width})")
    if not pixels:
        return []
    rows = np.array([p[0] for p in pixels], dtype=np.float64)
    cols = np.array([p[1] for p in pixels], dtype=np.float64)
    origins, dirs = pixel_rays(pose, rows, cols)
    nears = np.full(len(pixels), float(near))
    fars = np.full(len(pixels), float(far))
    if bounds is not None:
        t_enter, t_exit = intersect_aabb(origins, dirs, bounds)
        hit = t_exit > np.maximum(t_enter, 0.0)
        nears = np.where(hit, np.clip(t_enter, near, far), nears)
        fars = np.where(hit, np.clip(t_exit, near, far), fars)
        degenerate = hit & ~(nears < fars)
        nears = np.where(degenerate, near, nears)
        fars = np.where(degenerate, far, fars)
    return [Ray(origins[i].copy(), dirs[i].copy(), float(nears[i]), float(fars[i]))
            for i in range(len(pixels))]


def look_at_pose(eye: np.ndarray, target: np.ndarray, fx: float, fy: float,
                 cx: float, cy: float, width: int, height: int) -> CameraPose:
    """Camera at `eye` looking at `target`, image y pointing world-down."""
    eye = np.asarray(eye, dtype=np.float64)
    z_axis = eye - np.asarray(target, dtype=np.float64)
    z_axis = z_axis / np.linalg.norm(z_axis)
    world_down = np.array([0.0, 0.0, -1.0])
    y_axis = world_down - np.dot(world_down, z_axis) * z_axis
    norm = np.linalg.norm(y_axis)
    if norm < 1e-9:  # camera looks straight up/down; pick an arbitrary frame
        y_axis = np.array([0.0, 1.0, 0.0])
    else:
        y_axis = y_axis / norm
    x_axis = np.cross(y_axis, z_axis)
    rotation = np.stack([x_axis, y_axis, z_axis], axis=1)
    return CameraPose(rotation, eye, fx, fy, cx, cy, width, height)


# ---------------------------------------------------------------------------
# Dataset persistence
# ---------------------------------------------------------------------------

def save_dataset(dataset: EditDataset, path: str | Path) -> None:
    """Write the manifest plus one PNG per view (original images)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    first = dataset.views[0].pose
    frames = []
    for i, view in enumerate(dataset.views):
        name = f"frame_{i:04d}.png"
        write_png(root / name, view.original)
        mat = np.eye(4)
        mat[:3, :3] = view.pose.rotation
        mat[:3, 3] = view.pose.translation
        frames.append({"file_path": name, "transform_matrix": mat.tolist()})
    manifest = {
        "fl_x": first.fx, "fl_y": first.fy,
        "cx": first.cx, "cy": first.cy,
        "w": first.width, "h": first.height,
        "prompt": dataset.prompt,
        "frames": frames,
    }
    with open(root / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2)


def load_dataset(path: str | Path) -> EditDataset:
    """Load a dataset directory; current images start equal to the originals."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ManifestError(f"no {MANIFEST_NAME} in {root}")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed {MANIFEST_NAME}: {exc}") from exc
    try:
        fx, fy = float(manifest["fl_x"]), float(manifest["fl_y"])
        cx, cy = float(manifest["cx"]), float(manifest["cy"])
        width, height = int(manifest["w"]), int(manifest["h"])
        frames = manifest["frames"]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"manifest missing field: {exc}") from exc
    if not frames:
        raise ManifestError("manifest lists no frames")

    views = []
    resolution = None
    for frame in frames:
        img_path = root / frame["file_path"]
        if not img_path.is_file():
            raise MissingImageError(f"missing image file: {img_path}")
        image = read_png(img_path)
        if resolution is None:
            resolution = image.shape[:2]
        elif image.shape[:2] != resolution:
            raise MixedResolutionError(
                f"{img_path} has resolution {image.shape[:2]}, expected {resolution}")
        mat = np.asarray(frame["transform_matrix"], dtype=np.float64)
        if mat.shape != (4, 4):
            raise ManifestError(f"transform_matrix must be 4x4 for {frame['file_path']}")
        pose = CameraPose(mat[:3, :3], mat[:3, 3], fx, fy, cx, cy, width, height)
        views.append(View(original=image, current=image.copy(), pose=pose))
    return EditDataset(views=views, prompt=str(manifest.get("prompt", "")), cursor=0)


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneRecipe:
    """Blob soup: gaussian or hard spheres with per-sphere colors.

    Colors should sit on the k/255 grid so PNG round-trips are exact.
    """

    centers: np.ndarray  # (K, 3)
    radii: np.ndarray  # (K,)
    colors: np.ndarray  # (K, 3)
    peak_density: float = 40.0
    hard: bool = False  # hard: indicator sphere; soft: gaussian falloff
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))


_BUILTIN_RECIPES = {
    "empty": SceneRecipe(
        centers=np.zeros((1, 3)), radii=np.array([0.3]),
        colors=np.array([[1.0, 0.0, 0.0]]), peak_density=0.0),
    "sphere": SceneRecipe(
        centers=np.zeros((1, 3)), radii=np.array([0.45]),
        colors=np.array([[1.0, 0.2, 0.8]]), peak_density=400.0, hard=True),
    "spheres": SceneRecipe(
        centers=np.array([[-0.35, 0.0, 0.0], [0.35, 0.15, 0.1], [0.0, -0.3, -0.25]]),
        radii=np.array([0.3, 0.25, 0.22]),
        colors=np.array([[1.0, 0.2, 0.2], [0.2, 0.4, 1.0], [0.2, 0.8, 0.2]]),
        peak_density=60.0),
}


def builtin_recipe(name: str) -> SceneRecipe:
    try:
        return _BUILTIN_RECIPES[name]
    except KeyError:
        raise ValueError(f"unknown scene recipe {name!r}; choose from {sorted(_BUILTIN_RECIPES)}")


def analytic_scene(recipe: SceneRecipe) -> AnalyticScene:
    centers = np.asarray(recipe.centers, dtype=np.float64)
    radii = np.asarray(recipe.radii, dtype=np.float64)
    colors = np.asarray(recipe.colors, dtype=np.float64)
    peak = float(recipe.peak_density)

    def per_sphere(pts: np.ndarray) -> np.ndarray:
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        if recipe.hard:
            return peak * (d2 <= radii[None, :] ** 2)
        # Gaussian falloff with sigma = r/2 keeps blobs visually inside r.
        return peak * np.exp(-0.5 * d2 / (radii[None, :] / 2.0) ** 2)

    def density_fn(pts: np.ndarray) -> np.ndarray:
        return per_sphere(np.asarray(pts, dtype=np.float64)).sum(axis=-1)

    def color_fn(pts: np.ndarray) -> np.ndarray:
        w = per_sphere(np.asarray(pts, dtype=np.float64))
        total = w.sum(axis=-1, keepdims=True)
        mix = w @ colors
        neutral = np.full(3, 0.5)
        out = np.where(total > 1e-12, mix / np.maximum(total, 1e-12), neutral)
        return np.clip(out, 0.0, 1.0)

    return AnalyticScene(density_fn=density_fn, color_fn=color_fn)


def ring_poses(n_views: int, resolution: tuple[int, int], radius: float = 2.5,
               elevation: float = 0.35) -> list[CameraPose]:
    """Cameras evenly spaced on a ring, all looking at the origin."""
    height, width = resolution
    fx = fy = 1.25 * max(width, height)
    cx, cy = width / 2.0, height / 2.0
    poses = []
    for k in range(n_views):
        phi = 2.0 * math.pi * k / n_views
        eye = np.array([radius * math.cos(phi), radius * math.sin(phi), elevation])
        poses.append(look_at_pose(eye, np.zeros(3), fx, fy, cx, cy, width, height))
    return poses


def generate_synthetic_scene(recipe: SceneRecipe | str, n_views: int,
                             resolution: tuple[int, int], seed: int = 0,
                             n_samples: int = 128) -> tuple[AnalyticScene, EditDataset]:
    """Render a ground-truth dataset from an analytic scene.

    Images are produced by the same compositing routine the renderer uses,
    with the analytic density/color evaluated at the ray samples, then
    quantized to the 8-bit grid so saved datasets round-trip bit-exactly.
    Deterministic for a fixed (recipe, seed).
    """
    from .renderer import composite_rays  # deferred: renderer imports scene

    if n_views < 1:
        raise ValueError("need at least one view")
    height, width = resolution
    if height < 1 or width < 1:
        raise ValueError("resolution must be positive")
    if isinstance(recipe, str):
        recipe = builtin_recipe(recipe)
    scene = analytic_scene(recipe)
    # Seed reserved for randomized recipe variants; ring placement is fixed.
    derive_rng(seed, TAG_SCENE)

    views = []
    for pose in ring_poses(n_views, (height, width)):
        origins, dirs = camera_ray_grid(pose)
        origins = origins.reshape(-1, 3)
        dirs = dirs.reshape(-1, 3)
        t0, t1 = intersect_aabb(origins, dirs, scene.bounds)
        t0 = np.maximum(t0, 0.0)
        hit = t1 > t0
        img = np.tile(recipe.background, (origins.shape[0], 1))
        if hit.any():
            o, d = origins[hit], dirs[hit]
            near, far = t0[hit], t1[hit]
            # Midpoints of n equal bins per ray.
            steps = (np.arange(n_samples) + 0.5) / n_samples
            ts = near[:, None] + (far - near)[:, None] * steps[None, :]
            deltas = np.broadcast_to(((far - near) / n_samples)[:, None], ts.shape)
            pts = o[:, None, :] + ts[..., None] * d[:, None, :]
            flat = pts.reshape(-1, 3)
            sigmas = scene.density_fn(flat).reshape(ts.shape)
            colors = scene.color_fn(flat).reshape(*ts.shape, 3)
            img[hit] = composite_rays(sigmas, colors, deltas, recipe.background).color
        image = quantize_unit(img.reshape(height, width, 3))
        views.append(View(original=image, current=image.copy(), pose=pose))
    return scene, EditDataset(views=views)
