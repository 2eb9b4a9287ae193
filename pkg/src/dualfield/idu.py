"""The annealed iterative dataset-update loop.

Each round: (1) pick the next d views round-robin; (2) draw a retreat scaler
gamma (accepted with probability exp((gamma - 1) / T_t), else render from the
latest model); (3) render those views at gamma, hand the renders to the 2D
editor, and swap the edits into the dataset, caching a consistency score per
edited view; (4) train the dynamic field for n iterations on the mixed
dataset with per-view weights S / mean(S); (5) advance the shared iteration
counter by n. The temperature decays as T_t = T0 / log10(10 + t).

Rounds are atomic: any backend or renderer failure restores the model,
optimizer, dataset, and cursor to their pre-round state before re-raising.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .backends import EditorConfig, consistency_score, make_editor, make_embedder
from .field import DualFieldModel, load_checkpoint, save_checkpoint
from .images import read_imgf, write_imgf, write_png
from .renderer import RenderOptions, render_image
from .scene import EditDataset
from .trainer import (OptimizerState, TrainConfig, TrainLogger,
                      compute_normalized_weights, init_optimizer, train_step_dynamic)
from .util import TAG_SA, derive_rng

CHECKPOINT_NAME = "latest.ckpt"
OPTIMIZER_NAME = "optimizer.npz"
SCORES_NAME = "scores.json"
EDITED_DIR = "edited"


class RoundError(Exception):
    """An IDU round failed; the run state was rolled back."""

    def __init__(self, view_index: int, cause: Exception):
        super().__init__(f"round aborted at view {view_index}: {cause}")
        self.view_index = view_index
        self.cause = cause


@dataclass
class SAState:
    """Annealing state: start temperature, shared iteration counter, stream."""

    t0: float = 1.0
    t: int = 0
    rng: np.random.Generator = dc_field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        if self.t0 <= 0.0:
            raise ValueError("initial temperature must be positive")


def sa_temperature(t: int, t0: float) -> float:
    """Logarithmic cooling T0 / log10(10 + t)."""
    if t < 0:
        raise ValueError("iteration must be nonnegative")
    if t0 <= 0.0:
        raise ValueError("initial temperature must be positive")
    return t0 / math.log10(10.0 + t)


def sa_accept_probability(gamma: float, temperature: float) -> float:
    return math.exp((gamma - 1.0) / temperature)


def sa_draw_gamma(sa: SAState, candidate: float | None = None) -> float:
    """One annealing decision: retreat scaler gamma, or 1.0 on rejection.

    Draws the candidate uniformly from [0, 1) unless pinned, then accepts it
    with probability exp((gamma - 1) / T_t); rejection means rendering from
    the latest model.
    """
    gamma = float(sa.rng.random()) if candidate is None else float(candidate)
    u = float(sa.rng.random())
    if u < sa_accept_probability(gamma, sa_temperature(sa.t, sa.t0)):
        return gamma
    return 1.0


@dataclass
class IDUConfig:
    d: int = 1
    n: int = 10
    total_iterations: int = 15000
    sa_enabled: bool = True
    cci_enabled: bool = True
    editor: str = "synthetic-oracle"
    embedder: str = "toy"
    endpoint: str | None = None
    sticky_tau: float = 0.05
    prompt: str = "identity"
    s_image: float = 1.5
    s_text: float = 7.5
    steps: int = 20
    t0: float = 1.0
    render_samples: int = 64
    checkpoint_every: int = 100  # rounds
    seed: int = 0
    # The blend cap scales dynamic features by 1/w_max, so the editing phase
    # wants a larger step size than reconstruction.
    train: TrainConfig = dc_field(default_factory=lambda: TrainConfig(lr=0.05))

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ValueError("d and n must be >= 1")

    def editor_config(self) -> EditorConfig:
        return EditorConfig(prompt=self.prompt, s_image=self.s_image,
                            s_text=self.s_text, steps=self.steps, seed=self.seed)


def _snapshot(model: DualFieldModel, dataset: EditDataset, state: OptimizerState):
    return (model.dynamic.density.copy(), model.dynamic.color.copy(),
            model.blend.t, model.blend.gamma,
            [(v.current, v.score) for v in dataset.views], dataset.cursor,
            state.m_density.copy(), state.v_density.copy(),
            state.m_color.copy(), state.v_color.copy(), state.step_count)


def _restore(snap, model: DualFieldModel, dataset: EditDataset, state: OptimizerState):
    (model.dynamic.density, model.dynamic.color, model.blend.t, model.blend.gamma,
     views, dataset.cursor, state.m_density, state.v_density,
     state.m_color, state.v_color, state.step_count) = snap
    for view, (current, score) in zip(dataset.views, views):
        view.current = current
        view.score = score


def idu_round(model: DualFieldModel, dataset: EditDataset, sa: SAState,
              config: IDUConfig, state: OptimizerState, editor, embedder,
              logger: TrainLogger | None = None) -> dict:
    """Run one dataset-update + training round in place; returns a log row."""
    snap = _snapshot(model, dataset, state)
    view_index = dataset.cursor
    try:
        gamma = sa_draw_gamma(sa) if config.sa_enabled else 1.0
        model.blend.gamma = gamma
        temperature = sa_temperature(sa.t, sa.t0)
        editor_cfg = config.editor_config()
        n_views = len(dataset)

        for k in range(config.d):
            view_index = (dataset.cursor + k) % n_views
            view = dataset.views[view_index]
            render = render_image(model, view.pose, RenderOptions(
                n_samples=config.render_samples, gamma=gamma,
                background=config.train.background, strategy="uniform"))
            edited = editor.edit(view.original.astype(np.float64), render, editor_cfg)
            if edited.shape != view.original.shape:
                raise ValueError("editor returned a different resolution")
            view.current = np.asarray(edited, dtype=np.float32)
            if config.cci_enabled:
                view.score = consistency_score(edited, view.original.astype(np.float64),
                                               editor_cfg, embedder)
        dataset.cursor = (dataset.cursor + config.d) % n_views

        weights = (compute_normalized_weights(dataset.scores())
                   if config.cci_enabled else np.ones(n_views))
        losses = []
        for i in range(config.n):
            losses.append(train_step_dynamic(model, dataset, state, weights,
                                             iteration=model.blend.t + i, config=config.train))
        model.blend.t += config.n
        sa.t = model.blend.t

        row = {"iteration": model.blend.t, "loss": float(np.mean(losses)),
               "w_sigma": model.blend.w_sigma(), "w_c": model.blend.w_c(),
               "gamma_used": gamma, "temperature": temperature}
        if logger is not None:
            logger.log(**row)
        return row
    except Exception as exc:
        _restore(snap, model, dataset, state)
        raise RoundError(view_index, exc) from exc


# ---------------------------------------------------------------------------
# Run orchestration and persistence
# ---------------------------------------------------------------------------

def _persist(out_dir: Path, model: DualFieldModel, dataset: EditDataset,
             state: OptimizerState) -> None:
    """Write checkpoint, optimizer sidecar, and the edited dataset.

    The run directory doubles as a loadable dataset: a manifest referencing
    edited/<frame>.png sits next to the cached scores, so renders and
    evaluation can consume the edited views directly. The .imgf dumps keep
    the working images lossless for resumption.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_dir / CHECKPOINT_NAME)
    np.savez(out_dir / OPTIMIZER_NAME,
             m_density=state.m_density, v_density=state.v_density,
             m_color=state.m_color, v_color=state.v_color,
             step_count=state.step_count)
    edited = out_dir / EDITED_DIR
    edited.mkdir(exist_ok=True)
    scores = {}
    frames = []
    for i, view in enumerate(dataset.views):
        stem = f"frame_{i:04d}"
        write_png(edited / f"{stem}.png", view.current)
        write_imgf(edited / f"{stem}.imgf", view.current)
        scores[stem] = view.score
        mat = np.eye(4)
        mat[:3, :3] = view.pose.rotation
        mat[:3, 3] = view.pose.translation
        frames.append({"file_path": f"{EDITED_DIR}/{stem}.png",
                       "transform_matrix": mat.tolist()})
    first = dataset.views[0].pose
    manifest = {"fl_x": first.fx, "fl_y": first.fy, "cx": first.cx, "cy": first.cy,
                "w": first.width, "h": first.height, "prompt": dataset.prompt,
                "frames": frames}
    with open(out_dir / "transforms.json", "w") as f:
        json.dump(manifest, f, indent=2)
    with open(out_dir / SCORES_NAME, "w") as f:
        json.dump(scores, f, indent=2)


def _try_resume(out_dir: Path, model: DualFieldModel, dataset: EditDataset,
                state: OptimizerState, n: int, d: int) -> tuple[DualFieldModel, int]:
    ckpt = out_dir / CHECKPOINT_NAME
    if not ckpt.is_file():
        return model, 0
    model = load_checkpoint(ckpt)
    opt = out_dir / OPTIMIZER_NAME
    if opt.is_file():
        data = np.load(opt)
        state.m_density = data["m_density"]
        state.v_density = data["v_density"]
        state.m_color = data["m_color"]
        state.v_color = data["v_color"]
        state.step_count = int(data["step_count"])
    scores_path = out_dir / SCORES_NAME
    scores = json.loads(scores_path.read_text()) if scores_path.is_file() else {}
    for i, view in enumerate(dataset.views):
        stem = f"frame_{i:04d}"
        imgf = out_dir / EDITED_DIR / f"{stem}.imgf"
        if imgf.is_file():
            view.current = read_imgf(imgf)
        view.score = scores.get(stem)
    rounds_done = model.blend.t // n
    dataset.cursor = (rounds_done * d) % len(dataset)
    return model, rounds_done


def run_edit(model: DualFieldModel, dataset: EditDataset, config: IDUConfig,
             out_dir: str | Path | None = None, editor=None, embedder=None,
             logger: TrainLogger | None = None) -> tuple[DualFieldModel, EditDataset, list[dict]]:
    """Drive idu_round until total_iterations, checkpointing along the way.

    If out_dir already holds a checkpoint, the run resumes after the last
    completed round (per-round RNG streams are derived statelessly from the
    seed, so a resumed run matches an uninterrupted one).
    """
    editor = editor or make_editor(config.editor, config.endpoint, config.sticky_tau)
    embedder = embedder or make_embedder(config.embedder, config.endpoint)
    state = init_optimizer(model.dynamic, config.train.lr, config.train.beta1,
                           config.train.beta2, config.train.eps)
    out_path = Path(out_dir) if out_dir is not None else None
    start_round = 0
    if out_path is not None:
        model, start_round = _try_resume(out_path, model, dataset, state, config.n, config.d)
    sa = SAState(t0=config.t0, t=model.blend.t)
    model.blend.t0 = config.t0

    rows = []
    total_rounds = math.ceil(config.total_iterations / config.n)
    for rnd in range(start_round, total_rounds):
        sa.rng = derive_rng(config.seed, TAG_SA, rnd)
        rows.append(idu_round(model, dataset, sa, config, state, editor, embedder, logger))
        if out_path is not None and ((rnd + 1) % config.checkpoint_every == 0
                                     or rnd + 1 == total_rounds):
            _persist(out_path, model, dataset, state)
    if out_path is not None and total_rounds == start_round:
        _persist(out_path, model, dataset, state)
    return model, dataset, rows
