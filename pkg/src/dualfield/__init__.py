"""Dual-field voxel radiance fields with annealed iterative dataset updates."""

__version__ = "0.1.0"

from .field import (BlendState, DualFieldModel, FeatureGrid, blend_weight, decode, fuse,
                    init_model, load_checkpoint, query, sample_features, save_checkpoint)
from .idu import IDUConfig, SAState, idu_round, run_edit, sa_draw_gamma, sa_temperature
from .metrics import CaptionPair, MetricReport, clip_dir_consistency, clip_t2i, psnr, ssim
from .renderer import RenderOptions, composite, render_image, sample_along_ray
from .scene import (AnalyticScene, CameraPose, EditDataset, Ray, generate_rays,
                    generate_synthetic_scene, load_dataset, save_dataset)
from .trainer import (OptimizerState, RayBatch, TrainConfig, adam_step, backward,
                      compute_normalized_weights, rgb_loss, train_static)

__all__ = [
    "AnalyticScene", "BlendState", "CameraPose", "CaptionPair", "DualFieldModel",
    "EditDataset", "FeatureGrid", "IDUConfig", "MetricReport", "OptimizerState",
    "Ray", "RayBatch", "RenderOptions", "SAState", "TrainConfig", "adam_step",
    "backward", "blend_weight", "clip_dir_consistency", "clip_t2i", "composite",
    "compute_normalized_weights", "decode", "fuse", "generate_rays",
    "generate_synthetic_scene", "idu_round", "init_model", "load_checkpoint",
    "load_dataset", "psnr", "query", "render_image", "rgb_loss", "run_edit",
    "sa_draw_gamma", "sa_temperature", "sample_along_ray", "sample_features",
    "save_checkpoint", "save_dataset", "ssim", "train_static",
]
