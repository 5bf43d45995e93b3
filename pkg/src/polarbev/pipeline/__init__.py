"""The polar BEV model, its training loop and supporting transforms."""

from .config import OptimizerSpec, PipelineConfig, RunConfig
from .model import (
    MLP,
    SENTINEL,
    BEVOutput,
    HeightField,
    compose_embedding,
    encode,
    height_to_z,
    init_params,
    param_shapes,
    project_heights,
    run_model,
    transform_features,
    update_height,
)
from .baseline import depth_transform
from .loss import compute_loss
from .remap import field_on_grid, remap_error_bound, remap_matrix, remap_polar_to_rect
from .train import (
    AdamW,
    SceneData,
    TrainResult,
    evaluate_params,
    forward_rect,
    height_errors,
    load_checkpoint,
    lr_at,
    prepare_scenes,
    rasterize_on_grid,
    save_checkpoint,
    train_toy,
)
