from .checkpoint import load_model, save_model
from .model import (
    FieldConfig,
    SampleAttributes,
    SceneField,
    correct_normal,
    density_gradient_numeric,
    reflect,
    sample_field,
)
from .render import RayBatch, RenderOutput, composite_weights, shade_pixel, volume_render
from .train import TrainConfig, TrainResult, View, evaluate, render_views, train_field
