from .adam import AdamState, adam_step
from .dataset import RayDataset, build_ray_dataset, downscale
from .losses import (
    LossWeights,
    combined_loss,
    loss_distortion,
    loss_l1_color,
    loss_mono_normal,
    loss_normal_pred,
)
from .pyramid import KERNEL_SIZES, PyramidLevel, gaussian_blur, kernel_to_roughness
from .lightfield import (
    LightFieldConfig,
    LightFieldState,
    SpecularDecoder,
    blurred_view_psnr,
    epoch_means,
    fit_light_field,
    load_state,
    save_state,
)
