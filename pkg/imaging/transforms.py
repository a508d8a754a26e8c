"""
Image operators - saturation blending, acuity blur and view augmentation

Images are float32 tensors shaped (3, H, W) with values in [0, 1].
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from PIL import Image as PILImage

from curriculum.schedules import StageParams, StageSpec, sample_stage_params
from ops.seeding import numpy_rng

logger = logging.getLogger(__name__)

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

REFERENCE_RESOLUTION = 224

# Crop scales and photometric constants of the two SSL recipes
CONTRASTIVE_CROP_SCALE = (0.2, 1.0)
GLOBAL_CROP_SCALE = (0.4, 1.0)
LOCAL_CROP_SCALE = (0.05, 0.4)
CROP_RATIO = (3.0 / 4.0, 4.0 / 3.0)
JITTER = {"brightness": 0.4, "contrast": 0.4, "saturation": 0.4, "hue": 0.1}
JITTER_P = 0.8
GRAYSCALE_P = 0.2
BLUR_P = 0.5
BLUR_SIGMA = (0.1, 2.0)
FLIP_P = 0.5
N_LOCAL_VIEWS = 6


def _check_image(image: torch.Tensor):
    if image.ndim not in (3, 4) or image.shape[-3] != 3:
        raise ValueError(f"Expected a (3, H, W) or (N, 3, H, W) image, got shape {tuple(image.shape)}")


def to_grayscale(image: torch.Tensor) -> torch.Tensor:
    """Replace every channel by the BT.601 luminance"""
    _check_image(image)
    weights = torch.tensor(LUMA_WEIGHTS, dtype=image.dtype, device=image.device).view(3, 1, 1)
    luma = (image * weights).sum(dim=-3, keepdim=True)
    return luma.expand_as(image).clamp(0.0, 1.0).contiguous()


def blend_saturation(image: torch.Tensor, s: float) -> torch.Tensor:
    """s * color + (1 - s) * grayscale"""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"Saturation blend ratio must lie in [0, 1], got {s}")
    if s == 1.0:
        return image.clone()
    return (s * image + (1.0 - s) * to_grayscale(image)).clamp(0.0, 1.0)


def gaussian_kernel1d(sigma: float, kernel: int, dtype=torch.float32) -> torch.Tensor:
    """Normalized kernel-tap Gaussian (float64 math, cast at the end)"""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"Blur kernel must be odd and positive, got {kernel}")
    x = torch.arange(kernel, dtype=torch.float64) - (kernel - 1) / 2
    weights = torch.exp(-(x**2) / (2.0 * sigma**2))
    return (weights / weights.sum()).to(dtype)


def gaussian_blur(image: torch.Tensor, sigma: float, kernel: int) -> torch.Tensor:
    """
    Separable Gaussian blur with reflect padding.

    Args:
        image: (3, H, W) or (N, 3, H, W)
        sigma: standard deviation in pixels (0 means identity)
        kernel: odd tap count, at most min(H, W)

    Returns:
        Blurred image clamped to [0, 1]
    """
    _check_image(image)
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"Blur kernel must be odd and positive, got {kernel}")
    if sigma < 0:
        raise ValueError(f"Blur sigma must be >= 0, got {sigma}")
    height, width = image.shape[-2:]
    if kernel > min(height, width):
        raise ValueError(f"Blur kernel {kernel} exceeds image size {height}x{width}")
    if sigma == 0 or kernel == 1:
        return image.clone()

    batch = image if image.ndim == 4 else image.unsqueeze(0)
    weights = gaussian_kernel1d(sigma, kernel, dtype=image.dtype).to(image.device)
    pad = kernel // 2
    out = F.pad(batch, (pad, pad, 0, 0), mode="reflect")
    out = F.conv2d(out, weights.view(1, 1, 1, kernel).expand(3, 1, 1, kernel), groups=3)
    out = F.pad(out, (0, 0, pad, pad), mode="reflect")
    out = F.conv2d(out, weights.view(1, 1, kernel, 1).expand(3, 1, kernel, 1), groups=3)
    out = out.clamp(0.0, 1.0)
    return out if image.ndim == 4 else out.squeeze(0)


def scale_to_resolution(
    sigma: float, kernel: int, resolution: int, reference: int = REFERENCE_RESOLUTION
) -> Tuple[float, int]:
    """Rescale blur parameters given at the reference resolution (kernel kept odd)"""
    if resolution == reference or kernel == 1:
        return float(sigma), int(kernel)
    ratio = resolution / reference
    scaled_kernel = 2 * int(round((kernel - 1) / 2 * ratio)) + 1
    return float(sigma) * ratio, scaled_kernel


def apply_diet(
    image: torch.Tensor,
    stage_params: Union[StageParams, StageSpec],
    rng_seed=None,
    reference_resolution: Optional[int] = None,
) -> torch.Tensor:
    """
    Blend toward grayscale, then blur.

    A StageSpec is first turned into concrete parameters with rng_seed.
    With reference_resolution set, sigma and kernel are rescaled from that
    resolution to the image's.
    """
    params = stage_params
    if isinstance(stage_params, StageSpec):
        params = sample_stage_params(stage_params, rng_seed)
    sigma, kernel = params.sigma, params.kernel
    if reference_resolution:
        sigma, kernel = scale_to_resolution(sigma, kernel, min(image.shape[-2:]), reference_resolution)
    return gaussian_blur(blend_saturation(image, params.s), sigma, kernel)


@dataclass
class ViewParams:
    """Everything needed to re-render one augmented view"""

    kind: str
    size: int
    crop: Tuple[int, int, int, int]
    flip: bool
    jitter: Optional[dict] = None
    grayscale: bool = False
    blur_sigma: Optional[float] = None
    diet: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AugmentedViews:
    """Views rendered from one source frame, with their parameter records"""

    frame_id: str
    views: List[torch.Tensor]
    params: List[ViewParams] = field(default_factory=list)

    @property
    def is_global(self) -> List[bool]:
        return [p.kind == "global" for p in self.params]

    @property
    def n_global(self) -> int:
        return sum(self.is_global)

    def __len__(self) -> int:
        return len(self.views)


def sample_crop(rng: np.random.Generator, height: int, width: int, scale, ratio=CROP_RATIO):
    """Random resized crop box (top, left, h, w), same search as torchvision"""
    area = height * width
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target_area = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(*log_ratio))
        w = int(round(math.sqrt(target_area * aspect)))
        h = int(round(math.sqrt(target_area / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w

    in_ratio = width / height
    if in_ratio < min(ratio):
        w, h = width, int(round(width / min(ratio)))
    elif in_ratio > max(ratio):
        h, w = height, int(round(height * max(ratio)))
    else:
        w, h = width, height
    return (height - h) // 2, (width - w) // 2, h, w


def _photometric(view: torch.Tensor, rng: np.random.Generator, params: ViewParams) -> torch.Tensor:
    if rng.random() < JITTER_P:
        order = [int(i) for i in rng.permutation(4)]
        factors = {
            "brightness": float(rng.uniform(1 - JITTER["brightness"], 1 + JITTER["brightness"])),
            "contrast": float(rng.uniform(1 - JITTER["contrast"], 1 + JITTER["contrast"])),
            "saturation": float(rng.uniform(1 - JITTER["saturation"], 1 + JITTER["saturation"])),
            "hue": float(rng.uniform(-JITTER["hue"], JITTER["hue"])),
        }
        ops = [
            lambda v: TF.adjust_brightness(v, factors["brightness"]),
            lambda v: TF.adjust_contrast(v, factors["contrast"]),
            lambda v: TF.adjust_saturation(v, factors["saturation"]),
            lambda v: TF.adjust_hue(v, factors["hue"]),
        ]
        for idx in order:
            view = ops[idx](view).clamp(0.0, 1.0)
        params.jitter = {"order": order, **factors}
    if rng.random() < GRAYSCALE_P:
        view = TF.rgb_to_grayscale(view, num_output_channels=3)
        params.grayscale = True
    if rng.random() < BLUR_P:
        sigma = float(rng.uniform(*BLUR_SIGMA))
        kernel = max(3, int(0.1 * params.size) // 2 * 2 + 1)
        view = TF.gaussian_blur(view, kernel_size=[kernel, kernel], sigma=[sigma, sigma])
        params.blur_sigma = sigma
    return view.clamp(0.0, 1.0)


def _geometric(image, rng, kind, size, scale) -> Tuple[torch.Tensor, ViewParams]:
    height, width = image.shape[-2:]
    top, left, h, w = sample_crop(rng, height, width, scale)
    view = TF.resized_crop(image, top, left, h, w, [size, size], antialias=True)
    flip = bool(rng.random() < FLIP_P)
    if flip:
        view = TF.hflip(view)
    return view.clamp(0.0, 1.0), ViewParams(kind=kind, size=size, crop=(top, left, h, w), flip=flip)


def _view_plan(learner_kind: str, resolution: int, n_local: int):
    if learner_kind == "contrastive":
        return [("global", resolution, CONTRASTIVE_CROP_SCALE)] * 2
    if learner_kind == "distillation":
        local = max(8, resolution // 2)
        return [("global", resolution, GLOBAL_CROP_SCALE)] * 2 + [("local", local, LOCAL_CROP_SCALE)] * n_local
    raise ValueError(f"Unknown learner kind '{learner_kind}'")


def sdiet_views(
    image: torch.Tensor,
    learner_kind: str,
    rng_seed,
    frame_id: str = "",
    n_local: int = N_LOCAL_VIEWS,
) -> AugmentedViews:
    """
    Standard SSL augmentation views of one frame.

    contrastive: 2 views (crop scale 0.2-1.0)
    distillation: 2 global views (0.4-1.0) plus n_local local views
    (0.05-0.4) at half resolution. Each view: resized crop, flip, color
    jitter, random grayscale, random blur.
    """
    _check_image(image)
    rng = numpy_rng(rng_seed)
    resolution = min(image.shape[-2:])
    views, records = [], []
    for kind, size, scale in _view_plan(learner_kind, resolution, n_local):
        view, params = _geometric(image, rng, kind, size, scale)
        views.append(_photometric(view, rng, params))
        records.append(params)
    return AugmentedViews(frame_id=frame_id, views=views, params=records)


def diet_views(
    image: torch.Tensor,
    stage: StageSpec,
    learner_kind: str,
    rng_seed,
    frame_id: str = "",
    n_local: int = N_LOCAL_VIEWS,
    reference_resolution: int = REFERENCE_RESOLUTION,
) -> AugmentedViews:
    """
    Phase-1 views: resized crop and flip, then the stage's diet.

    s is drawn per view; sigma and kernel are rescaled from the reference
    resolution to each view's size.
    """
    _check_image(image)
    rng = numpy_rng(rng_seed)
    resolution = min(image.shape[-2:])
    views, records = [], []
    for kind, size, scale in _view_plan(learner_kind, resolution, n_local):
        view, params = _geometric(image, rng, kind, size, scale)
        drawn = sample_stage_params(stage, rng)
        sigma, kernel = scale_to_resolution(drawn.sigma, drawn.kernel, size, reference_resolution)
        kernel = min(kernel, size if size % 2 else size - 1)
        views.append(gaussian_blur(blend_saturation(view, drawn.s), sigma, kernel))
        params.diet = {"s": drawn.s, "sigma": sigma, "kernel": kernel}
        records.append(params)
    return AugmentedViews(frame_id=frame_id, views=views, params=records)


def from_uint8(array: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 array to a (3, H, W) float image"""
    return torch.from_numpy(np.ascontiguousarray(array)).permute(2, 0, 1).float().div(255.0)


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) float image to an (H, W, 3) uint8 array (the only quantization step)"""
    array = image.detach().clamp(0.0, 1.0).mul(255.0).round().to(torch.uint8)
    return array.permute(1, 2, 0).cpu().numpy()


def load_image(path: Path) -> torch.Tensor:
    with PILImage.open(path) as img:
        return from_uint8(np.asarray(img.convert("RGB")))


def save_image(image: Union[torch.Tensor, np.ndarray], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = image if isinstance(image, np.ndarray) else to_uint8(image)
    PILImage.fromarray(array).save(path, format="PNG", optimize=False)
    return path
