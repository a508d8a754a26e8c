"""
Synthetic stimulus generators - rotating textured objects, depth-order
scenes, visual-cliff views, cue-conflict images and silhouettes

Every generator is a pure function of its seed.
"""
import logging
from dataclasses import dataclass
from functools import partial
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from matplotlib.colors import hsv_to_rgb
from tqdm import tqdm

from imaging.noise import fractal_noise
from imaging.transforms import from_uint8
from ops.errors import DegenerateSceneError
from ops.seeding import derive_seed, numpy_rng
from stimuli.rasterizer import (
    PRIMITIVES,
    Camera,
    HorizontalPlane,
    RenderObject,
    RenderResult,
    Shader,
    arrow_marker,
    render,
    rotation_x,
    rotation_y,
    rotation_z,
    uv_sphere,
)
from stimuli.sampling import split_instances
from stimuli.types import ImageDataset, ImageRecord, SceneSpec, VideoClip, VideoDataset

logger = logging.getLogger(__name__)

SHAPE_FAMILIES = tuple(PRIMITIVES)
TEXTURE_FAMILIES = ("stripes", "checker", "dots", "rings", "blotches", "waves", "grid")
# Cycles per object-space unit
BASE_FREQUENCY = {
    "stripes": 4.0,
    "checker": 3.0,
    "dots": 4.0,
    "rings": 4.0,
    "blotches": 2.5,
    "waves": 3.0,
    "grid": 3.5,
}

ARROW_COLOR = np.array([0.1, 0.75, 0.2])
BALL_COLOR = np.array([0.85, 0.1, 0.1])
DEPTH_ARROW_HEIGHT = 0.4
DEPTH_BALL_RADIUS = 0.15
CLIFF_ARROW_HEIGHT = 0.15
CLIFF_BALL_RADIUS = 0.15
CLIFF_EDGE_M = 0.5
CLIFF_ARROW_Z = 0.4
SHALLOW_ID, DEEP_ID, ARROW_ID, BALL_ID = 1, 2, 10, 11
# Size factor for thin shape families in shape-only images
SILHOUETTE_SIZE = {"torus": 1.25}

DEFAULT_CLIFF = {
    "shallow_depth_m": 0.05,
    "deep_depth_m": 1.2,
    "checker_period_m": 0.1,
    "eye_heights_m": [0.25, 0.35, 0.45],
    "tilts_deg": [35.0, 30.0, 25.0],
    "fov_deg": 60.0,
}


def class_names(n_classes: int) -> Tuple[str, ...]:
    return SHAPE_FAMILIES[:n_classes]


def _quantize(array: np.ndarray) -> np.ndarray:
    return (np.clip(array, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def _flat(color) -> Shader:
    color = np.asarray(color, dtype=np.float64)
    return lambda points: np.broadcast_to(color, (len(points), 3))


# ---------------------------------------------------------------- textures


@dataclass(frozen=True, eq=False)
class TextureParams:
    """One instance of a texture family: two colors, a frequency and orientations"""

    family: str
    color_a: np.ndarray
    color_b: np.ndarray
    frequency: float
    directions: np.ndarray
    phase: float


def make_texture(family: str, seed) -> TextureParams:
    if family not in BASE_FREQUENCY:
        raise ValueError(f"Unknown texture family {family!r}; expected one of {TEXTURE_FAMILIES}")
    rng = numpy_rng(seed)
    hue = rng.random()
    color_a = hsv_to_rgb([hue, rng.uniform(0.5, 0.9), rng.uniform(0.65, 0.95)])
    color_b = hsv_to_rgb([(hue + rng.uniform(0.3, 0.7)) % 1.0, rng.uniform(0.3, 0.8), rng.uniform(0.12, 0.4)])
    directions = rng.normal(size=(3, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return TextureParams(
        family=family,
        color_a=np.asarray(color_a),
        color_b=np.asarray(color_b),
        frequency=BASE_FREQUENCY[family] * rng.uniform(0.8, 1.25),
        directions=directions,
        phase=float(rng.uniform(0.0, 1.0)),
    )


def texture_mask(params: TextureParams, points: np.ndarray) -> np.ndarray:
    """Boolean pattern of the texture evaluated at (N, 3) points"""
    p = np.asarray(points, dtype=np.float64) * params.frequency
    d0, d1, d2 = params.directions
    two_pi = 2.0 * np.pi
    family = params.family
    if family == "stripes":
        return np.sin(two_pi * (p @ d0) + two_pi * params.phase) > 0
    if family == "checker":
        return (np.floor(p + params.phase).sum(axis=1) % 2) == 0
    if family == "dots":
        q = p + params.phase
        return np.linalg.norm(q - np.round(q), axis=1) < 0.32
    if family == "rings":
        return np.sin(two_pi * np.linalg.norm(p, axis=1) + two_pi * params.phase) > 0
    if family == "blotches":
        field = np.sin(two_pi * (p @ d0) + params.phase) + np.sin(two_pi * 0.7 * (p @ d1)) + np.sin(two_pi * 1.3 * (p @ d2))
        return field > 0.6
    if family == "waves":
        return np.sin(two_pi * (p @ d0) + 1.2 * np.sin(two_pi * (p @ d1)) + two_pi * params.phase) > 0
    if family == "grid":
        q = p + params.phase
        return (np.abs(q - np.round(q)) > 0.4).any(axis=1)
    raise ValueError(f"Unknown texture family {family!r}")


def texture_colors(params: TextureParams, points: np.ndarray) -> np.ndarray:
    return np.where(texture_mask(params, points)[:, None], params.color_a, params.color_b)


def texture_tile(params: TextureParams, size: int, extent: float = 1.2) -> np.ndarray:
    """(size, size, 3) image of the texture on the plane z = const"""
    coords = (np.arange(size) + 0.5) / size * extent - extent / 2
    xs, ys = np.meshgrid(coords, -coords)
    points = np.stack([xs.ravel(), ys.ravel(), np.full(xs.size, 0.137)], axis=1)
    return texture_colors(params, points).reshape(size, size, 3)


def _background(rng: np.random.Generator, resolution: int) -> np.ndarray:
    c1, c2 = rng.uniform(0.2, 0.9, size=(2, 3))
    noise = fractal_noise(rng, (resolution, resolution), octaves=3, base_cells=2)[..., None]
    return c1 * (1.0 - noise) + c2 * noise


# ---------------------------------------------------------------- rotation videos


def render_rotation(cls: int, seed, frames_per_video: int, resolution: int) -> Tuple[np.ndarray, Tuple[float, ...]]:
    """Render one instance of class cls rotating a full turn about the vertical axis"""
    rng = numpy_rng(seed)
    mesh = PRIMITIVES[SHAPE_FAMILIES[cls]]()
    texture = make_texture(TEXTURE_FAMILIES[cls], derive_seed(seed, "texture"))
    scale = rng.uniform(0.85, 1.15) * rng.uniform(0.85, 1.15, size=3)
    tilt = rotation_x(rng.uniform(-20, 20)) @ rotation_z(rng.uniform(-15, 15))
    elevation = np.deg2rad(rng.uniform(10, 30))
    distance = rng.uniform(2.4, 2.9)
    camera = Camera(
        position=np.array([0.0, distance * np.sin(elevation), -distance * np.cos(elevation)]),
        target=np.zeros(3),
        fov_deg=45.0,
        resolution=resolution,
    )
    background = _background(rng, resolution)
    shader = partial(texture_colors, texture)

    azimuths = tuple(360.0 * k / frames_per_video for k in range(frames_per_video))
    frames = np.empty((frames_per_video, resolution, resolution, 3), dtype=np.uint8)
    for k, azimuth in enumerate(azimuths):
        world = mesh.transformed(scale, rotation_y(azimuth) @ tilt)
        result = render(camera, [RenderObject(mesh, world, shader, 1)], background=background)
        frames[k] = _quantize(result.image)
    return frames, azimuths


def gen_rotation_videos(
    n_classes: int = 5,
    videos_per_class: int = 40,
    frames_per_video: int = 36,
    resolution: int = 64,
    seed: int = 0,
    test_fraction: float = 0.2,
    show_progress: bool = False,
) -> VideoDataset:
    """
    Textured primitives rotating through 360 degrees on noisy backgrounds.

    Class i is shape family SHAPE_FAMILIES[i] with texture family
    TEXTURE_FAMILIES[i]; size, proportions, tilt, colors, texture
    frequency and background vary per instance. Whole instances are
    assigned to the train or test split.
    """
    if not 2 <= n_classes <= len(SHAPE_FAMILIES):
        raise ValueError(f"n_classes must be in [2, {len(SHAPE_FAMILIES)}], got {n_classes}")
    if frames_per_video < 2:
        raise ValueError(f"frames_per_video must be >= 2, got {frames_per_video}")

    ids = [f"rot-c{cls}-v{v:03d}" for cls in range(n_classes) for v in range(videos_per_class)]
    labels = [cls for cls in range(n_classes) for _ in range(videos_per_class)]
    splits = split_instances(ids, labels, test_fraction, seed)

    clips = []
    for clip_id, cls in tqdm(list(zip(ids, labels)), desc="rotation", disable=not show_progress):
        frames, azimuths = render_rotation(cls, derive_seed(seed, "rotation", clip_id), frames_per_video, resolution)
        clips.append(VideoClip(clip_id, frames, azimuths, label=cls, split=splits[clip_id]))
    logger.info(f"[OK] Rendered {len(clips)} rotation clips ({n_classes} classes, {frames_per_video} frames)")
    return VideoDataset("rotation", tuple(clips), class_names(n_classes))


# ---------------------------------------------------------------- depth order


def make_depth_specs(n: int, seed: int = 0, min_gap_fraction: float = 0.05) -> List[SceneSpec]:
    """
    Rejection-sample n depth-order scenes with exactly balanced labels.

    Positions lie on the ground within a 20 degree cone ahead of the
    camera, 1.5 to 5.5 m away.
    """
    targets = numpy_rng(derive_seed(seed, "depth-labels")).permutation([i % 2 == 0 for i in range(n)])
    specs = []
    for i in range(n):
        scene_seed = derive_seed(seed, "depth", i)
        rng = numpy_rng(scene_seed)
        want_yes = bool(targets[i])
        while True:
            height = rng.uniform(1.2, 1.8)
            pitch = np.deg2rad(rng.uniform(20, 35))
            position = np.array([0.0, height, 0.0])
            target = position + np.array([0.0, -np.sin(pitch), np.cos(pitch)])
            radii = rng.uniform(1.5, 5.5, size=2)
            angles = np.deg2rad(rng.uniform(-20, 20, size=2))
            ground = np.stack([radii * np.sin(angles), np.zeros(2), radii * np.cos(angles)], axis=1)
            near_first = np.linalg.norm(ground[0] - position) < np.linalg.norm(ground[1] - position)
            arrow, ball = (ground[0], ground[1]) if near_first == want_yes else (ground[1], ground[0])
            ball = ball + np.array([0.0, DEPTH_BALL_RADIUS, 0.0])
            try:
                spec = SceneSpec(
                    seed=scene_seed,
                    arrow=arrow,
                    ball=ball,
                    camera_position=position,
                    camera_target=target,
                    fov_deg=60.0,
                    min_gap_fraction=min_gap_fraction,
                )
            except DegenerateSceneError:
                continue
            if spec.arrow_closer == want_yes:
                specs.append(spec)
                break
    return specs


def _ground_shader(seed) -> Shader:
    rng = numpy_rng(derive_seed(seed, "ground"))
    tile = fractal_noise(rng, (128, 128), octaves=4, base_cells=4)
    c1 = np.array([0.32, 0.42, 0.22]) + rng.uniform(-0.05, 0.05, 3)
    c2 = np.array([0.58, 0.52, 0.4]) + rng.uniform(-0.05, 0.05, 3)
    tile_m = 2.0

    def shader(points):
        u = ((points[:, 0] / tile_m) % 1.0 * 128).astype(int) % 128
        v = ((points[:, 2] / tile_m) % 1.0 * 128).astype(int) % 128
        n = tile[v, u][:, None]
        return c1 * (1.0 - n) + c2 * n

    return shader


def _sky(resolution: int) -> np.ndarray:
    ramp = np.linspace(0.0, 1.0, resolution)[:, None, None]
    top, bottom = np.array([0.55, 0.7, 0.9]), np.array([0.85, 0.9, 0.95])
    return np.broadcast_to(top * (1 - ramp) + bottom * ramp, (resolution, resolution, 3)).copy()


def _markers(spec: SceneSpec, arrow_height: float, ball_radius: float) -> List[RenderObject]:
    arrow = arrow_marker()
    ball = uv_sphere()
    return [
        RenderObject(arrow, arrow.transformed(arrow_height, None, spec.arrow), _flat(ARROW_COLOR), ARROW_ID),
        RenderObject(ball, ball.transformed(2 * ball_radius, None, spec.ball), _flat(BALL_COLOR), BALL_ID),
    ]


def render_depth_scene(spec: SceneSpec, resolution: int = 64) -> RenderResult:
    camera = Camera(spec.camera_position, spec.camera_target, spec.fov_deg, resolution)
    ground = HorizontalPlane(0.0, (-30.0, 30.0, -1.0, 60.0), _ground_shader(spec.seed), plane_id=0)
    return render(camera, _markers(spec, DEPTH_ARROW_HEIGHT, DEPTH_BALL_RADIUS), [ground], background=_sky(resolution))


def gen_depth_scene(spec: SceneSpec, resolution: int = 64) -> Tuple[torch.Tensor, int]:
    """Render a green arrow and a red ball on textured ground; label 1 if the arrow is closer"""
    result = render_depth_scene(spec, resolution)
    return from_uint8(_quantize(result.image)), spec.label


def gen_depth_dataset(n: int, seed: int = 0, resolution: int = 64, split: str = "train", min_gap_fraction: float = 0.05) -> ImageDataset:
    records = []
    specs = make_depth_specs(n, derive_seed(seed, split), min_gap_fraction)
    for i, spec in enumerate(tqdm(specs, desc=f"depth/{split}", disable=n < 200)):
        array = _quantize(render_depth_scene(spec, resolution).image)
        records.append(ImageRecord(f"depth-{split}-{i:05d}", spec.label, array=array, split=split, extra=spec.to_dict()))
    return ImageDataset("depth", tuple(records), ("no", "yes"))


# ---------------------------------------------------------------- visual cliff


def _checker_shader(period: float, offset: np.ndarray) -> Shader:
    light, dark = np.array([0.95, 0.93, 0.9]), np.array([0.78, 0.18, 0.2])

    def shader(points):
        parity = (np.floor((points[:, 0] + offset[0]) / period) + np.floor((points[:, 2] + offset[1]) / period)) % 2
        return np.where(parity[:, None] == 0, light, dark)

    return shader


def cliff_scenes(seed: int = 0, resolution: int = 64, settings: Optional[Mapping] = None) -> List[Tuple[SceneSpec, RenderResult]]:
    """
    Three egocentric views over a glass-covered two-level checkerboard.

    The shallow plane sits just under the glass on the near side; the deep
    plane lies far below on the far side. The arrow stands on the shallow
    plane and the ball rests on the deep plane, placed far enough past the
    edge to be visible over it.
    """
    cfg = {**DEFAULT_CLIFF, **(settings or {})}
    shallow, deep = float(cfg["shallow_depth_m"]), float(cfg["deep_depth_m"])
    period = float(cfg["checker_period_m"])
    rng = numpy_rng(derive_seed(seed, "cliff"))
    offset = rng.uniform(0.0, period, size=2)
    planes = [
        HorizontalPlane(-shallow, (-3.0, 3.0, -1.0, CLIFF_EDGE_M), _checker_shader(period, offset), SHALLOW_ID),
        HorizontalPlane(-deep, (-3.0, 3.0, CLIFF_EDGE_M, CLIFF_EDGE_M + 6.0), _checker_shader(period, offset), DEEP_ID),
    ]
    views = []
    for view, (height, tilt) in enumerate(zip(cfg["eye_heights_m"], cfg["tilts_deg"])):
        height, tilt = float(height), np.deg2rad(float(tilt))
        position = np.array([0.0, height, 0.0])
        target = position + np.array([0.0, -np.sin(tilt), np.cos(tilt)])
        ball_z = 1.25 * CLIFF_EDGE_M * (height + deep) / (height + shallow)
        spec = SceneSpec(
            seed=derive_seed(seed, "cliff", view),
            arrow=(rng.uniform(-0.05, 0.05), -shallow, CLIFF_ARROW_Z),
            ball=(rng.uniform(-0.1, 0.1), -deep + CLIFF_BALL_RADIUS, ball_z),
            camera_position=position,
            camera_target=target,
            fov_deg=float(cfg["fov_deg"]),
            kind="cliff_view",
        )
        camera = Camera(spec.camera_position, spec.camera_target, spec.fov_deg, resolution)
        background = np.full((resolution, resolution, 3), 0.82)
        result = render(camera, _markers(spec, CLIFF_ARROW_HEIGHT, CLIFF_BALL_RADIUS), planes, background=background)
        views.append((spec, result))
    return views


def gen_cliff_views(seed: int = 0, resolution: int = 64, settings: Optional[Mapping] = None) -> List[Tuple[torch.Tensor, int]]:
    """Three (image, label) pairs; the label is 1 (arrow closer) for every view"""
    return [(from_uint8(_quantize(result.image)), spec.label) for spec, result in cliff_scenes(seed, resolution, settings)]


def gen_cliff_dataset(seed: int = 0, resolution: int = 64, settings: Optional[Mapping] = None) -> ImageDataset:
    """The three cliff views as a test-split image set, scene geometry in extra"""
    records = [
        ImageRecord(f"cliff-{view + 1}", spec.label, array=_quantize(result.image), split="test", extra=spec.to_dict())
        for view, (spec, result) in enumerate(cliff_scenes(seed, resolution, settings))
    ]
    return ImageDataset("cliff", tuple(records), ("no", "yes"))


# ---------------------------------------------------------------- shape-only images


def render_shape_mask(shape: str, rng: np.random.Generator, resolution: int) -> np.ndarray:
    """Boolean silhouette of a randomly posed instance of a shape family"""
    mesh = PRIMITIVES[shape]()
    scale = SILHOUETTE_SIZE.get(shape, 1.0) * rng.uniform(0.8, 1.0) * rng.uniform(0.9, 1.1, size=3)
    spin = rotation_y(rng.uniform(0, 360))
    rotation = rotation_x(rng.uniform(25, 50)) @ spin
    elevation = np.deg2rad(rng.uniform(5, 25))
    distance = 2.8
    camera = Camera(
        position=np.array([0.0, distance * np.sin(elevation), -distance * np.cos(elevation)]),
        target=np.zeros(3),
        fov_deg=40.0,
        resolution=resolution,
    )
    result = render(camera, [RenderObject(mesh, mesh.transformed(scale, rotation), _flat((0.0, 0.0, 0.0)), 1, lit=False)])
    return result.ids >= 0


def gen_cue_conflict(
    shape_classes: Sequence[int], texture_classes: Sequence[int], n: int, seed: int = 0, resolution: int = 64
) -> ImageDataset:
    """
    Silhouettes of one class filled with the texture of another.

    Each record's label is the shape class; extra carries shape_label,
    texture_label and the texture_seed that reproduces the fill.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    pairs = [(s, t) for s in shape_classes for t in texture_classes if s != t]
    if not pairs:
        raise ValueError("No (shape, texture) pair with distinct classes")
    order = numpy_rng(derive_seed(seed, "cue-pairs")).permutation(len(pairs))
    records = []
    for i in range(n):
        shape_cls, texture_cls = pairs[order[i % len(pairs)]]
        rng = numpy_rng(derive_seed(seed, "cue", i))
        mask = render_shape_mask(SHAPE_FAMILIES[shape_cls], rng, resolution)
        texture_seed = derive_seed(seed, "cue-texture", i)
        tile = texture_tile(make_texture(TEXTURE_FAMILIES[texture_cls], texture_seed), resolution)
        image = np.where(mask[..., None], tile, 1.0)
        records.append(
            ImageRecord(
                f"cue-{i:04d}",
                int(shape_cls),
                array=_quantize(image),
                split="test",
                extra={"shape_label": int(shape_cls), "texture_label": int(texture_cls), "texture_seed": texture_seed},
            )
        )
    return ImageDataset("cue_conflict", tuple(records), SHAPE_FAMILIES)


def gen_silhouettes(shape_classes: Sequence[int], n: int, seed: int = 0, resolution: int = 64) -> ImageDataset:
    """Black-on-white silhouettes cycling through shape_classes"""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    records = []
    for i in range(n):
        cls = shape_classes[i % len(shape_classes)]
        mask = render_shape_mask(SHAPE_FAMILIES[cls], numpy_rng(derive_seed(seed, "silhouette", i)), resolution)
        array = np.where(mask[..., None], 0, 255).astype(np.uint8).repeat(3, axis=2)
        records.append(ImageRecord(f"sil-{i:04d}", int(cls), array=array, split="test"))
    return ImageDataset("silhouettes", tuple(records), SHAPE_FAMILIES)

