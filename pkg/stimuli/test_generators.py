"""
Tests for the synthetic stimulus generators and the renderer they use
"""
import numpy as np
import pytest
import torch

from ops.errors import DegenerateSceneError
from stimuli.generators import (
    ARROW_ID,
    BALL_ID,
    DEEP_ID,
    SHALLOW_ID,
    TEXTURE_FAMILIES,
    cliff_scenes,
    gen_cliff_views,
    gen_cue_conflict,
    gen_depth_scene,
    gen_rotation_videos,
    gen_silhouettes,
    make_depth_specs,
    make_texture,
    render_depth_scene,
    texture_tile,
)
from stimuli.rasterizer import Camera, RenderObject, cube, render
from stimuli.types import SceneSpec


def flat(color):
    return lambda points: np.broadcast_to(np.asarray(color, dtype=np.float64), (len(points), 3))


def test_render_projects_cube_at_center_and_scales_with_distance():
    areas = []
    for distance in (2.0, 4.0):
        camera = Camera(position=(0, 0, -distance), target=(0, 0, 0), fov_deg=60, resolution=64)
        mesh = cube()
        result = render(camera, [RenderObject(mesh, mesh.transformed(), flat((1, 0, 0)), 7, lit=False)])
        ids = result.ids
        assert ids[32, 32] == 7 and ids[0, 0] == -1
        areas.append((ids == 7).sum())
    # Front face at 1.5 m and 3.5 m
    assert areas[0] == pytest.approx((3.5 / 1.5) ** 2 * areas[1], rel=0.15)


def test_render_depth_buffer_keeps_nearest():
    camera = Camera(position=(0, 0, -3), target=(0, 0, 0), fov_deg=60, resolution=32)
    mesh = cube()
    near = RenderObject(mesh, mesh.transformed(0.5, None, (0, 0, -1)), flat((0, 1, 0)), 1, lit=False)
    far = RenderObject(mesh, mesh.transformed(1.0, None, (0, 0, 1)), flat((0, 0, 1)), 2, lit=False)
    for order in ([near, far], [far, near]):
        result = render(camera, order)
        assert result.ids[16, 16] == 1
        assert np.allclose(result.image[16, 16], (0, 1, 0))


def test_rotation_videos_shapes_and_azimuths():
    data = gen_rotation_videos(n_classes=3, videos_per_class=2, frames_per_video=12, resolution=24, seed=1, test_fraction=0.5)
    assert len(data) == 6
    clip = data.clips[0]
    assert clip.frames.shape == (12, 24, 24, 3)
    assert np.allclose(np.diff(clip.times), 30.0)
    assert sorted({c.label for c in data}) == [0, 1, 2]
    assert {c.split for c in data if c.label == 0} == {"train", "test"}


def test_rotation_videos_deterministic():
    kwargs = dict(n_classes=2, videos_per_class=1, frames_per_video=4, resolution=20, seed=9)
    a, b = gen_rotation_videos(**kwargs), gen_rotation_videos(**kwargs)
    assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a, b))
    c = gen_rotation_videos(**{**kwargs, "seed": 10})
    assert not np.array_equal(a.clips[0].frames, c.clips[0].frames)


def test_rotation_videos_class_count_bounds():
    with pytest.raises(ValueError):
        gen_rotation_videos(n_classes=1, videos_per_class=1, frames_per_video=2, resolution=8)
    with pytest.raises(ValueError):
        gen_rotation_videos(n_classes=8, videos_per_class=1, frames_per_video=2, resolution=8)


def test_rotation_videos_pixel_probe_beats_chance():
    data = gen_rotation_videos(n_classes=4, videos_per_class=6, frames_per_video=8, resolution=24, seed=3, test_fraction=0)
    x_train, y_train, x_test, y_test = [], [], [], []
    for clip in data:
        pixels = clip.frames.reshape(len(clip), -1).astype(np.float64) / 255.0
        x_train.append(pixels[0::2])
        x_test.append(pixels[1::2])
        y_train += [clip.label] * len(pixels[0::2])
        y_test += [clip.label] * len(pixels[1::2])
    x_train, x_test = np.concatenate(x_train), np.concatenate(x_test)
    targets = np.eye(4)[y_train]
    # Ridge-regression linear probe on raw pixels
    gram = x_train @ x_train.T + 1e-2 * np.eye(len(x_train))
    weights = x_train.T @ np.linalg.solve(gram, targets)
    accuracy = np.mean((x_test @ weights).argmax(1) == np.array(y_test))
    assert accuracy > 0.25 + 0.15


def test_scene_spec_label_and_mirror():
    spec = SceneSpec(0, arrow=(0, 0, 1), ball=(0, 0, 3), camera_position=(0, 0, 0), camera_target=(0, 0, 1))
    assert spec.label == 1 and spec.arrow_closer
    mirrored = spec.mirrored()
    assert mirrored.label == 0
    assert mirrored.arrow_distance == pytest.approx(3.0)


def test_scene_spec_rejects_near_ties():
    with pytest.raises(DegenerateSceneError):
        SceneSpec(0, arrow=(0, 0, 2.0), ball=(0, 0, 2.05), camera_position=(0, 0, 0), camera_target=(0, 0, 1))
    with pytest.raises(ValueError):
        SceneSpec(0, (0, 0, 1), (0, 0, 3), (0, 0, 0), (0, 0, 1), kind="maze")


def test_depth_specs_balanced_and_consistent():
    specs = make_depth_specs(1000, seed=4)
    labels = np.array([s.label for s in specs])
    assert abs(labels.mean() - 0.5) <= 0.04
    for spec in specs:
        cam = np.array(spec.camera_position)
        truth = np.linalg.norm(np.subtract(spec.arrow, cam)) < np.linalg.norm(np.subtract(spec.ball, cam))
        assert spec.label == int(truth)
        near, far = sorted((spec.arrow_distance, spec.ball_distance))
        assert far - near >= 0.05 * far


def test_depth_scene_renders_both_markers():
    spec = make_depth_specs(2, seed=2)[0]
    image, label = gen_depth_scene(spec, resolution=64)
    assert image.shape == (3, 64, 64) and image.dtype == torch.float32
    assert label == spec.label
    ids = render_depth_scene(spec, resolution=64).ids
    assert (ids == ARROW_ID).any() and (ids == BALL_ID).any()
    ball = torch.from_numpy(ids == BALL_ID)
    assert (image[0][ball] > image[1][ball]).all()
    again, _ = gen_depth_scene(spec, resolution=64)
    assert torch.equal(image, again)


def test_cliff_views_all_yes_and_deterministic():
    views = gen_cliff_views(seed=0)
    assert len(views) == 3
    assert [label for _, label in views] == [1, 1, 1]
    again = gen_cliff_views(seed=0)
    assert all(torch.equal(a, b) for (a, _), (b, _) in zip(views, again))


def _transition_density(image, mask):
    light = image[..., 1] > 0.5
    pairs = mask[:, 1:] & mask[:, :-1]
    changes = (light[:, 1:] != light[:, :-1]) & pairs
    return changes.sum() / max(pairs.sum(), 1)


def test_cliff_deep_plane_denser_than_shallow():
    for spec, result in cliff_scenes(seed=0):
        assert (result.ids == SHALLOW_ID).sum() > 50 and (result.ids == DEEP_ID).sum() > 50
        shallow = _transition_density(result.image, result.ids == SHALLOW_ID)
        deep = _transition_density(result.image, result.ids == DEEP_ID)
        assert deep > shallow
        assert spec.kind == "cliff_view" and spec.label == 1


def test_cue_conflict_labels_differ():
    data = gen_cue_conflict([0, 1, 2], [0, 1, 2], n=30, seed=0, resolution=32)
    assert len(data) == 30
    for record in data:
        assert record.extra["shape_label"] != record.extra["texture_label"]
        assert record.label == record.extra["shape_label"]
    assert {(r.extra["shape_label"], r.extra["texture_label"]) for r in data} == {
        (s, t) for s in range(3) for t in range(3) if s != t
    }


def test_cue_conflict_fill_matches_texture_source():
    data = gen_cue_conflict([0], [1], n=3, seed=5, resolution=48)
    for record in data:
        image = record.array.astype(np.float64) / 255.0
        mask = ~np.all(record.array == 255, axis=-1)
        assert 0.03 < mask.mean() < 0.8
        source = texture_tile(make_texture(TEXTURE_FAMILIES[1], record.extra["texture_seed"]), 48)
        other = texture_tile(make_texture(TEXTURE_FAMILIES[0], record.extra["texture_seed"]), 48)
        source_error = np.abs(image[mask] - source[mask]).mean()
        other_error = np.abs(image[mask] - other[mask]).mean()
        assert source_error < 0.01
        assert other_error > source_error


def test_silhouettes_binary_area_and_seeded():
    data = gen_silhouettes([0, 1, 2, 3, 4, 5, 6], n=21, seed=2, resolution=48)
    for record in data:
        values = np.unique(record.image().numpy())
        assert set(values.tolist()) <= {0.0, 1.0}
        area = 1.0 - record.image()[0].mean().item()
        assert 0.05 < area < 0.8
    again = gen_silhouettes([0, 1, 2, 3, 4, 5, 6], n=21, seed=2, resolution=48)
    assert all(np.array_equal(a.array, b.array) for a, b in zip(data, again))
