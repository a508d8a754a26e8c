"""
Minimal software renderer - perspective camera, z-buffered triangles and
ray-cast horizontal planes, all in numpy
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

NEAR_PLANE = 0.02
LIGHT_DIR = np.array([0.35, 0.85, -0.4]) / np.linalg.norm([0.35, 0.85, -0.4])
AMBIENT = 0.45
DIFFUSE = 0.55

Shader = Callable[[np.ndarray], np.ndarray]


def rotation_y(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_x(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_z(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class Camera:
    """Pinhole camera looking from position toward target"""

    position: np.ndarray
    target: np.ndarray
    fov_deg: float = 60.0
    resolution: int = 64
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        forward = self.target - self.position
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        if np.linalg.norm(right) < 1e-9:
            right = np.array([1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        true_up = np.cross(right, forward)
        # Rows map world directions to camera (right, up, forward)
        self.rotation = np.stack([right, true_up, forward])
        self.focal = (self.resolution / 2.0) / np.tan(np.deg2rad(self.fov_deg) / 2.0)
        self.center = self.resolution / 2.0

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.position) @ self.rotation.T

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """World points -> (pixel xy, camera depth)"""
        cam = self.to_camera(points)
        depth = cam[..., 2]
        safe = np.where(np.abs(depth) < 1e-12, 1e-12, depth)
        x = self.focal * cam[..., 0] / safe + self.center
        y = -self.focal * cam[..., 1] / safe + self.center
        return np.stack([x, y], axis=-1), depth

    def pixel_rays(self) -> np.ndarray:
        """World-space ray direction per pixel, scaled so camera depth equals t"""
        coords = np.arange(self.resolution) + 0.5
        xs, ys = np.meshgrid(coords, coords)
        cam = np.stack(
            [(xs - self.center) / self.focal, -(ys - self.center) / self.focal, np.ones_like(xs)], axis=-1
        )
        return cam @ self.rotation


@dataclass
class Mesh:
    """Triangle mesh in object space"""

    vertices: np.ndarray
    faces: np.ndarray

    def transformed(self, scale=1.0, rotation: Optional[np.ndarray] = None, translation=(0.0, 0.0, 0.0)):
        pts = self.vertices * np.asarray(scale, dtype=np.float64)
        if rotation is not None:
            pts = pts @ rotation.T
        return pts + np.asarray(translation, dtype=np.float64)


@dataclass
class RenderObject:
    """A mesh placed in the world with an object-space shader"""

    mesh: Mesh
    world_vertices: np.ndarray
    shader: Shader
    object_id: int
    lit: bool = True


@dataclass
class HorizontalPlane:
    """Textured rectangle y = height, x in [x0, x1], z in [z0, z1]"""

    height: float
    bounds: Tuple[float, float, float, float]
    shader: Shader
    plane_id: int
    lit: bool = False


@dataclass
class RenderResult:
    image: np.ndarray
    depth: np.ndarray
    ids: np.ndarray


def _shade(colors: np.ndarray, normal: np.ndarray) -> np.ndarray:
    lambert = max(0.0, float(normal @ LIGHT_DIR))
    return colors * (AMBIENT + DIFFUSE * lambert)


def render(
    camera: Camera,
    objects: Sequence[RenderObject] = (),
    planes: Sequence[HorizontalPlane] = (),
    background: Optional[np.ndarray] = None,
) -> RenderResult:
    """
    Render planes by ray casting, then rasterize triangles with a z-buffer.

    Returns image (H, W, 3) in [0, 1], camera depth (inf where empty) and
    an id map (-1 background, plane_id or object_id elsewhere).
    """
    res = camera.resolution
    image = np.ones((res, res, 3)) if background is None else np.array(background, dtype=np.float64)
    depth = np.full((res, res), np.inf)
    ids = np.full((res, res), -1, dtype=np.int64)

    if planes:
        rays = camera.pixel_rays()
        for plane in planes:
            x0, x1, z0, z1 = plane.bounds
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                t = (plane.height - camera.position[1]) / rays[..., 1]
                hit = camera.position + t[..., None] * rays
                mask = (t > NEAR_PLANE) & (hit[..., 0] >= x0) & (hit[..., 0] <= x1)
                mask &= (hit[..., 2] >= z0) & (hit[..., 2] <= z1) & (t < depth)
            if not mask.any():
                continue
            colors = plane.shader(hit[mask])
            if plane.lit:
                colors = _shade(colors, np.array([0.0, 1.0, 0.0]))
            image[mask] = colors
            depth[mask] = t[mask]
            ids[mask] = plane.plane_id

    coords = np.arange(res) + 0.5
    for obj in objects:
        screen, z = camera.project(obj.world_vertices)
        for face in obj.mesh.faces:
            zf = z[face]
            if np.any(zf < NEAR_PLANE):
                continue
            p = screen[face]
            area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
            if abs(area) < 1e-12:
                continue
            xmin = max(int(np.floor(p[:, 0].min() - 0.5)), 0)
            xmax = min(int(np.ceil(p[:, 0].max() - 0.5)), res - 1)
            ymin = max(int(np.floor(p[:, 1].min() - 0.5)), 0)
            ymax = min(int(np.ceil(p[:, 1].max() - 0.5)), res - 1)
            if xmin > xmax or ymin > ymax:
                continue
            px, py = np.meshgrid(coords[xmin : xmax + 1], coords[ymin : ymax + 1])
            w0 = (p[2, 0] - p[1, 0]) * (py - p[1, 1]) - (p[2, 1] - p[1, 1]) * (px - p[1, 0])
            w1 = (p[0, 0] - p[2, 0]) * (py - p[2, 1]) - (p[0, 1] - p[2, 1]) * (px - p[2, 0])
            w0, w1 = w0 / area, w1 / area
            w2 = 1.0 - w0 - w1
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
            if not inside.any():
                continue
            # Perspective-correct interpolation through 1/z
            inv_z = w0 / zf[0] + w1 / zf[1] + w2 / zf[2]
            pix_z = 1.0 / inv_z
            region = (slice(ymin, ymax + 1), slice(xmin, xmax + 1))
            visible = inside & (pix_z < depth[region])
            if not visible.any():
                continue
            b0 = (w0 / zf[0] * pix_z)[visible]
            b1 = (w1 / zf[1] * pix_z)[visible]
            b2 = (w2 / zf[2] * pix_z)[visible]
            local = obj.mesh.vertices[face]
            points = b0[:, None] * local[0] + b1[:, None] * local[1] + b2[:, None] * local[2]
            colors = obj.shader(points)
            if obj.lit:
                world = obj.world_vertices[face]
                normal = np.cross(world[1] - world[0], world[2] - world[0])
                norm = np.linalg.norm(normal)
                if norm > 0:
                    normal = normal / norm
                    if normal @ (camera.position - world.mean(axis=0)) < 0:
                        normal = -normal
                    colors = _shade(colors, normal)
            sub_image = image[region]
            sub_depth = depth[region]
            sub_ids = ids[region]
            sub_image[visible] = colors
            sub_depth[visible] = pix_z[visible]
            sub_ids[visible] = obj.object_id

    return RenderResult(image=np.clip(image, 0.0, 1.0), depth=depth, ids=ids)


# ---------------------------------------------------------------- primitives


def _grid_faces(rows: int, cols: int, wrap_cols: bool = True) -> List[Tuple[int, int, int]]:
    faces = []
    span = cols if wrap_cols else cols - 1
    for r in range(rows - 1):
        for c in range(span):
            a = r * cols + c
            b = r * cols + (c + 1) % cols
            d = (r + 1) * cols + c
            e = (r + 1) * cols + (c + 1) % cols
            faces.append((a, b, d))
            faces.append((b, e, d))
    return faces


def cube() -> Mesh:
    v = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = [tri for a, b, c, d in quads for tri in ((a, b, c), (a, c, d))]
    return Mesh(v, np.array(faces))


def uv_sphere(rings: int = 8, segments: int = 12, radius: float = 0.5) -> Mesh:
    verts = []
    for i in range(rings + 1):
        phi = np.pi * i / rings
        for j in range(segments):
            theta = 2 * np.pi * j / segments
            verts.append([radius * np.sin(phi) * np.cos(theta), radius * np.cos(phi), radius * np.sin(phi) * np.sin(theta)])
    return Mesh(np.array(verts), np.array(_grid_faces(rings + 1, segments)))


def _lathe(profile: Sequence[Tuple[float, float]], segments: int = 14) -> Mesh:
    """Revolve (radius, y) profile points around the y axis, capping flat ends"""
    verts = []
    for r, y in profile:
        for j in range(segments):
            theta = 2 * np.pi * j / segments
            verts.append([r * np.cos(theta), y, r * np.sin(theta)])
    faces = _grid_faces(len(profile), segments)
    for idx, (r, y) in ((0, profile[0]), (len(profile) - 1, profile[-1])):
        if r > 1e-9:
            center = len(verts)
            verts.append([0.0, y, 0.0])
            ring = idx * segments
            faces.extend((center, ring + j, ring + (j + 1) % segments) for j in range(segments))
    return Mesh(np.array(verts), np.array(faces))


def cylinder(segments: int = 14) -> Mesh:
    return _lathe([(0.4, -0.5), (0.4, 0.5)], segments)


def cone(segments: int = 14) -> Mesh:
    return _lathe([(0.5, -0.5), (0.0, 0.5)], segments)


def torus(major: int = 12, minor: int = 6, r_major: float = 0.38, r_minor: float = 0.14) -> Mesh:
    verts = []
    for i in range(major):
        u = 2 * np.pi * i / major
        for j in range(minor):
            v = 2 * np.pi * j / minor
            ring = r_major + r_minor * np.cos(v)
            verts.append([ring * np.cos(u), r_minor * np.sin(v), ring * np.sin(u)])
    faces = []
    for i in range(major):
        for j in range(minor):
            a = i * minor + j
            b = i * minor + (j + 1) % minor
            c = ((i + 1) % major) * minor + j
            d = ((i + 1) % major) * minor + (j + 1) % minor
            faces.extend([(a, b, c), (b, d, c)])
    return Mesh(np.array(verts), np.array(faces))


def pyramid() -> Mesh:
    v = np.array([[-0.5, -0.5, -0.5], [0.5, -0.5, -0.5], [0.5, -0.5, 0.5], [-0.5, -0.5, 0.5], [0.0, 0.5, 0.0]])
    faces = [(0, 1, 2), (0, 2, 3), (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    return Mesh(v, np.array(faces))


def octahedron() -> Mesh:
    v = np.array([[0.5, 0, 0], [-0.5, 0, 0], [0, 0.55, 0], [0, -0.55, 0], [0, 0, 0.5], [0, 0, -0.5]], dtype=np.float64)
    faces = [(0, 2, 4), (4, 2, 1), (1, 2, 5), (5, 2, 0), (0, 4, 3), (4, 1, 3), (1, 5, 3), (5, 0, 3)]
    return Mesh(v, np.array(faces))


def arrow_marker(segments: int = 10) -> Mesh:
    """Downward-pointing pin: shaft plus cone head whose tip sits at the origin"""
    profile = [(0.0, 0.0), (0.35, 0.45), (0.14, 0.45), (0.14, 1.0)]
    return _lathe(profile, segments)


PRIMITIVES = {
    "cube": cube,
    "sphere": uv_sphere,
    "cylinder": cylinder,
    "cone": cone,
    "torus": torus,
    "pyramid": pyramid,
    "octahedron": octahedron,
}
