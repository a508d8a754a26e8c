"""
Corruption suite - 15 distortion types x 5 severities and corrupted-set builder

Severity constants are the ImageNet-C tables; pixel-valued constants
(kernel radii, displacements) are given at 224 px and scale linearly with
the working resolution.
"""
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import torch
from matplotlib import colors as mcolors
from PIL import Image as PILImage
from scipy import ndimage
from tqdm import tqdm

from imaging.noise import frost_layer, plasma_fractal
from imaging.transforms import from_uint8, save_image, to_uint8
from ops.errors import ConfigError, DataError, IngestionError, RegistryError
from ops.seeding import derive_seed, numpy_rng

logger = logging.getLogger(__name__)

REFERENCE_SIZE = 224
SEVERITIES = (1, 2, 3, 4, 5)

SEVERITY_TABLES = {
    "gaussian_noise": [0.08, 0.12, 0.18, 0.26, 0.38],
    "shot_noise": [60, 25, 12, 5, 3],
    "impulse_noise": [0.03, 0.06, 0.09, 0.17, 0.27],
    "defocus_blur": [(3, 0.1), (4, 0.5), (6, 0.5), (8, 0.5), (10, 0.5)],
    "glass_blur": [(0.7, 1, 2), (0.9, 2, 1), (1, 2, 3), (1.1, 3, 2), (1.5, 4, 2)],
    "motion_blur": [(10, 3), (15, 5), (15, 8), (15, 12), (20, 15)],
    "zoom_blur": [(1.0, 1.11, 0.01), (1.0, 1.16, 0.01), (1.0, 1.21, 0.02), (1.0, 1.26, 0.02), (1.0, 1.31, 0.03)],
    "snow": [
        (0.1, 0.3, 3, 0.5, 10, 4, 0.8),
        (0.2, 0.3, 2, 0.5, 12, 4, 0.7),
        (0.55, 0.3, 4, 0.9, 12, 8, 0.7),
        (0.55, 0.3, 4.5, 0.85, 12, 8, 0.65),
        (0.55, 0.3, 2.5, 0.85, 12, 12, 0.55),
    ],
    "frost": [(1, 0.4), (0.8, 0.6), (0.7, 0.7), (0.65, 0.7), (0.6, 0.75)],
    "fog": [(1.5, 2), (2.0, 2), (2.5, 1.7), (2.5, 1.5), (3.0, 1.4)],
    "brightness": [0.1, 0.2, 0.3, 0.4, 0.5],
    "contrast": [0.4, 0.3, 0.2, 0.1, 0.05],
    # (alpha, sigma, affine) as fractions of the image size
    "elastic": [(2, 0.7, 0.1), (2, 0.08, 0.2), (0.05, 0.01, 0.02), (0.07, 0.01, 0.02), (0.12, 0.01, 0.02)],
    "pixelate": [0.6, 0.5, 0.4, 0.3, 0.25],
    "jpeg": [25, 18, 15, 10, 7],
}

FAMILIES = {
    "noise": ["gaussian_noise", "shot_noise", "impulse_noise"],
    "blur": ["defocus_blur", "glass_blur", "motion_blur", "zoom_blur"],
    "weather": ["snow", "frost", "fog", "brightness"],
    "digital": ["contrast", "elastic", "pixelate", "jpeg"],
}

CORRUPTION_TYPES = tuple(name for family in FAMILIES.values() for name in family)

REGISTRY_VERSION = hashlib.sha256(
    json.dumps({"v": 1, "tables": SEVERITY_TABLES, "reference": REFERENCE_SIZE}, sort_keys=True).encode()
).hexdigest()[:16]


@dataclass(frozen=True)
class CorruptionSpec:
    """(type, severity, seed) descriptor of one distortion"""

    type: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.type not in SEVERITY_TABLES:
            raise RegistryError(
                f"Unknown corruption type '{self.type}'. Valid types: {', '.join(CORRUPTION_TYPES)}"
            )
        if isinstance(self.severity, bool) or self.severity not in SEVERITIES:
            raise ValueError(f"Severity must be an integer in 1..5, got {self.severity!r}")

    @property
    def params(self):
        return SEVERITY_TABLES[self.type][self.severity - 1]


def _scale(x: np.ndarray) -> float:
    return min(x.shape[:2]) / REFERENCE_SIZE


def _gray(x: np.ndarray) -> np.ndarray:
    return x @ np.array([0.299, 0.587, 0.114])


def _per_channel(x: np.ndarray, fn) -> np.ndarray:
    return np.stack([fn(x[..., c]) for c in range(x.shape[-1])], axis=-1)


def _clipped_zoom(x: np.ndarray, zoom: float) -> np.ndarray:
    height, width = x.shape[:2]
    ch, cw = int(np.ceil(height / zoom)), int(np.ceil(width / zoom))
    top, left = (height - ch) // 2, (width - cw) // 2
    crop = x[top : top + ch, left : left + cw]
    factors = (zoom, zoom) + (1,) * (x.ndim - 2)
    out = ndimage.zoom(crop, factors, order=1)
    trim_top, trim_left = (out.shape[0] - height) // 2, (out.shape[1] - width) // 2
    out = out[trim_top : trim_top + height, trim_left : trim_left + width]
    if out.shape[:2] != (height, width):
        pad = [(0, height - out.shape[0]), (0, width - out.shape[1])] + [(0, 0)] * (x.ndim - 2)
        out = np.pad(out, pad, mode="edge")
    return out


def _disk(radius: float, alias_blur: float) -> np.ndarray:
    extent = int(np.ceil(radius)) + 2
    coords = np.arange(-extent, extent + 1)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    kernel = (xx**2 + yy**2 <= radius**2).astype(np.float64)
    kernel /= kernel.sum()
    return ndimage.gaussian_filter(kernel, sigma=alias_blur)


def _motion_kernel(radius: int, sigma: float, angle_deg: float) -> np.ndarray:
    """One-sided Gaussian-weighted streak along angle_deg"""
    size = 2 * radius + 1
    kernel = np.zeros((size, size))
    theta = np.deg2rad(angle_deg)
    for step in range(radius + 1):
        weight = np.exp(-(step**2) / (2.0 * sigma**2))
        row = radius - int(round(step * np.sin(theta)))
        col = radius + int(round(step * np.cos(theta)))
        kernel[row, col] += weight
    return kernel / kernel.sum()


def _motion_blur(x: np.ndarray, radius: int, sigma: float, angle_deg: float) -> np.ndarray:
    kernel = _motion_kernel(radius, sigma, angle_deg)
    if x.ndim == 2:
        return ndimage.convolve(x, kernel, mode="nearest")
    return _per_channel(x, lambda ch: ndimage.convolve(ch, kernel, mode="nearest"))


def gaussian_noise(x, c, rng):
    return x + rng.normal(size=x.shape) * c


def shot_noise(x, c, rng):
    return rng.poisson(x * c) / c


def impulse_noise(x, c, rng):
    out = x.copy()
    hit = rng.random(x.shape) < c
    salt = rng.random(x.shape) < 0.5
    out[hit & salt] = 1.0
    out[hit & ~salt] = 0.0
    return out


def defocus_blur(x, c, rng):
    radius = max(1.0, c[0] * _scale(x))
    kernel = _disk(radius, c[1])
    return _per_channel(x, lambda ch: ndimage.convolve(ch, kernel, mode="reflect"))


def glass_blur(x, c, rng):
    scale = _scale(x)
    sigma = c[0] * scale
    delta = max(1, int(round(c[1] * scale)))
    iterations = max(1, int(round(c[2] * scale)))
    out = ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0))
    height, width = x.shape[:2]
    for _ in range(iterations):
        for h in range(height - delta, delta, -1):
            for w in range(width - delta, delta, -1):
                dx, dy = rng.integers(-delta, delta, size=2)
                h_prime, w_prime = h + dy, w + dx
                out[h, w], out[h_prime, w_prime] = out[h_prime, w_prime].copy(), out[h, w].copy()
    return ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0))


def motion_blur(x, c, rng):
    scale = _scale(x)
    radius = max(1, int(round(c[0] * scale)))
    sigma = max(0.5, c[1] * scale)
    return _motion_blur(x, radius, sigma, float(rng.uniform(-45, 45)))


def zoom_blur(x, c, rng):
    zooms = np.arange(*c)
    out = np.zeros_like(x)
    for zoom in zooms:
        out += _clipped_zoom(x, float(zoom))
    return (x + out) / (len(zooms) + 1)


def snow(x, c, rng):
    height, width = x.shape[:2]
    scale = _scale(x)
    layer = rng.normal(size=(height, width), loc=c[0], scale=c[1])
    layer = _clipped_zoom(layer[..., None], c[2])[..., 0]
    layer[layer < c[3]] = 0
    layer = np.clip(layer, 0, 1)
    radius = max(1, int(round(c[4] * scale)))
    sigma = max(0.5, c[5] * scale)
    layer = _motion_blur(layer, radius, sigma, float(rng.uniform(-135, -45)))[..., None]
    x = c[6] * x + (1 - c[6]) * np.maximum(x, _gray(x)[..., None] * 1.5 + 0.5)
    return x + layer + np.rot90(layer, k=2)


def frost(x, c, rng):
    height, width = x.shape[:2]
    return c[0] * x + c[1] * frost_layer(rng, height, width)


def fog(x, c, rng):
    height, width = x.shape[:2]
    mapsize = 1 << int(np.ceil(np.log2(max(height, width, 2))))
    max_val = x.max()
    x = x + c[0] * plasma_fractal(rng, mapsize=mapsize, wibbledecay=c[1])[:height, :width][..., None]
    return x * max_val / (max_val + c[0])


def brightness(x, c, rng):
    hsv = mcolors.rgb_to_hsv(np.clip(x, 0, 1))
    hsv[..., 2] = np.clip(hsv[..., 2] + c, 0, 1)
    return mcolors.hsv_to_rgb(hsv)


def contrast(x, c, rng):
    means = x.mean(axis=(0, 1), keepdims=True)
    return (x - means) * c + means


def elastic(x, c, rng):
    height, width = x.shape[:2]
    size = min(height, width)
    alpha, sigma, affine = c[0] * size, c[1] * size, c[2] * size

    center = np.array([height, width], dtype=np.float64) / 2
    square = min(height, width) // 3
    src = np.array([center + square, [center[0] + square, center[1] - square], center - square])
    dst = src + rng.uniform(-affine, affine, size=src.shape)
    # Inverse affine map: output coordinates -> input coordinates
    design = np.hstack([dst, np.ones((3, 1))])
    inverse, *_ = np.linalg.lstsq(design, src, rcond=None)

    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(height, width)), sigma, mode="reflect") * alpha
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(height, width)), sigma, mode="reflect") * alpha

    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    grid = np.stack([yy + dy, xx + dx, np.ones_like(yy, dtype=np.float64)], axis=-1)
    mapped = grid @ inverse
    coords = [mapped[..., 0], mapped[..., 1]]
    return _per_channel(x, lambda ch: ndimage.map_coordinates(ch, coords, order=1, mode="reflect"))


def _pil(x: np.ndarray) -> PILImage.Image:
    return PILImage.fromarray((np.clip(x, 0, 1) * 255).round().astype(np.uint8))


def pixelate(x, c, rng):
    height, width = x.shape[:2]
    small = _pil(x).resize((max(1, int(width * c)), max(1, int(height * c))), PILImage.BOX)
    return np.asarray(small.resize((width, height), PILImage.BOX), dtype=np.float64) / 255.0


def jpeg(x, c, rng):
    buffer = io.BytesIO()
    _pil(x).save(buffer, format="JPEG", quality=int(c))
    buffer.seek(0)
    with PILImage.open(buffer) as decoded:
        return np.asarray(decoded.convert("RGB"), dtype=np.float64) / 255.0


OPERATORS = {
    "gaussian_noise": gaussian_noise,
    "shot_noise": shot_noise,
    "impulse_noise": impulse_noise,
    "defocus_blur": defocus_blur,
    "glass_blur": glass_blur,
    "motion_blur": motion_blur,
    "zoom_blur": zoom_blur,
    "snow": snow,
    "frost": frost,
    "fog": fog,
    "brightness": brightness,
    "contrast": contrast,
    "elastic": elastic,
    "pixelate": pixelate,
    "jpeg": jpeg,
}


def corrupt(image: torch.Tensor, spec: CorruptionSpec) -> torch.Tensor:
    """
    Apply one corruption; identical (image, spec) gives identical output.

    Args:
        image: (3, H, W) float image in [0, 1]
        spec: corruption descriptor (type, severity, seed)

    Returns:
        Corrupted (3, H, W) float image in [0, 1]
    """
    if not isinstance(spec, CorruptionSpec):
        spec = CorruptionSpec(*spec)
    x = image.detach().cpu().double().permute(1, 2, 0).numpy().copy()
    rng = numpy_rng(spec.seed)
    out = OPERATORS[spec.type](x, spec.params, rng)
    out = np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0)
    return torch.from_numpy(np.ascontiguousarray(out)).permute(2, 0, 1).float()


def parse_types(value: str) -> List[str]:
    """'all', a family name, or a comma list of types"""
    if value in ("all", "", None):
        return list(CORRUPTION_TYPES)
    names = []
    for part in value.split(","):
        part = part.strip()
        names.extend(FAMILIES.get(part, [part]))
    for name in names:
        if name not in SEVERITY_TABLES:
            raise RegistryError(f"Unknown corruption type '{name}'. Valid types: {', '.join(CORRUPTION_TYPES)}")
    return names


def parse_severities(value: str) -> List[int]:
    """'1-5', '1,3,5' or a single level"""
    levels = set()
    try:
        for part in str(value).split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = (int(p) for p in part.split("-", 1))
                levels.update(range(lo, hi + 1))
            elif part:
                levels.add(int(part))
    except ValueError as e:
        raise ConfigError(f"Severities must look like 1-5 or 1,3,5, got {value!r}") from e
    bad = sorted(lv for lv in levels if lv not in SEVERITIES)
    if bad or not levels:
        raise ConfigError(f"Severities must lie in 1..5, got {value!r}")
    return sorted(levels)


@dataclass
class CorruptedDatasetManifest:
    """Rows (one per image x type x severity) plus provenance"""

    source: str
    registry_version: str
    seed: int
    types: List[str]
    severities: List[int]
    rows: List[dict] = field(default_factory=list)
    root: Optional[Path] = None

    MANIFEST_NAME = "manifest.jsonl"
    META_NAME = "corruption_set.json"

    def cells(self) -> set:
        return {(row["type"], row["severity"]) for row in self.rows}

    def image_path(self, row: dict) -> Path:
        return Path(self.root) / row["path"] if self.root else Path(row["path"])

    def write(self, root: Path) -> Path:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        with open(root / self.MANIFEST_NAME, "w") as f:
            for row in self.rows:
                f.write(json.dumps(row, sort_keys=True) + "\n")
        meta = {
            "source": self.source,
            "registry_version": self.registry_version,
            "seed": self.seed,
            "types": self.types,
            "severities": self.severities,
            "n_rows": len(self.rows),
        }
        (root / self.META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True))
        self.root = root
        return root / self.MANIFEST_NAME

    @classmethod
    def read(cls, root: Path) -> "CorruptedDatasetManifest":
        root = Path(root)
        meta_path, rows_path = root / cls.META_NAME, root / cls.MANIFEST_NAME
        if not rows_path.exists() or not meta_path.exists():
            raise IngestionError("Corrupted-set manifest missing", rows_path)
        try:
            meta = json.loads(meta_path.read_text())
            rows = [json.loads(line) for line in rows_path.read_text().splitlines() if line.strip()]
        except json.JSONDecodeError as e:
            raise IngestionError(f"Malformed corrupted-set manifest ({e})", rows_path) from e
        if meta.get("registry_version") != REGISTRY_VERSION:
            logger.warning(
                f"[WARN] Corrupted set {root} built with registry {meta.get('registry_version')}, "
                f"current is {REGISTRY_VERSION}"
            )
        return cls(
            source=meta["source"],
            registry_version=meta["registry_version"],
            seed=meta["seed"],
            types=meta["types"],
            severities=meta["severities"],
            rows=rows,
            root=root,
        )


def _render_one(item, spec: CorruptionSpec, out_root: Path) -> dict:
    image_id, label, image = item
    rel = Path(spec.type) / str(spec.severity) / f"{image_id}.png"
    array = to_uint8(corrupt(image, spec))
    try:
        save_image(array, out_root / rel)
        digest = hashlib.sha256((out_root / rel).read_bytes()).hexdigest()
    except OSError as e:
        raise DataError(f"Cannot write corrupted image {out_root / rel}: {e}") from e
    return {
        "image_id": image_id,
        "type": spec.type,
        "severity": spec.severity,
        "seed": spec.seed,
        "path": rel.as_posix(),
        "sha256": digest,
        "label": label,
    }


def build_corrupted_set(
    dataset,
    types: Sequence[str],
    severities: Iterable[int],
    seed: int,
    out_dir: Path,
    workers: int = 1,
    source: Optional[str] = None,
) -> CorruptedDatasetManifest:
    """
    Corrupt every image at every (type, severity) and write PNGs + manifest.

    Per-image seeds come from (seed, image id, type, severity), so output
    does not depend on worker count or ordering.

    Args:
        dataset: ImageDataset (records expose id, label and image())
        types: corruption type names
        severities: subset of 1..5
        seed: global seed
        out_dir: output root (PNG tree + manifest.jsonl + corruption_set.json)
        workers: thread count

    Returns:
        CorruptedDatasetManifest
    """
    records = list(dataset)
    if not records:
        raise DataError("Cannot build a corrupted set from an empty dataset")
    types = list(types)
    severities = sorted(set(int(s) for s in severities))
    out_root = Path(out_dir)
    specs = [
        (record, CorruptionSpec(t, sev, derive_seed(seed, record.id, t, sev)))
        for record in records
        for t in types
        for sev in severities
    ]
    logger.info(f"Corrupting {len(records)} images x {len(types)} types x {len(severities)} severities")

    def job(pair):
        record, spec = pair
        return _render_one((record.id, record.label, record.image()), spec, out_root)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(tqdm(pool.map(job, specs), total=len(specs), desc="corrupt", unit="img"))

    rows.sort(key=lambda r: (str(r["image_id"]), CORRUPTION_TYPES.index(r["type"]), r["severity"]))
    manifest = CorruptedDatasetManifest(
        source=source or getattr(dataset, "name", "dataset"),
        registry_version=REGISTRY_VERSION,
        seed=seed,
        types=types,
        severities=severities,
        rows=rows,
    )
    manifest.write(out_root)
    logger.info(f"[OK] Corrupted set written: {len(rows)} rows -> {out_root}")
    return manifest


def load_corrupted_image(manifest: CorruptedDatasetManifest, row: dict) -> torch.Tensor:
    path = manifest.image_path(row)
    if not path.exists():
        raise IngestionError("Corrupted image listed in manifest is missing", path)
    with PILImage.open(path) as img:
        return from_uint8(np.asarray(img.convert("RGB")))
