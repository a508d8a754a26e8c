"""
Procedural noise fields - plasma fractal, value-noise octaves and frost layers

All generators take an explicit numpy Generator and never touch global state.
"""
import numpy as np
from scipy import ndimage


def plasma_fractal(rng: np.random.Generator, mapsize: int = 256, wibbledecay: float = 3.0) -> np.ndarray:
    """
    Diamond-square heightmap in [0, 1] of shape (mapsize, mapsize).

    mapsize must be a power of two.
    """
    if mapsize & (mapsize - 1):
        raise ValueError(f"mapsize must be a power of two, got {mapsize}")
    maparray = np.zeros((mapsize, mapsize), dtype=np.float64)
    stepsize = mapsize
    wibble = 100.0

    def wibbledmean(array):
        return array / 4 + wibble * rng.uniform(-wibble, wibble, array.shape)

    def fillsquares():
        corners = maparray[0:mapsize:stepsize, 0:mapsize:stepsize]
        squareaccum = corners + np.roll(corners, shift=-1, axis=0)
        squareaccum += np.roll(squareaccum, shift=-1, axis=1)
        maparray[stepsize // 2 : mapsize : stepsize, stepsize // 2 : mapsize : stepsize] = wibbledmean(squareaccum)

    def filldiamonds():
        size = maparray.shape[0]
        drgrid = maparray[stepsize // 2 : size : stepsize, stepsize // 2 : size : stepsize]
        ulgrid = maparray[0:size:stepsize, 0:size:stepsize]
        ldrsum = drgrid + np.roll(drgrid, 1, axis=0)
        lulsum = ulgrid + np.roll(ulgrid, -1, axis=1)
        ltsum = ldrsum + lulsum
        maparray[0:size:stepsize, stepsize // 2 : size : stepsize] = wibbledmean(ltsum)
        tdrsum = drgrid + np.roll(drgrid, 1, axis=1)
        tulsum = ulgrid + np.roll(ulgrid, -1, axis=0)
        ttsum = tdrsum + tulsum
        maparray[stepsize // 2 : size : stepsize, 0:size:stepsize] = wibbledmean(ttsum)

    while stepsize >= 2:
        fillsquares()
        filldiamonds()
        stepsize //= 2
        wibble /= wibbledecay

    maparray -= maparray.min()
    return maparray / maparray.max()


def value_noise(rng: np.random.Generator, shape, cells: int) -> np.ndarray:
    """Smooth noise in [0, 1]: a random cells x cells lattice upsampled cubically"""
    height, width = shape
    lattice = rng.random((cells + 1, cells + 1))
    field = ndimage.zoom(lattice, (height / (cells + 1), width / (cells + 1)), order=3, mode="grid-wrap")
    field = field[:height, :width]
    if field.shape != (height, width):
        field = np.pad(field, ((0, height - field.shape[0]), (0, width - field.shape[1])), mode="edge")
    return np.clip(field, 0.0, 1.0)


def fractal_noise(
    rng: np.random.Generator, shape, octaves: int = 4, base_cells: int = 4, persistence: float = 0.5
) -> np.ndarray:
    """Sum of value-noise octaves, rescaled to [0, 1]"""
    total = np.zeros(shape, dtype=np.float64)
    amplitude, norm = 1.0, 0.0
    for octave in range(octaves):
        total += amplitude * value_noise(rng, shape, base_cells * 2**octave)
        norm += amplitude
        amplitude *= persistence
    total /= norm
    span = total.max() - total.min()
    return (total - total.min()) / span if span > 0 else np.zeros(shape)


def frost_layer(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """
    Ice-crystal overlay of shape (H, W, 3) in [0, 1].

    Ridged fractal noise gives vein-like crystal edges; a sparse sparkle
    field adds fine grains; the result is tinted pale blue.
    """
    base = fractal_noise(rng, (height, width), octaves=5, base_cells=3, persistence=0.55)
    ridges = 1.0 - np.abs(2.0 * base - 1.0)
    ridges = ridges**3
    sparkle = (rng.random((height, width)) > 0.97).astype(np.float64)
    sparkle = ndimage.gaussian_filter(sparkle, sigma=0.6)
    layer = np.clip(0.75 * ridges + 0.25 * fractal_noise(rng, (height, width), octaves=3) + sparkle, 0.0, 1.0)
    tint = np.array([0.86, 0.92, 1.0])
    return np.clip(layer[..., None] * tint, 0.0, 1.0)
