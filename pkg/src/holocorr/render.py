"""Static raster rendering of point clouds as binary PGM images."""
from __future__ import annotations

import warnings

import numpy as np

from .errors import HoloCorrWarning, ValidationError
from .measures import WeightedPointCloud
from .numerics import is_infinite


def density_image(
    cloud: WeightedPointCloud,
    size: int = 256,
    center: complex = 0j,
    radius: float = 2.5,
) -> np.ndarray:
    """8-bit grayscale image of log(1 + mass) binned over a square window.

    Row 0 is the top edge (largest imaginary part).
    """
    if size < 1:
        raise ValidationError("image size must be positive")
    if not radius > 0:
        raise ValidationError("window radius must be positive")
    z = cloud.values
    finite = ~is_infinite(z)
    z, w = z[finite], cloud.weights[finite]
    x = (z.real - center.real + radius) / (2 * radius) * size
    y = (center.imag + radius - z.imag) / (2 * radius) * size
    inside = (x >= 0) & (x < size) & (y >= 0) & (y < size)
    img = np.zeros((size, size), dtype=np.uint8)
    if not inside.any():
        warnings.warn("no cloud points fall inside the render window", HoloCorrWarning, stacklevel=2)
        return img
    hist = np.zeros((size, size))
    np.add.at(hist, (y[inside].astype(int), x[inside].astype(int)), w[inside])
    shade = np.log1p(hist / hist.max() * 1e4) / np.log1p(1e4)
    return np.round(shade * 255).astype(np.uint8)


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise ValidationError("not a binary PGM image")
    w, h = int(parts[1]), int(parts[2])
    header_len = len(b" ".join(parts[:4])) + 1
    pixels = np.frombuffer(data[header_len:header_len + w * h], dtype=np.uint8)
    return pixels.reshape(h, w)


def render_cloud(cloud: WeightedPointCloud, path, size: int = 256, center: complex = 0j, radius: float = 2.5) -> bytes:
    data = encode_pgm(density_image(cloud, size=size, center=center, radius=radius))
    with open(path, "wb") as fh:
        fh.write(data)
    return data
