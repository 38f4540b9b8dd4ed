"""Image I/O, bicubic resampling, degradation and patch sampling.

Images in memory are float32 ``C x H x W`` arrays in [0, 1] unless noted.
Binary Netpbm (P5 grey, P6 RGB, 8-bit) is always available; PNG goes through
Pillow when it is installed.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forward import rng_for


class ImageFormatError(ValueError):
    """Unsupported, malformed or truncated image file."""


@dataclass(frozen=True)
class ImageFile:
    width: int
    height: int
    channels: int
    pixels: np.ndarray  # uint8, C x H x W

    def to_float(self) -> np.ndarray:
        return (self.pixels.astype(np.float32) / 255.0).astype(np.float32)

    @classmethod
    def from_float(cls, img: np.ndarray) -> "ImageFile":
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        q = quantize8(arr)
        return cls(q.shape[2], q.shape[1], q.shape[0], q)


def quantize8(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8 with round-half-up and clipping."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_netpbm(buf: bytes, path) -> ImageFile:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported format (magic {magic!r})")
    pos = 2
    vals = []
    for _ in range(3):
        m = _TOKEN.match(buf, pos)
        if not m or not m.group(1).isdigit():
            raise ImageFormatError(f"{path}: malformed header")
        vals.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = vals
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: non-positive dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise ImageFormatError(f"{path}: only 8-bit images are supported (maxval={maxval})")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise ImageFormatError(f"{path}: malformed header")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    raster = buf[pos : pos + need]
    if len(raster) < need:
        raise ImageFormatError(f"{path}: truncated raster ({len(raster)} of {need} bytes)")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels).transpose(2, 0, 1)
    if maxval != 255:
        px = np.floor(px.astype(np.float64) * 255.0 / maxval + 0.5).astype(np.uint8)
    return ImageFile(width, height, channels, np.ascontiguousarray(px))


def read_image(path) -> ImageFile:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        return _read_png(path)
    return _parse_netpbm(path.read_bytes(), path)


def write_image(img, path) -> None:
    """Write an :class:`ImageFile` or a float ``C x H x W`` array in [0, 1]."""
    if not isinstance(img, ImageFile):
        img = ImageFile.from_float(img)
    path = Path(path)
    if path.suffix.lower() == ".png":
        _write_png(img, path)
        return
    if img.channels not in (1, 3):
        raise ImageFormatError(f"{path}: {img.channels} channels cannot be stored as Netpbm")
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    body = np.ascontiguousarray(img.pixels.transpose(1, 2, 0)).tobytes()
    path.write_bytes(header + body)


def _pillow():
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - optional feature
        raise ImageFormatError("PNG support needs Pillow (pip install acdmsr[png])") from exc
    return Image


def _read_png(path: Path) -> ImageFile:
    Image = _pillow()
    with Image.open(path) as im:
        mode = "L" if im.mode in ("L", "1") else "RGB"
        arr = np.asarray(im.convert(mode), dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return ImageFile(arr.shape[2], arr.shape[1], arr.shape[0], np.ascontiguousarray(arr))


def _write_png(img: ImageFile, path: Path) -> None:
    Image = _pillow()
    arr = img.pixels[0] if img.channels == 1 else img.pixels.transpose(1, 2, 0)
    Image.fromarray(np.ascontiguousarray(arr)).save(path)


# --- resampling -----------------------------------------------------------

CUBIC_A = -0.5


def cubic_kernel(d, a: float = CUBIC_A):
    d = np.abs(np.asarray(d, dtype=np.float64))
    d2, d3 = d * d, d * d * d
    near = (a + 2.0) * d3 - (a + 3.0) * d2 + 1.0
    far = a * d3 - 5.0 * a * d2 + 8.0 * a * d - 4.0 * a
    return np.where(d <= 1.0, near, np.where(d < 2.0, far, 0.0))


def bicubic_weights(n_in: int, n_out: int) -> np.ndarray:
    """``n_out x n_in`` resampling matrix: half-pixel centres, 4 taps, clamped edges."""
    scale = n_in / n_out
    x = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(x).astype(np.int64)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for off in (-1, 0, 1, 2):
        tap = base + off
        w = cubic_kernel(x - tap)
        np.add.at(m, (rows, np.clip(tap, 0, n_in - 1)), w)
    return m


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable Catmull-Rom (a = -0.5) resize of a ``C x H x W`` (or ``H x W``) image."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h} x {out_w}")
    arr = np.asarray(img, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    _, h, w = arr.shape[-3:]
    mh = bicubic_weights(h, out_h)
    mw = bicubic_weights(w, out_w)
    out = mh @ arr @ mw.T
    out = out.astype(np.float32)
    return out[0] if squeeze else out


def degrade(hr: np.ndarray, scale: int, quantize: bool = False) -> np.ndarray:
    """Bicubic downsampling by an integer factor; optionally snap to 8-bit levels."""
    hr = np.asarray(hr)
    h, w = hr.shape[-2:]
    if scale < 1 or h % scale or w % scale:
        raise ValueError(f"image {h}x{w} is not divisible by scale {scale}")
    lr = bicubic_resize(hr, h // scale, w // scale)
    if quantize:
        lr = (quantize8(lr).astype(np.float32) / 255.0).astype(np.float32)
    return lr


def nearest_upsample(img: np.ndarray, scale: int) -> np.ndarray:
    return np.asarray(img).repeat(scale, axis=-2).repeat(scale, axis=-1)


def extract_patches(img: np.ndarray, patch: int, count: int, seed: int) -> list[np.ndarray]:
    """``count`` square patches at seeded uniformly random top-left corners."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if patch < 1 or patch > min(h, w):
        raise ValueError(f"patch size {patch} does not fit a {h}x{w} image")
    rng = rng_for(seed, 0x50415443)
    ys = rng.integers(0, h - patch + 1, size=count)
    xs = rng.integers(0, w - patch + 1, size=count)
    return [np.ascontiguousarray(img[..., y : y + patch, x : x + patch]) for y, x in zip(ys, xs)]


# --- procedural data ------------------------------------------------------


def synth_texture(h: int, w: int, seed: int, channels: int = 3) -> np.ndarray:
    """Seeded sinusoid mixture plus random straight edges and discs, in [0, 1]."""
    rng = rng_for(seed, 0x54455854)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    base = np.zeros((channels, h, w))
    tint = rng.uniform(0.3, 1.0, size=(channels,))
    for _ in range(4):
        f = rng.uniform(0.01, 0.12)
        th = rng.uniform(0, math.pi)
        ph = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.05, 0.2)
        wave = np.sin(2 * math.pi * f * (xx * math.cos(th) + yy * math.sin(th)) + ph)
        base += amp * wave[None] * rng.uniform(0.5, 1.0, size=(channels, 1, 1))
    for _ in range(rng.integers(3, 7)):
        th = rng.uniform(0, 2 * math.pi)
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        side = (xx - cx) * math.cos(th) + (yy - cy) * math.sin(th) > 0
        base += np.where(side, 1.0, -1.0)[None] * rng.uniform(0.05, 0.2) * rng.uniform(-1, 1, size=(channels, 1, 1))
    for _ in range(rng.integers(1, 4)):
        cx, cy, r = rng.uniform(0, w), rng.uniform(0, h), rng.uniform(3, max(4.0, min(h, w) / 4))
        disc = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        base += disc[None] * rng.uniform(-0.3, 0.3, size=(channels, 1, 1))
    img = 0.5 + base * tint[:, None, None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def list_images(directory) -> list[Path]:
    d = Path(directory)
    exts = {".ppm", ".pgm", ".png"}
    return sorted(p for p in d.iterdir() if p.suffix.lower() in exts and p.is_file())
