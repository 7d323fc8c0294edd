"""Grayscale image handling: PGM I/O, bilinear resize, CLAHE, augmentation.

Images are 8-bit single-channel rasters. Binary PGM (P5, maxval 255) is the
bit-exact interchange format; JPEG sources are converted once up front (see
scripts/convert_to_pgm.py).

CLAHE follows the classic tile recipe: per-tile 256-bin histogram, bins
clipped at clip_limit * tile_pixels / 256 with the excess redistributed
uniformly over all 256 bins (single pass), CDF-based remapping
round(cdf * 255 / tile_pixels), and bilinear interpolation between the four
surrounding tile mappings. A tile whose raw histogram occupies a single bin
keeps the identity mapping, so constant images pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError
from .rng import Rng


@dataclass
class GrayImage:
    """8-bit single-channel raster; pixels is a (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ParameterError(f"GrayImage needs a non-empty 2-d raster, got {self.pixels.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class ClaheParams:
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0  # multiples of the uniform histogram bin height

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ParameterError("tile counts must be >= 1")
        if self.clip_limit <= 1.0:
            raise ParameterError(f"clip_limit must be > 1, got {self.clip_limit}")


@dataclass
class AugmentParams:
    rotation_deg: float  # in [-15, 15]
    hflip: bool
    zoom: float          # in [0.8, 1.2]
    shear: float         # radians, in [-shear_max, shear_max]


# ------------------------------------------------------------------ PGM (P5)

def _next_token(data: bytes, pos: int):
    """Next whitespace-separated header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos]
        if c in b"#":
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        elif c in b" \t\r\n\x0b\x0c":
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in b" \t\r\n\x0b\x0c#":
        pos += 1
    if start == pos:
        raise FormatError(f"truncated PGM header at byte {start}")
    return data[start:pos], start, pos


def load_pgm(data: bytes) -> GrayImage:
    """Parse binary PGM (P5, maxval 255); errors carry the offending byte offset."""
    if data[:2] != b"P5":
        raise FormatError("not a binary PGM: expected magic 'P5' at byte 0")
    pos = 2
    fields = []
    for _ in range(3):
        tok, start, pos = _next_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"non-numeric PGM header token at byte {start}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"bad PGM dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} at byte {start}; only 255 is handled")
    if pos >= len(data):
        raise FormatError(f"missing whitespace after maxval at byte {pos}")
    pos += 1  # exactly one whitespace byte separates header and payload
    expected = width * height
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes at byte {pos}, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels.copy())


def save_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


# -------------------------------------------------------------------- resize

def _bilinear_grid(in_h: int, in_w: int, out_h: int, out_w: int):
    """Source sample coordinates, align-corners-false convention, edge-clamped."""
    sy = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    return np.clip(sy, 0.0, in_h - 1.0), np.clip(sx, 0.0, in_w - 1.0)


def resize_bilinear_float(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of a 2-d float array (shared by images and heatmaps)."""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"target extents must be >= 1, got {out_h}x{out_w}")
    in_h, in_w = arr.shape
    sy, sx = _bilinear_grid(in_h, in_w, out_h, out_w)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    top = a * (1.0 - fx) + b * fx
    bot = c * (1.0 - fx) + d * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear(img: GrayImage, out_w: int, out_h: int) -> GrayImage:
    if out_h == img.height and out_w == img.width:
        return GrayImage(img.pixels.copy())
    vals = resize_bilinear_float(img.pixels.astype(np.float64), out_h, out_w)
    return GrayImage(np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8))


def normalize(img: GrayImage, dtype=np.float32) -> np.ndarray:
    """Scale 0..255 intensities to [0, 1] as a (1, h, w) tensor."""
    return (img.pixels.astype(dtype) / dtype(255.0))[None, :, :]


# --------------------------------------------------------------------- CLAHE

def _tile_edges(extent: int, tiles: int) -> np.ndarray:
    """Tile boundaries; the last tile absorbs the division remainder."""
    base = extent // tiles
    edges = np.arange(tiles + 1) * base
    edges[-1] = extent
    return edges


def _tile_lut(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) <= 1:
        return np.arange(256, dtype=np.float64)  # single-level tile: identity
    n = tile.size
    limit = clip_limit * n / 256.0
    excess = np.maximum(hist - limit, 0.0).sum()
    hist = np.minimum(hist, limit) + excess / 256.0
    cdf = np.cumsum(hist)
    return np.clip(np.floor(cdf * 255.0 / n + 0.5), 0.0, 255.0)


def clahe(img: GrayImage, p: ClaheParams) -> GrayImage:
    h, w = img.height, img.width
    if p.tiles_x > w or p.tiles_y > h:
        raise ParameterError(f"tile grid {p.tiles_x}x{p.tiles_y} larger than image {w}x{h}")
    ex = _tile_edges(w, p.tiles_x)
    ey = _tile_edges(h, p.tiles_y)
    luts = np.empty((p.tiles_y, p.tiles_x, 256))
    for ty in range(p.tiles_y):
        for tx in range(p.tiles_x):
            luts[ty, tx] = _tile_lut(img.pixels[ey[ty] : ey[ty + 1], ex[tx] : ex[tx + 1]], p.clip_limit)

    # bilinear interpolation between the four surrounding tile centres;
    # pixels beyond the outermost centres clamp to the nearest tile
    cx = (ex[:-1] + ex[1:] - 1) / 2.0
    cy = (ey[:-1] + ey[1:] - 1) / 2.0

    def axis_weights(coords: np.ndarray, centres: np.ndarray):
        hi = np.searchsorted(centres, coords)
        lo = np.clip(hi - 1, 0, len(centres) - 1)
        hi = np.clip(hi, 0, len(centres) - 1)
        span = centres[hi] - centres[lo]
        frac = np.where(span > 0, (coords - centres[lo]) / np.where(span > 0, span, 1.0), 0.0)
        return lo, hi, frac

    x_lo, x_hi, fx = axis_weights(np.arange(w, dtype=np.float64), cx)
    y_lo, y_hi, fy = axis_weights(np.arange(h, dtype=np.float64), cy)
    pix = img.pixels.astype(np.intp)
    yl = y_lo[:, None]
    yh = y_hi[:, None]
    xl = x_lo[None, :]
    xh = x_hi[None, :]
    v00 = luts[yl, xl, pix]
    v01 = luts[yl, xh, pix]
    v10 = luts[yh, xl, pix]
    v11 = luts[yh, xh, pix]
    fxr = fx[None, :]
    fyr = fy[:, None]
    out = (1.0 - fyr) * ((1.0 - fxr) * v00 + fxr * v01) + fyr * ((1.0 - fxr) * v10 + fxr * v11)
    return GrayImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def global_equalize(img: GrayImage) -> GrayImage:
    """Plain global histogram equalisation with the same mapping rule as CLAHE."""
    lut = _tile_lut(img.pixels, float(img.pixels.size) + 256.0)  # limit above any bin
    return GrayImage(lut[img.pixels.astype(np.intp)].astype(np.uint8))


# -------------------------------------------------------------- augmentation

ROTATION_MAX_DEG = 15.0
ZOOM_RANGE = (0.8, 1.2)
SHEAR_MAX_RAD = 0.2


def random_augment_params(rng: Rng, shear_max: float = SHEAR_MAX_RAD) -> AugmentParams:
    """Draw one augmentation parameter set from the seeded stream."""
    return AugmentParams(
        rotation_deg=rng.uniform(lo=-ROTATION_MAX_DEG, hi=ROTATION_MAX_DEG),
        hflip=rng.bernoulli(0.5),
        zoom=rng.uniform(lo=ZOOM_RANGE[0], hi=ZOOM_RANGE[1]),
        shear=rng.uniform(lo=-shear_max, hi=shear_max),
    )


def _augment_matrix(a: AugmentParams, w: int, h: int) -> np.ndarray:
    """Forward affine map (3x3, source -> destination pixel coordinates).

    Order: horizontal flip, then rotation about the image centre, then
    horizontal shear (factor tan(angle)) about the centre, then zoom about
    the centre. Pixel centres sit on integer coordinates.
    """
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    def about_centre(m):
        t_fwd = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
        t_back = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
        return t_fwd @ m @ t_back

    mat = np.eye(3)
    if a.hflip:
        mat = about_centre(np.array([[-1, 0, 0], [0, 1, 0], [0, 0, 1.0]])) @ mat
    if a.rotation_deg != 0.0:
        t = np.deg2rad(a.rotation_deg)
        rot = np.array([[np.cos(t), -np.sin(t), 0], [np.sin(t), np.cos(t), 0], [0, 0, 1.0]])
        mat = about_centre(rot) @ mat
    if a.shear != 0.0:
        shear = np.array([[1, np.tan(a.shear), 0], [0, 1, 0], [0, 0, 1.0]])
        mat = about_centre(shear) @ mat
    if a.zoom != 1.0:
        zoom = np.array([[a.zoom, 0, 0], [0, a.zoom, 0], [0, 0, 1.0]])
        mat = about_centre(zoom) @ mat
    return mat


def apply_augment(img: GrayImage, a: AugmentParams) -> GrayImage:
    """Resample once through the composed affine map; out-of-frame reads 0."""
    h, w = img.height, img.width
    inv = np.linalg.inv(_augment_matrix(a, w, h))
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0
    src = img.pixels.astype(np.float64)
    acc = np.zeros((h, w))
    for dy, dx, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy = y0 + dy
        xx = x0 + dx
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        acc += np.where(ok, src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)] * wgt, 0.0)
    return GrayImage(np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8))
