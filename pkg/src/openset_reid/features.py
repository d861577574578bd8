"""Sliding-window HSV + multi-scale block LBP descriptor.

A 48x128 crop is covered by square subwindows of sides 16, 32 and 48 with an
8 pixel stride (125 windows). Each window contributes a 72-bin joint HSV
histogram followed by three 10-bin rotation-invariant uniform LBP histograms,
one per block size. Bins are capped at 255 and square-rooted.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyImage, EvenBlockSide, OutOfRangeChannel, WrongImageSize

N_LBP_CODES = 10
# Clockwise from the top-left block, as (row, col) block offsets.
NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))
_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
# Fixed-point scale for luminance so block sums are exact integers.
_GRAY_LEVELS = 65535


@dataclass(frozen=True)
class FeatureConfig:
    target_size: tuple[int, int] = (48, 128)  # (width, height)
    window_scales: tuple[int, ...] = (16, 32, 48)
    stride: int = 8
    h_bins: int = 8
    s_bins: int = 3
    v_bins: int = 3
    lbp_block_sides: tuple[int, ...] = (3, 7, 11)
    truncation_cap: int = 255
    apply_sqrt: bool = True

    @property
    def color_bins(self) -> int:
        return self.h_bins * self.s_bins * self.v_bins

    @property
    def window_length(self) -> int:
        return self.color_bins + N_LBP_CODES * len(self.lbp_block_sides)

    @property
    def n_windows(self) -> int:
        return len(subwindows(self))

    @property
    def descriptor_length(self) -> int:
        return self.n_windows * self.window_length


DEFAULT_CONFIG = FeatureConfig()


@dataclass(frozen=True, eq=False)
class PixelImage:
    """Row-major RGB image with channels in [0, 1]; ``pixels`` has shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) array, got {px.shape}")
        if px.shape[0] * px.shape[1] == 0:
            raise EmptyImage("image has no pixels")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise OutOfRangeChannel("channels must lie in [0, 1]")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PixelImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)


def load_image(path: str | Path) -> PixelImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return PixelImage(arr)


def save_image(image: PixelImage, path: str | Path) -> None:
    arr = np.rint(image.pixels * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Pixel-center alignment; an equal-size resize maps every sample onto itself.
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize(image: PixelImage, target: tuple[int, int]) -> PixelImage:
    """Bilinear resize to ``target`` = (width, height)."""
    width, height = target
    if width < 1 or height < 1:
        raise EmptyImage(f"target size {target} is empty")
    if (image.width, image.height) == (width, height):
        return image
    px = image.pixels
    r0, r1, fr = _bilinear_axis(image.height, height)
    c0, c1, fc = _bilinear_axis(image.width, width)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = px[r0][:, c0] * (1 - fc) + px[r0][:, c1] * fc
    bottom = px[r1][:, c0] * (1 - fc) + px[r1][:, c1] * fc
    out = top * (1 - fr) + bottom * fr
    return PixelImage(np.clip(out, 0.0, 1.0))


def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised RGB -> (H in degrees [0, 360), S, V). Achromatic pixels get H = S = 0."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    chroma = c > 0
    safe_c = np.where(chroma, c, 1.0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    h = np.where(
        v == r,
        ((g - b) / safe_c) % 6.0,
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(chroma, h * 60.0, 0.0)
    h = np.where(h >= 360.0, h - 360.0, h)
    return h, s, v


def hsv_bin_indices(rgb: np.ndarray, config: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Joint color bin ``(h * s_bins + s) * v_bins + v`` for each pixel."""
    h, s, v = rgb_to_hsv(rgb)
    hb = np.minimum((h / (360.0 / config.h_bins)).astype(np.int64), config.h_bins - 1)
    sb = np.minimum((s * config.s_bins).astype(np.int64), config.s_bins - 1)
    vb = np.minimum((v * config.v_bins).astype(np.int64), config.v_bins - 1)
    return (hb * config.s_bins + sb) * config.v_bins + vb


def rgb_to_hsv_bins(pixel, config: FeatureConfig = DEFAULT_CONFIG) -> tuple[int, int, int]:
    px = np.asarray(pixel, dtype=np.float64)
    if px.shape != (3,):
        raise ValueError("expected an RGB triple")
    if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
        raise OutOfRangeChannel(f"channels out of [0, 1]: {pixel}")
    joint = int(hsv_bin_indices(px, config))
    v = joint % config.v_bins
    s = (joint // config.v_bins) % config.s_bins
    h = joint // (config.v_bins * config.s_bins)
    return h, s, v


def _riu2_table() -> np.ndarray:
    table = np.empty(256, dtype=np.int64)
    for pattern in range(256):
        bits = [(pattern >> i) & 1 for i in range(8)]
        transitions = sum(bits[i] != bits[(i + 1) % 8] for i in range(8))
        table[pattern] = sum(bits) if transitions <= 2 else 9
    return table


RIU2_TABLE = _riu2_table()


def grayscale_levels(image: PixelImage) -> np.ndarray:
    """Luminance quantised to integers in [0, 65535]."""
    gray = image.pixels @ _GRAY_WEIGHTS
    return np.rint(gray * _GRAY_LEVELS).astype(np.int64)


def mblbp_code_map(image: PixelImage, block_side: int) -> np.ndarray:
    """Per-pixel riu2 code of the 3x3 grid of block means centred on each pixel.

    Bit ``i`` of the pattern is set when neighbour block ``i`` (clockwise from
    top-left) has a mean >= the centre block mean.
    """
    if block_side < 1 or block_side % 2 == 0:
        raise EvenBlockSide(f"block side must be odd and positive, got {block_side}")
    gray = grayscale_levels(image)
    h, w = gray.shape
    r = block_side // 2
    pad = block_side + r
    padded = np.pad(gray, pad, mode="edge")
    integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    integral[1:, 1:] = padded.cumsum(0).cumsum(1)

    def block_sums(dy: int, dx: int) -> np.ndarray:
        # Block centred at (y + dy*side, x + dx*side) for every original pixel.
        top = pad + dy * block_side - r
        left = pad + dx * block_side - r
        y0 = slice(top, top + h)
        y1 = slice(top + block_side, top + block_side + h)
        x0 = slice(left, left + w)
        x1 = slice(left + block_side, left + block_side + w)
        return integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]

    center = block_sums(0, 0)
    pattern = np.zeros((h, w), dtype=np.int64)
    for bit, (dy, dx) in enumerate(NEIGHBOR_OFFSETS):
        pattern |= (block_sums(dy, dx) >= center).astype(np.int64) << bit
    return RIU2_TABLE[pattern]


def subwindows(config: FeatureConfig = DEFAULT_CONFIG) -> list[tuple[int, int, int]]:
    """(top, left, side) for every window: scale ascending, then row-major."""
    width, height = config.target_size
    out = []
    for side in sorted(config.window_scales):
        for top in range(0, height - side + 1, config.stride):
            for left in range(0, width - side + 1, config.stride):
                out.append((top, left, side))
    return out


def _window_counts(labels: np.ndarray, n_bins: int, windows: list[tuple[int, int, int]]) -> np.ndarray:
    h, w = labels.shape
    onehot = np.zeros((h, w, n_bins), dtype=np.int64)
    np.put_along_axis(onehot, labels[..., None], 1, axis=2)
    integral = np.zeros((h + 1, w + 1, n_bins), dtype=np.int64)
    integral[1:, 1:] = onehot.cumsum(0).cumsum(1)
    tops = np.array([t for t, _, _ in windows])
    lefts = np.array([l for _, l, _ in windows])
    sides = np.array([s for _, _, s in windows])
    bottoms, rights = tops + sides, lefts + sides
    return (
        integral[bottoms, rights]
        - integral[tops, rights]
        - integral[bottoms, lefts]
        + integral[tops, lefts]
    )


def raw_histograms(image: PixelImage, config: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Untruncated integer counts, shape (n_windows, window_length)."""
    if (image.width, image.height) != tuple(config.target_size):
        raise WrongImageSize(
            f"expected {config.target_size[0]}x{config.target_size[1]}, "
            f"got {image.width}x{image.height}"
        )
    windows = subwindows(config)
    parts = [_window_counts(hsv_bin_indices(image.pixels, config), config.color_bins, windows)]
    for side in sorted(config.lbp_block_sides):
        parts.append(_window_counts(mblbp_code_map(image, side), N_LBP_CODES, windows))
    return np.concatenate(parts, axis=1)


def extract_descriptor(image: PixelImage, config: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    counts = np.minimum(raw_histograms(image, config), config.truncation_cap).astype(np.float64)
    if config.apply_sqrt:
        counts = np.sqrt(counts)
    return counts.reshape(-1)


def describe(image: PixelImage, config: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Resize to the target size, then extract."""
    return extract_descriptor(resize(image, config.target_size), config)
