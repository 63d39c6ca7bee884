"""Image decode/encode, bilinear resizing, and heatmap rendering.

Conventions fixed here and relied on everywhere else:

* Resizing uses the align-corners bilinear convention: output pixel ``j``
  samples source coordinate ``j * (in - 1) / (out - 1)``, so the four image
  corners map onto each other exactly and a 2-pixel ramp upsamples to an
  exact linear ramp.
* Whenever float channel values are quantized back to 8 bits the rounding
  rule is round-half-away-from-zero, i.e. ``sign(x) * floor(|x| + 0.5)``,
  clipped to [0, 255]. It is applied by :func:`quantize_u8` and nowhere else.
* Grayscale-to-model conversion is ``pixel / 255.0`` per channel, optionally
  followed by ``(value - mean) / std`` when the model manifest carries
  per-channel normalization.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import InputError

__all__ = [
    "Image",
    "ColorMap",
    "COLORMAPS",
    "DEFAULT_COLORMAP",
    "decode",
    "write_png",
    "resize_bilinear",
    "resize_plane",
    "colorize",
    "superimpose",
    "image_to_tensor",
    "quantize_u8",
    "heatmap_filename",
]


@dataclass(frozen=True)
class Image:
    """8-bit raster image; ``pixels`` has shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] not in (1, 3) or p.dtype != np.uint8:
            raise InputError(
                f"image pixels must be uint8 with shape (H, W, 1|3), got {p.dtype} {p.shape}"
            )

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class ColorMap:
    """Piecewise-linear palette over [0, 1].

    ``points`` maps strictly increasing positions (first 0.0, last 1.0) to
    RGB triples in 0..255.
    """

    points: tuple[tuple[float, tuple[int, int, int]], ...]

    def __post_init__(self):
        pos = [p for p, _ in self.points]
        if len(pos) < 2 or pos[0] != 0.0 or pos[-1] != 1.0:
            raise InputError("colormap must span positions 0.0 .. 1.0")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise InputError("colormap positions must be strictly increasing")


# Default sequential palette: cold blue through cyan, green, and yellow up to
# warm red. Control values are part of the documented output format.
DEFAULT_COLORMAP = ColorMap((
    (0.00, (0, 0, 255)),
    (0.25, (0, 255, 255)),
    (0.50, (0, 255, 0)),
    (0.75, (255, 255, 0)),
    (1.00, (255, 0, 0)),
))

COLORMAPS: dict[str, ColorMap] = {
    "blue-red": DEFAULT_COLORMAP,
    "gray": ColorMap(((0.0, (0, 0, 0)), (1.0, (255, 255, 255)))),
}


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Round float channel values to uint8 with round-half-away-from-zero."""
    v = np.asarray(values, dtype=np.float64)
    rounded = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(rounded, 0.0, 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# decode / encode
# ---------------------------------------------------------------------------

_PPM_TOKEN = re.compile(rb"^(P6)\s")


def _decode_ppm(data: bytes, path: str) -> Image:
    # Binary PPM: "P6", whitespace/comment-separated width height maxval,
    # single whitespace byte, then raw RGB triples.
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise InputError(f"corrupt PPM header in {path}")
            pos = eol + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise InputError(f"corrupt PPM header in {path}: bad token {token!r}")
        fields.append(int(token))
    pos += 1  # the single whitespace after maxval
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise InputError(f"corrupt PPM header in {path}: non-positive dimensions")
    if maxval != 255:
        raise InputError(f"unsupported PPM maxval {maxval} in {path} (only 255)")
    need = width * height * 3
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise InputError(
            f"truncated PPM {path}: expected {need} pixel bytes, found {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return Image(pixels.copy())


def decode(path: str) -> Image:
    """Decode a PNG or binary PPM (P6) file."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc

    if _PPM_TOKEN.match(data):
        return _decode_ppm(data, path)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with PILImage.open(io.BytesIO(data)) as img:
                img.load()
                if img.mode == "L":
                    arr = np.asarray(img, dtype=np.uint8)[:, :, None]
                else:
                    arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise InputError(f"corrupt PNG {path}: {exc}") from exc
        return Image(arr.copy())
    raise InputError(f"unsupported image format in {path} (expected PNG or PPM P6)")


def write_png(image: Image, path: str) -> None:
    """Write an Image as PNG (grayscale for 1 channel, RGB for 3)."""
    arr = image.pixels[:, :, 0] if image.channels == 1 else image.pixels
    PILImage.fromarray(arr, mode="L" if image.channels == 1 else "RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------

def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1 or n_in == 1:
        return np.zeros(n_out)
    # Multiply before dividing: i*(in-1) is an exact integer, so grid-aligned
    # outputs (the corners in particular) land on exact source coordinates.
    return np.arange(n_out) * float(n_in - 1) / float(n_out - 1)


def resize_plane(plane: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinearly resample one 2-D float plane to (out_h, out_w)."""
    src = np.asarray(plane, dtype=np.float64)
    if src.ndim != 2:
        raise InputError(f"resize expects a 2-d plane, got shape {src.shape}")
    if out_w < 1 or out_h < 1:
        raise InputError(f"resize target must be at least 1x1, got {out_w}x{out_h}")
    h_in, w_in = src.shape

    sx = _source_coords(out_w, w_in)
    sy = _source_coords(out_h, h_in)
    x0 = np.clip(np.floor(sx).astype(np.intp), 0, w_in - 1)
    y0 = np.clip(np.floor(sy).astype(np.intp), 0, h_in - 1)
    x1 = np.minimum(x0 + 1, w_in - 1)
    y1 = np.minimum(y0 + 1, h_in - 1)
    fx = sx - x0
    fy = (sy - y0)[:, None]

    v00 = src[np.ix_(y0, x0)]
    v01 = src[np.ix_(y0, x1)]
    v10 = src[np.ix_(y1, x0)]
    v11 = src[np.ix_(y1, x1)]

    # Lerp through differences: constants reproduce exactly and grid-aligned
    # samples return the source value bit for bit.
    top = v00 + fx * (v01 - v00)
    bottom = v10 + fx * (v11 - v10)
    out = top + fy * (bottom - top)

    # Rounding can overshoot the corner span by an ulp; pin the result inside
    # so min(in) <= out <= max(in) holds exactly.
    lo = np.minimum(np.minimum(v00, v01), np.minimum(v10, v11))
    hi = np.maximum(np.maximum(v00, v01), np.maximum(v10, v11))
    return np.clip(out, lo, hi)


def resize_bilinear(source, out_w: int, out_h: int):
    """Resize an :class:`Image` (per channel, requantized) or a 2-D float map."""
    if isinstance(source, Image):
        planes = [
            quantize_u8(resize_plane(source.pixels[:, :, c].astype(np.float64), out_w, out_h))
            for c in range(source.channels)
        ]
        return Image(np.stack(planes, axis=2))
    return resize_plane(source, out_w, out_h)


# ---------------------------------------------------------------------------
# heatmap rendering
# ---------------------------------------------------------------------------

def colorize(values: np.ndarray, cmap: ColorMap = DEFAULT_COLORMAP) -> Image:
    """Map values in [0, 1] through the palette's piecewise-linear ramp."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise InputError(f"colorize expects a 2-d map, got shape {v.shape}")
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise InputError("colorize expects values in [0, 1]")
    positions = np.array([p for p, _ in cmap.points])
    channels = []
    for ch in range(3):
        ramp = np.array([rgb[ch] for _, rgb in cmap.points], dtype=np.float64)
        channels.append(quantize_u8(np.interp(v, positions, ramp)))
    return Image(np.stack(channels, axis=2))


def _promote(pixels: np.ndarray, channels: int) -> np.ndarray:
    if pixels.shape[2] == channels:
        return pixels
    return np.repeat(pixels, 3, axis=2)  # gray -> RGB


def superimpose(base: Image, heat: Image, alpha: float) -> Image:
    """Blend ``round((1 - alpha) * base + alpha * heat)`` per channel.

    A grayscale side is promoted to RGB when the other side is color.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    if (base.width, base.height) != (heat.width, heat.height):
        raise InputError(
            f"overlay dimension mismatch: base {base.width}x{base.height}, "
            f"heat {heat.width}x{heat.height}"
        )
    channels = max(base.channels, heat.channels)
    b = _promote(base.pixels, channels).astype(np.float64)
    h = _promote(heat.pixels, channels).astype(np.float64)
    return Image(quantize_u8((1.0 - alpha) * b + alpha * h))


def image_to_tensor(image: Image, mean=None, std=None) -> np.ndarray:
    """Convert to a channel-first float64 tensor: pixel/255, then optional
    per-channel (value - mean) / std."""
    t = image.pixels.astype(np.float64).transpose(2, 0, 1) / 255.0
    if mean is not None:
        t = t - np.asarray(mean, dtype=np.float64)[:, None, None]
    if std is not None:
        t = t / np.asarray(std, dtype=np.float64)[:, None, None]
    return t


_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


def heatmap_filename(sample_id: str, class_label: str, suffix: str = "png") -> str:
    """Canonical overlay/sidecar name: ``<sample_id>.<class>.heatmap.<suffix>``.

    Characters outside [A-Za-z0-9._-] in either part become underscores.
    """
    sid = _UNSAFE.sub("_", sample_id)
    label = _UNSAFE.sub("_", class_label)
    return f"{sid}.{label}.heatmap.{suffix}"
