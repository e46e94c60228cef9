"""Text-line image preprocessing for a 384x384 ViT canvas.

A variable-width line image is flipped (Arabic reads right to left, the
canvas fills left to right), height-standardized to 64 px, and cut into
384-wide segments stacked top to bottom. Geometry is recorded so the strip
can be reconstructed exactly whenever no resampling happened.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, ValidationError

CANVAS_SIZE = 384
STRIP_HEIGHT = 64
PATCH_SIZE = 16
ROW_CAPACITY = CANVAS_SIZE // STRIP_HEIGHT          # 6 strip rows
MAX_STRIP_WIDTH = ROW_CAPACITY * CANVAS_SIZE        # 2304 px

SIDECAR_SCHEMA = "block-canvas-v1"


@dataclass
class LineImage:
    """Grayscale text-line strip, intensities in [0, 1]."""

    pixels: np.ndarray
    height_px: int
    width_px: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.height_px < 1 or self.width_px < 1:
            raise ValidationError("line image must be at least 1x1")
        if self.pixels.shape != (self.height_px, self.width_px):
            raise ValidationError(
                f"pixel grid {self.pixels.shape} does not match "
                f"({self.height_px}, {self.width_px})"
            )
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValidationError("pixel intensities must lie in [0, 1]")

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "LineImage":
        pixels = np.asarray(pixels, dtype=np.float32)
        if pixels.ndim != 2:
            raise ValidationError("line image array must be 2-D")
        return cls(pixels=pixels, height_px=pixels.shape[0], width_px=pixels.shape[1])


@dataclass
class BlockCanvas:
    """384x384 canvas holding a chunked strip plus reconstruction metadata.

    ``naive`` marks canvases produced by the aspect-ratio-ignoring baseline;
    they carry degenerate metadata and cannot be unpacked.
    """

    pixels: np.ndarray
    strip_width_px: int
    rows_used: int
    strip_height_px: int = STRIP_HEIGHT
    lossy: bool = False
    naive: bool = False

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.shape != (CANVAS_SIZE, CANVAS_SIZE):
            raise ValidationError(f"canvas must be {CANVAS_SIZE}x{CANVAS_SIZE}")
        if CANVAS_SIZE % self.strip_height_px != 0:
            raise ValidationError("strip height must divide the canvas size")
        capacity = CANVAS_SIZE // self.strip_height_px
        if not 1 <= self.strip_width_px <= capacity * CANVAS_SIZE:
            raise ValidationError("strip width out of range for canvas capacity")
        if self.naive:
            return
        if self.rows_used != math.ceil(self.strip_width_px / CANVAS_SIZE):
            raise ValidationError(
                f"rows_used={self.rows_used} inconsistent with "
                f"strip_width_px={self.strip_width_px}"
            )


def flip_horizontal(img: LineImage) -> LineImage:
    """Mirror columns: output column j is input column width-1-j."""
    return LineImage.from_array(img.pixels[:, ::-1].copy())


def _resample_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Bilinear resample along one axis, half-pixel-center convention.

    When out_len equals the input length the result is a bit-exact copy.
    """
    in_len = arr.shape[axis]
    if out_len == in_len:
        return arr.copy()
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = (src - lo).astype(np.float32)
    lo_c = np.clip(lo, 0, in_len - 1)
    hi_c = np.clip(lo + 1, 0, in_len - 1)
    a = np.take(arr, lo_c, axis=axis)
    b = np.take(arr, hi_c, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    w = frac.reshape(shape)
    return a * (1.0 - w) + b * w


def resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    out = _resample_axis(pixels.astype(np.float32), out_h, axis=0)
    out = _resample_axis(out, out_w, axis=1)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def standardize_height(img: LineImage, target_h: int = STRIP_HEIGHT) -> LineImage:
    """Scale to the target height, preserving aspect ratio to rounding.

    Width rounds half away from zero; a height already at target is a no-op.
    """
    if target_h < 1 or target_h % PATCH_SIZE != 0:
        raise ConfigurationError(
            f"target height must be a positive multiple of {PATCH_SIZE}, got {target_h}"
        )
    if img.height_px == target_h:
        return LineImage.from_array(img.pixels.copy())
    out_w = max(1, math.floor(img.width_px * target_h / img.height_px + 0.5))
    return LineImage.from_array(resize_bilinear(img.pixels, target_h, out_w))


def block_pack(img: LineImage, strip_height: int = STRIP_HEIGHT) -> BlockCanvas:
    """Flip, height-standardize, and chunk a line image into the canvas.

    Strips wider than the canvas capacity are horizontally compressed to fit
    and flagged lossy instead of truncated.
    """
    if strip_height % PATCH_SIZE != 0 or CANVAS_SIZE % strip_height != 0:
        raise ConfigurationError(
            f"strip height must be a multiple of {PATCH_SIZE} dividing {CANVAS_SIZE}"
        )
    strip = standardize_height(flip_horizontal(img), strip_height)
    capacity = CANVAS_SIZE // strip_height
    max_width = capacity * CANVAS_SIZE
    lossy = strip.width_px > max_width
    if lossy:
        strip = LineImage.from_array(
            resize_bilinear(strip.pixels, strip_height, max_width)
        )
    w = strip.width_px
    rows_used = math.ceil(w / CANVAS_SIZE)
    canvas = np.zeros((CANVAS_SIZE, CANVAS_SIZE), dtype=np.float32)
    for k in range(rows_used):
        seg = strip.pixels[:, k * CANVAS_SIZE : min((k + 1) * CANVAS_SIZE, w)]
        canvas[k * strip_height : k * strip_height + strip_height, : seg.shape[1]] = seg
    return BlockCanvas(
        pixels=canvas,
        strip_width_px=w,
        rows_used=rows_used,
        strip_height_px=strip_height,
        lossy=lossy,
    )


def block_unpack(canvas: BlockCanvas) -> LineImage:
    """Invert the chunking and the flip, recovering the height-64 strip."""
    if canvas.naive:
        raise ValidationError("naive canvases carry no strip geometry to unpack")
    h = canvas.strip_height_px
    w = canvas.strip_width_px
    rows_used = canvas.rows_used
    if rows_used != math.ceil(w / CANVAS_SIZE):
        raise ValidationError("rows_used inconsistent with strip_width_px")
    strip = np.empty((h, w), dtype=np.float32)
    for k in range(rows_used):
        lo, hi = k * CANVAS_SIZE, min((k + 1) * CANVAS_SIZE, w)
        strip[:, lo:hi] = canvas.pixels[k * h : (k + 1) * h, : hi - lo]
    return LineImage.from_array(strip[:, ::-1].copy())


def naive_resize(img: LineImage) -> BlockCanvas:
    """Ablation baseline: resize straight to 384x384, aspect ratio ignored."""
    pixels = resize_bilinear(img.pixels, CANVAS_SIZE, CANVAS_SIZE)
    return BlockCanvas(
        pixels=pixels,
        strip_width_px=CANVAS_SIZE,
        rows_used=ROW_CAPACITY,
        lossy=True,
        naive=True,
    )


def strip_mask(canvas: BlockCanvas) -> np.ndarray:
    """Boolean canvas mask of the strip footprint (True where strip pixels live)."""
    mask = np.zeros((CANVAS_SIZE, CANVAS_SIZE), dtype=bool)
    h = canvas.strip_height_px
    for k in range(canvas.rows_used):
        cols = min(CANVAS_SIZE, canvas.strip_width_px - k * CANVAS_SIZE)
        mask[k * h : (k + 1) * h, :cols] = True
    return mask


def patch_rows_for_strip_row(strip_row: int, strip_height: int = STRIP_HEIGHT) -> range:
    """Canvas patch-row indices covered by one strip row (16-px patches)."""
    per_row = strip_height // PATCH_SIZE
    return range(strip_row * per_row, (strip_row + 1) * per_row)


# --- PNG + sidecar I/O ------------------------------------------------------


def load_line_image(path: str | Path) -> LineImage:
    """Load a PNG (grayscale or RGB, converted) as a [0,1] line image."""
    with Image.open(path) as im:
        gray = im.convert("L")
        arr = np.asarray(gray, dtype=np.float32) / 255.0
    return LineImage.from_array(arr)


def save_line_image(img: LineImage, path: str | Path) -> None:
    arr = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def save_canvas(canvas: BlockCanvas, path: str | Path) -> None:
    """Write the canvas PNG plus a JSON sidecar with the strip geometry."""
    path = Path(path)
    arr = np.clip(np.rint(canvas.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")
    sidecar = {
        "schema": SIDECAR_SCHEMA,
        "strip_width_px": canvas.strip_width_px,
        "rows_used": canvas.rows_used,
        "strip_height_px": canvas.strip_height_px,
        "lossy": canvas.lossy,
        "naive": canvas.naive,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )


def load_canvas(path: str | Path) -> BlockCanvas:
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise ValidationError(f"missing canvas sidecar {sidecar_path}")
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    if meta.get("schema") != SIDECAR_SCHEMA:
        raise ValidationError(f"unknown sidecar schema {meta.get('schema')!r}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    return BlockCanvas(
        pixels=arr,
        strip_width_px=meta["strip_width_px"],
        rows_used=meta["rows_used"],
        strip_height_px=meta.get("strip_height_px", STRIP_HEIGHT),
        lossy=meta.get("lossy", False),
        naive=meta.get("naive", False),
    )
