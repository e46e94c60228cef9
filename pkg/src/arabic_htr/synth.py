"""Seeded synthetic Arabic text-line generation.

Each item is a pure function of (seed, index, pools): a counter-based Philox
stream keyed on (seed, index) drives every draw, so datasets regenerate
bit-identically and items can be produced in any order or in parallel.
Rendering uses a shaping-capable layout engine (raqm) for contextual joining
and mark anchoring; one of eight augmentations is applied per item.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from fontTools.ttLib import TTFont
from PIL import Image, ImageDraw, ImageFilter, ImageFont

from .corpus import WordPool
from .errors import ConfigurationError, ValidationError
from .imaging import LineImage, resize_bilinear, save_line_image

log = logging.getLogger(__name__)

N_AUGMENTATIONS = 8
WORD_COUNT_RANGE = (1, 20)
MANIFEST_NAME = "manifest.jsonl"

DEFAULT_FONT_FILES = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSans-Bold.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSansMono.ttf",
    "/usr/share/fonts/truetype/dejavu/DejaVuSansMono-Bold.ttf",
]
DEFAULT_FONT_SIZES = [28, 34, 40]


class FontCoverageError(ValidationError):
    """The chosen font lacks glyphs required by the sampled text."""


@dataclass(frozen=True)
class FontAsset:
    path: str
    size_px: int


@dataclass
class AssetPools:
    fonts: list[FontAsset]
    backgrounds: list[np.ndarray]
    corpus: WordPool

    def __post_init__(self):
        if not self.fonts:
            raise ConfigurationError("font pool is empty")
        if not self.backgrounds:
            raise ConfigurationError("background pool is empty")


@dataclass
class SynthSpec:
    """Recipe for one line image; regenerating from (seed, index) is bit-identical."""

    seed: int
    index: int
    word_count: int
    words: list[str]
    font_id: int
    background_id: int
    augmentation_id: int

    def __post_init__(self):
        lo, hi = WORD_COUNT_RANGE
        if not lo <= self.word_count <= hi:
            raise ValidationError(f"word_count must be in [{lo}, {hi}]")
        if self.word_count != len(self.words):
            raise ValidationError("word_count must equal len(words)")
        if not 0 <= self.augmentation_id < N_AUGMENTATIONS:
            raise ValidationError("augmentation_id out of range")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "index": self.index,
            "word_count": self.word_count,
            "words": list(self.words),
            "font_id": self.font_id,
            "background_id": self.background_id,
            "augmentation_id": self.augmentation_id,
        }


def _item_rng(seed: int, index: int, lane: int) -> np.random.Generator:
    """Independent Philox stream per (seed, index, lane)."""
    counter = np.zeros(4, dtype=np.uint64)
    counter[3] = lane
    return np.random.Generator(
        np.random.Philox(counter=counter, key=np.array([seed, index], dtype=np.uint64))
    )


# --- asset pools -------------------------------------------------------------


@lru_cache(maxsize=64)
def _cmap_codepoints(path: str) -> frozenset[int]:
    return frozenset(TTFont(path, lazy=True).getBestCmap().keys())


@lru_cache(maxsize=64)
def _load_font(path: str, size_px: int) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(path, size_px, layout_engine=ImageFont.Layout.RAQM)


def font_covers(path: str, text: str) -> bool:
    cmap = _cmap_codepoints(path)
    return all(ord(c) in cmap for c in text if not c.isspace())


def default_font_pool(alphabet: str = "") -> list[FontAsset]:
    fonts = []
    for f in DEFAULT_FONT_FILES:
        if not Path(f).exists():
            continue
        if alphabet and not font_covers(f, alphabet):
            continue
        fonts.extend(FontAsset(f, s) for s in DEFAULT_FONT_SIZES)
    if not fonts:
        raise ConfigurationError("no usable fonts found on this system")
    return fonts


def paper_background(seed: int, height: int = 320, width: int = 1600) -> np.ndarray:
    """Procedural paper texture: off-white base, mottling, fibers, stains."""
    rng = _item_rng(seed, 0, lane=9)
    base = rng.uniform(0.82, 0.95)
    coarse = rng.normal(0.0, 0.035, (height // 32 + 2, width // 32 + 2))
    mottle = resize_bilinear(
        np.clip(coarse + 0.5, 0.0, 1.0).astype(np.float32), height, width
    ) - 0.5
    tex = base + mottle + rng.normal(0.0, 0.012, (height, width))
    for _ in range(int(rng.integers(2, 6))):  # faint stains
        cy, cx = rng.integers(0, height), rng.integers(0, width)
        r = rng.integers(18, 70)
        yy, xx = np.ogrid[:height, :width]
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        tex -= rng.uniform(0.02, 0.07) * np.exp(-d2 / (2.0 * r * r))
    return np.clip(tex, 0.0, 1.0).astype(np.float32)


def default_background_pool(n: int = 8, seed: int = 0) -> list[np.ndarray]:
    return [paper_background(seed * 1000 + k) for k in range(n)]


def default_pools(seed: int = 0, corpus_words: int = 4000) -> AssetPools:
    pool = WordPool.arabic(corpus_words, seed)
    alphabet = "".join(sorted({c for w in pool.words for c in w}))
    return AssetPools(
        fonts=default_font_pool(alphabet),
        backgrounds=default_background_pool(seed=seed),
        corpus=pool,
    )


def load_pools(
    corpus_path: str | Path | None,
    fonts_dir: str | Path | None,
    backgrounds_dir: str | Path | None,
    seed: int = 0,
) -> AssetPools:
    """Pools from user assets, falling back to the desk defaults per slot."""
    if corpus_path:
        pool = WordPool.from_text(Path(corpus_path).read_text(encoding="utf-8"))
    else:
        pool = WordPool.arabic(4000, seed)
    alphabet = "".join(sorted({c for w in pool.words for c in w}))
    if fonts_dir:
        files = sorted(str(p) for p in Path(fonts_dir).glob("*.[to]tf"))
        fonts = [FontAsset(f, s) for f in files for s in DEFAULT_FONT_SIZES]
        if not fonts:
            raise ConfigurationError(f"no fonts found in {fonts_dir}")
    else:
        fonts = default_font_pool(alphabet)
    if backgrounds_dir:
        bgs = []
        for p in sorted(Path(backgrounds_dir).glob("*.png")):
            with Image.open(p) as im:
                bgs.append(np.asarray(im.convert("L"), dtype=np.float32) / 255.0)
        if not bgs:
            raise ConfigurationError(f"no backgrounds found in {backgrounds_dir}")
    else:
        bgs = default_background_pool(seed=seed)
    return AssetPools(fonts=fonts, backgrounds=bgs, corpus=pool)


# --- sampling ----------------------------------------------------------------


def sample_spec(seed: int, index: int, pools: AssetPools) -> SynthSpec:
    """Draw one item recipe from the counter-based stream for (seed, index)."""
    return _draw_spec_from(_item_rng(seed, index, lane=0), seed, index, pools)


# --- rendering ---------------------------------------------------------------


@dataclass
class RenderResult:
    image: LineImage
    ground_truth: str
    word_boxes: list[tuple[int, int]]  # (x_left, x_right) per word, pixel coords


def _crop_background(bg: np.ndarray, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    tile = bg
    while tile.shape[0] < h or tile.shape[1] < w:
        tile = np.tile(tile, (2, 2))[: max(h, tile.shape[0] * 2), : max(w, tile.shape[1] * 2)]
    y = int(rng.integers(0, tile.shape[0] - h + 1))
    x = int(rng.integers(0, tile.shape[1] - w + 1))
    return tile[y : y + h, x : x + w].copy()


def _apply_augmentation(
    arr: np.ndarray, aug_id: int, rng: np.random.Generator, margin_y: int = 0
) -> tuple[np.ndarray, float]:
    """Returns the augmented [0,1] image and the horizontal skew slope used
    (nonzero only for geometric augmentations, so word boxes can be padded)."""
    if aug_id == 0:
        return arr, 0.0
    if aug_id == 1:
        radius = float(rng.uniform(0.4, 1.1))
        im = Image.fromarray((arr * 255).astype(np.uint8), "L")
        out = im.filter(ImageFilter.GaussianBlur(radius))
        return np.asarray(out, dtype=np.float32) / 255.0, 0.0
    if aug_id == 2:
        sigma = float(rng.uniform(0.01, 0.05))
        return np.clip(arr + rng.normal(0.0, sigma, arr.shape), 0.0, 1.0).astype(np.float32), 0.0
    if aug_id == 3:
        angle = float(rng.uniform(-2.0, 2.0))
        # long lines have a long lever arm: cap the angle so the far ends
        # displace less than the vertical margin and ink stays on canvas
        half_w = max(1.0, arr.shape[1] / 2.0)
        cap = float(np.degrees(np.arctan(0.8 * max(margin_y, 3) / half_w)))
        angle = float(np.clip(angle, -cap, cap))
        fill = int(np.median(arr) * 255)
        im = Image.fromarray((arr * 255).astype(np.uint8), "L")
        out = im.rotate(angle, resample=Image.BILINEAR, expand=False, fillcolor=fill)
        slope = abs(np.tan(np.radians(angle)))
        return np.asarray(out, dtype=np.float32) / 255.0, slope
    if aug_id == 4:
        m = float(np.tan(np.radians(rng.uniform(-5.0, 5.0))))
        h, w = arr.shape
        cy = h / 2.0
        fill = int(np.median(arr) * 255)
        im = Image.fromarray((arr * 255).astype(np.uint8), "L")
        out = im.transform(
            (w, h), Image.AFFINE, (1.0, -m, m * cy, 0.0, 1.0, 0.0),
            resample=Image.BILINEAR, fillcolor=fill,
        )
        return np.asarray(out, dtype=np.float32) / 255.0, abs(m)
    if aug_id == 5:
        c = float(rng.uniform(0.8, 1.2))
        b = float(rng.uniform(-0.08, 0.08))
        return np.clip((arr - 0.5) * c + 0.5 + b, 0.0, 1.0).astype(np.float32), 0.0
    if aug_id == 6:
        quality = int(rng.integers(35, 76))
        im = Image.fromarray((arr * 255).astype(np.uint8), "L")
        buf = io.BytesIO()
        im.save(buf, format="JPEG", quality=quality)
        buf.seek(0)
        with Image.open(buf) as back:
            return np.asarray(back.convert("L"), dtype=np.float32) / 255.0, 0.0
    if aug_id == 7:
        # ink is dark: a 3x3 min filter thickens strokes, max thins them
        pad = np.pad(arr, 1, mode="edge")
        stacked = np.stack(
            [pad[dy : dy + arr.shape[0], dx : dx + arr.shape[1]]
             for dy in range(3) for dx in range(3)]
        )
        thicken = bool(rng.integers(0, 2))
        out = stacked.min(axis=0) if thicken else stacked.max(axis=0)
        return out.astype(np.float32), 0.0
    raise ValidationError(f"unknown augmentation id {aug_id}")


def render_detailed(spec: SynthSpec, pools: AssetPools) -> RenderResult:
    """Rasterize a spec: shaped RTL text on a paper crop, one augmentation."""
    text = " ".join(spec.words)
    asset = pools.fonts[spec.font_id]
    missing = [c for c in text if not c.isspace() and ord(c) not in _cmap_codepoints(asset.path)]
    if missing:
        raise FontCoverageError(
            f"font {Path(asset.path).name} lacks glyphs for {missing[:5]!r}"
        )
    font = _load_font(asset.path, asset.size_px)
    rng = _item_rng(spec.seed, spec.index, lane=1)

    probe = ImageDraw.Draw(Image.new("L", (8, 8)))
    bbox = probe.textbbox((0, 0), text, font=font, direction="rtl")
    text_w = max(1, bbox[2] - bbox[0])
    text_h = max(1, bbox[3] - bbox[1])
    pad_x = asset.size_px
    pad_y = max(6, asset.size_px // 2)
    width = text_w + 2 * pad_x
    height = text_h + 2 * pad_y

    bg = _crop_background(pools.backgrounds[spec.background_id], height, width, rng)
    canvas = Image.fromarray((bg * 255).astype(np.uint8), "L")
    draw = ImageDraw.Draw(canvas)
    ink = int(rng.uniform(0.02, 0.30) * 255)
    origin = (pad_x - bbox[0], pad_y - bbox[1])
    draw.text(origin, text, font=font, fill=ink, direction="rtl")

    # word extents from cumulative shaped widths; first word sits rightmost
    cums = [0.0]
    for i in range(1, len(spec.words) + 1):
        cums.append(probe.textlength(" ".join(spec.words[:i]), font=font, direction="rtl"))
    space_w = font.getlength(" ")
    right_edge = origin[0] + bbox[0] + text_w
    boxes = []
    for i in range(len(spec.words)):
        x_right = right_edge - cums[i] - (space_w if i > 0 else 0.0)
        x_left = right_edge - cums[i + 1]
        boxes.append((int(np.floor(x_left)), int(np.ceil(x_right))))

    arr = np.asarray(canvas, dtype=np.float32) / 255.0
    arr, slope = _apply_augmentation(arr, spec.augmentation_id, rng, margin_y=pad_y)
    if slope:
        grow = int(np.ceil(slope * height / 2.0)) + 1
        boxes = [
            (max(0, xl - grow), min(width, xr + grow)) for xl, xr in boxes
        ]
    return RenderResult(
        image=LineImage.from_array(arr), ground_truth=text, word_boxes=boxes
    )


def render(spec: SynthSpec, pools: AssetPools) -> tuple[LineImage, str]:
    res = render_detailed(spec, pools)
    return res.image, res.ground_truth


def has_ink(img: LineImage, background_level: float = 0.55) -> bool:
    return bool((img.pixels < background_level).any())


# --- dataset generation ------------------------------------------------------


def _split_sizes(count: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Train/val/test sizes: val and test floor, train takes the remainder."""
    n_val = int(count * ratios[1])
    n_test = int(count * ratios[2])
    return count - n_val - n_test, n_val, n_test


def split_for_index(index: int, count: int, ratios=(0.90, 0.09, 0.01)) -> str:
    n_train, n_val, _ = _split_sizes(count, ratios)
    if index < n_train:
        return "train"
    if index < n_train + n_val:
        return "val"
    return "test"


def generate_dataset(
    seed: int,
    count: int,
    pools: AssetPools,
    out_dir: str | Path,
    split_ratios: tuple[float, float, float] = (0.90, 0.09, 0.01),
    max_retries: int = 5,
) -> Path:
    """Write ``count`` PNG+label items and a JSONL manifest; resumable by index.

    Items whose font lacks coverage after retries are skipped and logged; a
    blank render redraws from the same per-item stream, keeping determinism.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST_NAME

    done: set[int] = set()
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    done.add(json.loads(line)["spec"]["index"])

    with open(manifest_path, "a", encoding="utf-8") as mf:
        for index in range(count):
            if index in done:
                continue
            rng = _item_rng(seed, index, lane=0)
            result = None
            spec = None
            for _ in range(max_retries):
                spec = _draw_spec_from(rng, seed, index, pools)
                try:
                    result = render_detailed(spec, pools)
                except FontCoverageError as e:
                    log.warning("item %d: %s; redrawing", index, e)
                    continue
                if has_ink(result.image):
                    break
                log.warning("item %d: blank render; redrawing", index)
                result = None
            if result is None:
                log.error("item %d: skipped after %d attempts", index, max_retries)
                continue
            rel = f"images/item_{index:06d}.png"
            save_line_image(result.image, out / rel)
            row = {
                "image": rel,
                "text": result.ground_truth,
                "split": split_for_index(index, count, split_ratios),
                "spec": spec.to_json(),
            }
            mf.write(json.dumps(row, ensure_ascii=False) + "\n")
    return manifest_path


def _draw_spec_from(
    rng: np.random.Generator, seed: int, index: int, pools: AssetPools
) -> SynthSpec:
    lo, hi = WORD_COUNT_RANGE
    word_count = int(rng.integers(lo, hi + 1))
    idxs = rng.choice(len(pools.corpus.words), size=word_count, p=pools.corpus.weights)
    return SynthSpec(
        seed=seed,
        index=index,
        word_count=word_count,
        words=[pools.corpus.words[i] for i in idxs],
        font_id=int(rng.integers(0, len(pools.fonts))),
        background_id=int(rng.integers(0, len(pools.backgrounds))),
        augmentation_id=int(rng.integers(0, N_AUGMENTATIONS)),
    )


def load_manifest(path: str | Path) -> list[dict]:
    items = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                items.append(json.loads(line))
    return items
