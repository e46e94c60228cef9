import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from arabic_htr import synth
from arabic_htr.corpus import WordPool
from arabic_htr.errors import ConfigurationError
from arabic_htr.imaging import block_pack
from arabic_htr.synth import (
    AssetPools,
    FontCoverageError,
    default_pools,
    generate_dataset,
    render,
    render_detailed,
    sample_spec,
)


@pytest.fixture(scope="module")
def pools():
    return default_pools(seed=0, corpus_words=500)


class TestSampleSpec:
    def test_same_key_same_spec(self, pools):
        a = sample_spec(11, 3, pools)
        b = sample_spec(11, 3, pools)
        assert a.to_json() == b.to_json()

    def test_different_indices_differ(self, pools):
        specs = [sample_spec(11, i, pools).to_json() for i in range(20)]
        assert len({json.dumps(s) for s in specs}) > 1

    def test_word_count_range(self, pools):
        counts = [sample_spec(5, i, pools).word_count for i in range(2000)]
        assert min(counts) >= 1 and max(counts) <= 20
        assert len(set(counts)) == 20  # all values show up over 2000 draws

    def test_degenerate_single_word_pool(self, pools):
        one = AssetPools(
            fonts=pools.fonts,
            backgrounds=pools.backgrounds,
            corpus=WordPool(["كلمة"], np.array([1.0])),
        )
        for i in range(10):
            assert set(sample_spec(1, i, one).words) == {"كلمة"}

    def test_empty_pool_rejected(self, pools):
        with pytest.raises(ConfigurationError):
            AssetPools(fonts=[], backgrounds=pools.backgrounds, corpus=pools.corpus)


class TestRender:
    def test_ground_truth_is_joined_words(self, pools):
        spec = sample_spec(7, 1, pools)
        _, gt = render(spec, pools)
        assert gt == " ".join(spec.words)

    def test_identity_augmentation_depends_only_on_content(self, pools):
        spec = sample_spec(7, 2, pools)
        spec.augmentation_id = 0
        img1, _ = render(spec, pools)
        img2, _ = render(spec, pools)
        assert np.array_equal(img1.pixels, img2.pixels)

    def test_label_independent_of_augmentation(self, pools):
        spec = sample_spec(7, 3, pools)
        labels = set()
        for aug in range(synth.N_AUGMENTATIONS):
            spec.augmentation_id = aug
            _, gt = render(spec, pools)
            labels.add(gt)
        assert len(labels) == 1

    def test_output_intensity_in_unit_range(self, pools):
        for i in range(8):
            spec = sample_spec(13, i, pools)
            img, _ = render(spec, pools)
            assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0

    def test_rendered_line_has_ink(self, pools):
        for i in range(8):
            img, _ = render(sample_spec(17, i, pools), pools)
            assert synth.has_ink(img)

    def test_missing_glyphs_raise(self, pools):
        spec = sample_spec(7, 4, pools)
        spec.words = ["гласность"]  # Cyrillic present in DejaVu, so force worse
        spec.words = ["ݤݥ"]  # Arabic supplement beyond DejaVu coverage
        spec.word_count = 1
        with pytest.raises(FontCoverageError):
            render(spec, pools)

    def test_word_boxes_cover_ink(self, pools):
        spec = sample_spec(19, 5, pools)
        spec.augmentation_id = 0
        res = render_detailed(spec, pools)
        assert len(res.word_boxes) == len(spec.words)
        ink_cols = np.where((res.image.pixels < 0.45).any(axis=0))[0]
        lo = min(x for x, _ in res.word_boxes)
        hi = max(x for _, x in res.word_boxes)
        assert lo - 2 <= ink_cols.min() and ink_cols.max() <= hi + 2

    def test_geometric_augmentations_keep_ink_inside(self, pools):
        # >= 95% of ink mass stays within the canvas under rotation/shear
        # (mass, not thresholded pixel counts: bilinear resampling softens
        # stroke borders without moving ink off the canvas)
        def ink_mass(pixels):
            bg = np.median(pixels)
            return np.maximum(bg - pixels, 0.0).sum()

        for i in range(6):
            spec = sample_spec(23, i, pools)
            spec.augmentation_id = 0
            base = ink_mass(render(spec, pools)[0].pixels)
            for aug in (3, 4):
                spec.augmentation_id = aug
                assert ink_mass(render(spec, pools)[0].pixels) >= 0.95 * base

    def test_blocks_after_pack(self, pools):
        img, _ = render(sample_spec(29, 0, pools), pools)
        canvas = block_pack(img)
        assert canvas.rows_used >= 1
        assert synth.has_ink(img)


class TestGenerateDataset:
    def test_split_sizes_1000(self):
        assert synth._split_sizes(1000, (0.90, 0.09, 0.01)) == (900, 90, 10)

    def test_split_single_item_is_train(self):
        assert synth.split_for_index(0, 1) == "train"
        assert synth._split_sizes(1, (0.90, 0.09, 0.01)) == (1, 0, 0)

    def test_deterministic_regeneration(self, pools, tmp_path):
        m1 = generate_dataset(7, 12, pools, tmp_path / "a")
        m2 = generate_dataset(7, 12, pools, tmp_path / "b")
        assert m1.read_bytes() == m2.read_bytes()
        for rel in [json.loads(l)["image"] for l in m1.read_text().splitlines()]:
            assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False)

    def test_resumable_by_index(self, pools, tmp_path):
        out = tmp_path / "run"
        full = generate_dataset(3, 6, pools, tmp_path / "ref")
        partial = out / synth.MANIFEST_NAME
        out.mkdir()
        (out / "images").mkdir()
        lines = full.read_text(encoding="utf-8").splitlines()
        partial.write_text("\n".join(lines[:3]) + "\n", encoding="utf-8")
        resumed = generate_dataset(3, 6, pools, out)
        rows = [json.loads(l) for l in resumed.read_text().splitlines()]
        assert sorted(r["spec"]["index"] for r in rows) == list(range(6))

    def test_manifest_fields(self, pools, tmp_path):
        manifest = generate_dataset(5, 4, pools, tmp_path / "d")
        rows = [json.loads(l) for l in manifest.read_text().splitlines()]
        for row in rows:
            assert set(row) == {"image", "text", "split", "spec"}
            assert (tmp_path / "d" / row["image"]).exists()
            assert row["split"] in {"train", "val", "test"}
            alphabet = {c for w in pools.corpus.words for c in w} | {" "}
            assert set(row["text"]) <= alphabet
