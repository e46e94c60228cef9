import itertools
import sys
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arabic_htr import metrics
from arabic_htr.errors import ConfigurationError, ValidationError
from arabic_htr.metrics import (
    NormalizationPolicy,
    cer_with_policy,
    collapse_whitespace,
    edit_distance_align,
    levenshtein_distance,
    remove_diacritics,
    replace_tier,
    replay_alignment,
    score_pair,
)

sys.setrecursionlimit(100_000)


@lru_cache(maxsize=None)
def oracle_distance(ref: str, pred: str) -> int:
    """Memoized-recursive Levenshtein, the independent check."""
    if not ref:
        return len(pred)
    if not pred:
        return len(ref)
    if ref[0] == pred[0]:
        return oracle_distance(ref[1:], pred[1:])
    return 1 + min(
        oracle_distance(ref[1:], pred[1:]),  # substitute
        oracle_distance(ref[1:], pred),      # delete
        oracle_distance(ref, pred[1:]),      # insert
    )


def all_strings(alphabet, max_len):
    for k in range(max_len + 1):
        for tup in itertools.product(alphabet, repeat=k):
            yield "".join(tup)


class TestEditDistance:
    def test_identical(self):
        s, d, i, ops = edit_distance_align("abc", "abc")
        assert (s, d, i) == (0, 0, 0)
        assert all(op.op == "match" for op in ops)

    def test_single_deletion_arabic(self):
        # DP oracle over the 4x3 table
        assert oracle_distance("كتاب", "كتب") == 1
        s, d, i, ops = edit_distance_align("كتاب", "كتب")
        assert (s, d, i) == (0, 1, 0)
        rec = score_pair("x", "كتاب", "كتب")
        assert rec.cer == pytest.approx(0.25)

    def test_empty_prediction(self):
        rec = score_pair("x", "a", "")
        assert (rec.S, rec.D, rec.I) == (0, 1, 0)
        assert rec.cer == 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(ValidationError):
            edit_distance_align("", "abc")

    def test_matches_oracle_small_exhaustive(self):
        strings = list(all_strings("abс", 3))
        for ref in strings:
            for pred in strings:
                assert levenshtein_distance(ref, pred) == oracle_distance(ref, pred)

    def test_align_total_equals_distance_random(self):
        import random

        rng = random.Random(0)
        for _ in range(300):
            ref = "".join(rng.choice("ابتث ") for _ in range(rng.randint(1, 30)))
            pred = "".join(rng.choice("ابتث ") for _ in range(rng.randint(0, 30)))
            s, d, i, _ = edit_distance_align(ref, pred)
            assert s + d + i == levenshtein_distance(ref, pred)

    def test_numpy_path_equals_python_path(self):
        import random

        rng = random.Random(1)
        for _ in range(40)    :
            ref = "".join(rng.choice("abcd") for _ in range(rng.randint(40, 80)))
            pred = "".join(rng.choice("abcd") for _ in range(rng.randint(40, 80)))
            assert levenshtein_distance(ref, pred) == oracle_distance(ref, pred)

    def test_symmetry_with_swapped_ops(self):
        import random

        rng = random.Random(2)
        for _ in range(100):
            a = "".join(rng.choice("xyz") for _ in range(rng.randint(1, 12)))
            b = "".join(rng.choice("xyz") for _ in range(rng.randint(1, 12)))
            s1, d1, i1, _ = edit_distance_align(a, b)
            s2, d2, i2, _ = edit_distance_align(b, a)
            assert (s1, d1, i1) == (s2, i2, d2)

    @given(
        ref=st.text(alphabet="ابتثج ـفق", min_size=1, max_size=20),
        pred=st.text(alphabet="ابتثج ـفق", max_size=20),
    )
    @settings(max_examples=200, deadline=None)
    def test_replay_reconstructs_reference(self, ref, pred):
        _, _, _, ops = edit_distance_align(ref, pred)
        assert replay_alignment(pred, ops, ref) == ref

    def test_tie_break_is_deterministic(self):
        # "ab" vs "ba" has cost-2 alignments both with and without a match;
        # the stated preference (substitute over delete/insert at each step)
        # deterministically picks the double substitution
        first = edit_distance_align("ab", "ba")
        assert (first[0], first[1], first[2]) == (2, 0, 0)
        assert edit_distance_align("ab", "ba") == first


class TestNormalizationTiers:
    def test_collapse_examples(self):
        assert collapse_whitespace("a  b") == "a b"
        assert collapse_whitespace(" a ") == "a"
        assert collapse_whitespace("a \t\n b") == "a b"

    @given(st.text(alphabet=" \t\nابab", max_size=30))
    def test_collapse_idempotent(self, s):
        assert collapse_whitespace(collapse_whitespace(s)) == collapse_whitespace(s)

    def test_remove_diacritics_tashkeel(self):
        # codepoint-class oracle: drop exactly U+064B..U+0652
        s = "كَتَبَ"
        expected = "".join(c for c in s if not (0x064B <= ord(c) <= 0x0652))
        assert expected == "كتب"
        assert remove_diacritics(s) == "كتب"

    def test_remove_diacritics_no_marks_unchanged(self):
        assert remove_diacritics("كتاب") == "كتاب"

    @given(st.text(alphabet="كتبَُِّْ ًٌٍ", max_size=40))
    def test_remove_diacritics_never_lengthens(self, s):
        assert len(remove_diacritics(s)) <= len(s)

    def test_replace_without_context_folds_alefs(self):
        table = metrics.default_without_context_table()
        assert replace_tier("أإآ", table) == "ااا"

    def test_replace_empty_table_identity(self):
        assert replace_tier("أبجد", {}) == "أبجد"

    def test_replace_idempotent_when_disjoint(self):
        table = metrics.default_with_context_table()
        s = "مدرسة المصطفى"
        once = replace_tier(s, table)
        assert replace_tier(once, table) == once

    def test_replace_rejects_multichar_entries(self):
        with pytest.raises(ConfigurationError):
            replace_tier("x", {"ab": "c"})

    def test_policy_composition_order(self):
        policy = NormalizationPolicy(
            collapse_whitespace=True,
            remove_diacritics=True,
            replace_without_context=True,
            replace_with_context=True,
        )
        # diacritic removal must run before the alef fold sees the base letter
        assert policy.apply("  أَصْل   القِصَّة ") == "اصل القصه"

    @given(st.text(alphabet="أإآةىكتب َُِ ًـ\t", max_size=40))
    @settings(max_examples=300, deadline=None)
    def test_policy_idempotent(self, s):
        policy = NormalizationPolicy(
            collapse_whitespace=True,
            remove_diacritics=True,
            replace_without_context=True,
            replace_with_context=True,
        )
        assert policy.apply(policy.apply(s)) == policy.apply(s)


class TestCorpusCer:
    def _records(self):
        return [
            score_pair("a", "كتاب", "كتب"),
            score_pair("b", "ولد", "ولد"),
            score_pair("c", "مدرسة", "مدرسه"),
        ]

    def test_identity_policy_reproduces_base(self):
        records = self._records()
        base = metrics.corpus_cer(records)
        assert cer_with_policy(records, NormalizationPolicy()) == base

    def test_cer_zero_on_identical(self):
        records = [score_pair("a", "نص", "نص")]
        assert metrics.corpus_cer(records) == 0.0

    def test_corpus_aggregation_is_length_weighted(self):
        records = self._records()
        total_err = sum(r.S + r.D + r.I for r in records)
        total_n = sum(r.N for r in records)
        assert metrics.corpus_cer(records) == total_err / total_n
        per_line = metrics.corpus_cer(records, per_line=True)
        assert per_line == pytest.approx(sum(r.cer for r in records) / 3)

    def test_policy_changes_scores(self):
        records = self._records()
        policy = NormalizationPolicy(replace_with_context=True)
        # ta-marbuta folding makes record c perfect
        assert cer_with_policy(records, policy) < metrics.corpus_cer(records)

    def test_policy_on_identical_strings_zero(self):
        policy = NormalizationPolicy(
            collapse_whitespace=True,
            remove_diacritics=True,
            replace_without_context=True,
            replace_with_context=True,
        )
        records = [("أَصْلُ الحِكايَة", "أَصْلُ الحِكايَة"), ("نص", "نص")]
        assert cer_with_policy(records, policy) == 0.0

    def test_all_empty_references_error(self):
        policy = NormalizationPolicy(remove_diacritics=True)
        with pytest.raises(ValidationError):
            cer_with_policy([("َ", "x")], policy)

    def test_empty_record_set_error(self):
        with pytest.raises(ValidationError):
            cer_with_policy([], NormalizationPolicy())

    def test_records_jsonl_round_trip(self, tmp_path):
        records = self._records()
        p = tmp_path / "eval.jsonl"
        metrics.write_records_jsonl(records, p)
        loaded = metrics.read_records_jsonl(p)
        assert [r.to_json() for r in loaded] == [r.to_json() for r in records]
