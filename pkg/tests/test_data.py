"""Tests for roomclass.data: utterances, balanced batches, folds, epoch plans,
validation split and synthetic corpora."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomclass.acoustics import AirRecord, acoustic_params
from roomclass.data import (
    ROOM_PRESETS,
    BalancedBatcher,
    DatasetConfig,
    SpeechCorpus,
    build_utterance,
    epoch_plan,
    make_balanced_batch,
    make_folds,
    make_samples,
    synth_manifest,
    synth_speech_corpus,
    validation_split,
)
from roomclass.dsp import Signal, StftConfig
from roomclass.errors import DataError

FS = 16000
# tiny utterances keep counting tests fast; batch bookkeeping does not
# depend on the utterance length
TINY = DatasetConfig(utterance_length=0.02, stft=StftConfig())


def tiny_corpus(n_train=3, n_test=2, seed=0):
    rng = np.random.default_rng(seed)
    speakers, split = {}, {}
    for i in range(n_train + n_test):
        spk = f"s{i}"
        speakers[spk] = [Signal(rng.standard_normal(200 + 37 * i), FS)]
        split[spk] = "train" if i < n_train else "test"
    return SpeechCorpus(speakers, split)


def layout(rooms, arrays, positions, airs, grid=False):
    """Records with short noise AIRs, ids ``r{room}a{array}p{pos}_{j}``."""
    rng = np.random.default_rng(1)
    recs = []
    for r in range(rooms):
        for a in range(arrays):
            for p in range(positions):
                for j in range(airs):
                    recs.append(
                        AirRecord(
                            Signal(rng.standard_normal(8), FS), f"room{r}", f"array{a}", f"pos{p}",
                            f"r{r}a{a}p{p}_{j}", grid_x=float(rng.uniform(0, 10)) if grid else None,
                        )
                    )
    return recs


class TestBuildUtterance:
    def test_long_speaker_exact_length(self):
        cfg = DatasetConfig()
        speech = [Signal(np.random.default_rng(0).standard_normal(6 * FS), FS)]
        for seed in range(3):
            assert build_utterance(speech, cfg, np.random.default_rng(seed)).samples.size == 80000

    def test_short_speaker_cycled(self):
        cfg = DatasetConfig()
        base = np.arange(3 * FS, dtype=float)
        out = build_utterance([Signal(base, FS)], cfg, np.random.default_rng(1)).samples
        assert out.size == 80000
        # a circular shift of the cycled concatenation
        start = int(out[0])
        np.testing.assert_array_equal(out, np.tile(base, 2)[(np.arange(80000) + start) % (6 * FS)])

    def test_deterministic(self):
        speech = [Signal(np.random.default_rng(2).standard_normal(FS), FS)] * 2
        a = build_utterance(speech, TINY, np.random.default_rng(5)).samples
        b = build_utterance(speech, TINY, np.random.default_rng(5)).samples
        np.testing.assert_array_equal(a, b)

    def test_zero_duration_rejected(self):
        with pytest.raises(DataError):
            build_utterance([Signal(np.zeros(0), FS)], TINY, np.random.default_rng(0))

    def test_rate_mismatch_rejected(self):
        with pytest.raises(DataError):
            build_utterance([Signal(np.ones(100), 8000)], TINY, np.random.default_rng(0))

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 1000), seed=st.integers(0, 10_000))
    def test_energy_preserving_shift(self, n, seed):
        x = np.random.default_rng(seed).standard_normal(n)
        cfg = DatasetConfig(utterance_length=n / FS)
        out = build_utterance([Signal(x, FS)], cfg, np.random.default_rng(seed)).samples
        assert out.size == n
        np.testing.assert_allclose(np.sort(out), np.sort(x))


class TestBalancedBatch:
    def test_ace_layout(self):
        manifest = layout(7, 5, 2, 2)
        batcher = BalancedBatcher(manifest, tiny_corpus(), TINY)
        assert batcher.batch_size == 140
        batch = batcher.next_batch()
        assert len(batch) == 140
        np.testing.assert_array_equal(np.bincount(batch.labels), [20] * 7)

    def test_synthetic_layout(self):
        batch = BalancedBatcher(layout(3, 1, 2, 4), tiny_corpus(), TINY).next_batch()
        assert len(batch) == 12
        np.testing.assert_array_equal(np.bincount(batch.labels), [4, 4, 4])

    def test_round_robin(self):
        manifest = layout(1, 1, 1, 10)
        batcher = BalancedBatcher(manifest, tiny_corpus(), TINY)
        first = [p["air_id"] for p in batcher.next_batch().provenance]
        second = [p["air_id"] for p in batcher.next_batch().provenance]
        assert first == ["r0a0p0_0", "r0a0p0_1"]
        assert second == ["r0a0p0_2", "r0a0p0_3"]

    def test_counter_wraps(self):
        batcher = BalancedBatcher(layout(1, 1, 1, 3), tiny_corpus(), TINY)
        ids = [p["air_id"] for _ in range(3) for p in batcher.next_batch().provenance]
        assert ids == ["r0a0p0_0", "r0a0p0_1", "r0a0p0_2"] * 2

    def test_empty_block_rejected(self):
        recs = layout(1, 1, 1, 2)
        blocks = {("room0", "array0", "pos0"): recs, ("room0", "array0", "pos1"): []}
        with pytest.raises(DataError, match="pos1"):
            make_balanced_batch(blocks, tiny_corpus(), {}, TINY, np.random.default_rng(0))

    def test_only_training_speakers(self):
        corpus = tiny_corpus()
        batcher = BalancedBatcher(layout(2, 1, 2, 3), corpus, TINY)
        used = {p["speaker"] for _ in range(10) for p in batcher.next_batch().provenance}
        assert used <= set(corpus.ids("train"))
        assert not used & set(corpus.ids("test"))

    def test_samples_use_test_speakers(self):
        corpus = tiny_corpus()
        batch = make_samples(layout(2, 1, 1, 2), corpus, TINY, np.random.default_rng(0), per_air=3)
        assert len(batch) == 12
        assert {p["speaker"] for p in batch.provenance} <= set(corpus.ids("test"))

    def test_reproducible(self):
        manifest, corpus = layout(2, 2, 2, 3), tiny_corpus()
        a, b = BalancedBatcher(manifest, corpus, TINY), BalancedBatcher(manifest, corpus, TINY)
        for _ in range(3):
            ba, bb = a.next_batch(), b.next_batch()
            np.testing.assert_array_equal(ba.X, bb.X)
            assert ba.provenance == bb.provenance

    @settings(max_examples=25, deadline=None)
    @given(
        rooms=st.integers(1, 3), positions=st.integers(1, 3), airs=st.integers(1, 6), per=st.integers(1, 3)
    )
    def test_balance_and_coverage(self, rooms, positions, airs, per):
        cfg = DatasetConfig(utterance_length=0.02, airs_per_position_per_batch=per)
        manifest = layout(rooms, 1, positions, airs)
        batcher = BalancedBatcher(manifest, tiny_corpus(), cfg)
        n_batches = math.ceil(airs / per)
        seen = set()
        for _ in range(n_batches):
            batch = batcher.next_batch()
            assert len(batch) == rooms * positions * per
            np.testing.assert_array_equal(np.bincount(batch.labels, minlength=rooms), positions * per)
            seen |= {p["air_id"] for p in batch.provenance}
        assert seen == {r.air_id for r in manifest}


class TestFolds:
    def test_ace_counts(self):
        manifest = layout(7, 5, 2, 2)
        assert len(make_folds(manifest, "by_position")) == 70
        assert len(make_folds(manifest, "by_array")) == 5

    def test_grid_thirds(self):
        manifest = layout(2, 3, 4, 12, grid=True)
        assert len(manifest) == 288
        plan = make_folds(manifest, "by_grid_x")
        assert [len(f) for f in plan.folds] == [96, 96]
        gx = {r.air_id: r.grid_x for r in manifest}
        high, low = (plan.folds[plan.names.index(n)] for n in ("high_x", "low_x"))
        assert max(gx[i] for i in low) <= min(gx[i] for i in high)

    def test_single_array_rejected(self):
        with pytest.raises(DataError, match="cannot cross-validate"):
            make_folds(layout(3, 1, 2, 2), "by_array")

    def test_missing_grid_rejected(self):
        with pytest.raises(DataError, match="grid_x"):
            make_folds(layout(2, 2, 2, 2), "by_grid_x")

    def test_unknown_scheme(self):
        with pytest.raises(DataError):
            make_folds(layout(2, 2, 2, 2), "by_room")

    @settings(max_examples=25, deadline=None)
    @given(
        rooms=st.integers(1, 3), arrays=st.integers(2, 3), positions=st.integers(1, 3), airs=st.integers(1, 3),
        scheme=st.sampled_from(["by_position", "by_array"]),
    )
    def test_partition(self, rooms, arrays, positions, airs, scheme):
        manifest = layout(rooms, arrays, positions, airs)
        plan = make_folds(manifest, scheme)
        union = set().union(*plan.folds)
        assert union == {r.air_id for r in manifest}
        assert sum(len(f) for f in plan.folds) == len(manifest)


class TestEpochPlan:
    def test_examples(self):
        assert epoch_plan(DatasetConfig(n_u=2), range(700)) == 1400
        assert epoch_plan(DatasetConfig(n_u=1), range(6)) == 6
        assert epoch_plan(DatasetConfig(n_u=1.5), range(5)) == 8

    def test_zero_rejected(self):
        with pytest.raises(DataError):
            DatasetConfig(n_u=0)


class TestValidationSplit:
    def test_stratified_and_blocks_kept(self):
        manifest = layout(4, 2, 2, 5)
        train, val = validation_split(manifest, 0.15, seed=0)
        assert len(train) + len(val) == len(manifest)
        assert {r.room_id for r in val} == {f"room{i}" for i in range(4)}
        assert {r.block for r in train} == {r.block for r in manifest}
        assert not {r.air_id for r in train} & {r.air_id for r in val}

    def test_singleton_blocks_rejected(self):
        with pytest.raises(DataError):
            validation_split(layout(2, 1, 2, 1), 0.15)


class TestSynthetic:
    def test_speaker_disjointness(self):
        corpus = synth_speech_corpus(n_train=3, n_test=2, sentences=1, sentence_length=0.3)
        assert set(corpus.ids("train")).isdisjoint(corpus.ids("test"))
        assert len(corpus.ids("train")) == 3

    def test_corpus_directory_round_trip(self, tmp_path):
        corpus = synth_speech_corpus(n_train=2, n_test=1, sentences=2, sentence_length=0.2)
        corpus.to_directory(tmp_path)
        back = SpeechCorpus.from_directory(tmp_path, sample_rate=FS)
        assert back.split == corpus.split
        for spk, sigs in corpus.speakers.items():
            for a, b in zip(sigs, back.speakers[spk]):
                np.testing.assert_allclose(a.samples, b.samples, atol=1e-4)

    def test_untagged_speaker_rejected(self):
        with pytest.raises(DataError):
            SpeechCorpus({"a": [Signal(np.ones(3), FS)]}, {})

    def test_manifest_bands(self):
        manifest = synth_manifest(n_rooms=3, arrays=1, positions=1, airs_per_position=2, seed=3)
        assert len(manifest) == 6
        for rec in manifest:
            preset = ROOM_PRESETS[int(rec.room_id[-1])]
            p = acoustic_params(rec.air)
            lo, hi = preset["t60"]
            assert lo * 0.95 <= p.t60 <= hi * 1.05
            lo, hi = preset["drr"]
            assert lo - 0.5 <= p.drr <= hi + 0.5
