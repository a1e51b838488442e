"""Tests for roomclass.acoustics: EDC, decay-time and DRR estimators, FDRT,
synthetic AIRs and manifests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomclass.acoustics import (
    EDC_FLOOR_DB,
    OCTAVE_CENTRES,
    AirRecord,
    SynthAirSpec,
    acoustic_params,
    energy_decay_curve,
    estimate_drr,
    estimate_rt,
    fdrt,
    octave_bands,
    read_manifest,
    synth_air,
    write_manifest,
)
from roomclass.dsp import Signal
from roomclass.errors import AnechoicInputError, DataError, InsufficientDecayError

FS = 16000


def exponential_air(t60, seconds=1.5, fs=FS):
    tau = t60 / (3 * math.log(10))
    n = np.arange(int(seconds * fs))
    return Signal(np.exp(-n / (tau * fs)), fs)


def multitone_air(t60, seconds=1.5, fs=FS, seed=0):
    """Decaying sum of cosines at the octave centres: every band sees the
    same exponential envelope, so every band has the same decay time."""
    rng = np.random.default_rng(seed)
    tau = t60 / (3 * math.log(10))
    n = np.arange(int(seconds * fs))
    tones = sum(np.cos(2 * np.pi * fc * n / fs + rng.uniform(0, 2 * np.pi)) for fc in OCTAVE_CENTRES)
    return Signal(np.exp(-n / (tau * fs)) * tones, fs)


# ---------------------------------------------------------------------------
# Energy decay curve
# ---------------------------------------------------------------------------


class TestEnergyDecayCurve:
    def test_unit_impulse(self):
        h = np.zeros(10)
        h[0] = 1.0
        edc = energy_decay_curve(Signal(h, FS))
        assert edc[0] == 0.0
        np.testing.assert_array_equal(edc[1:], EDC_FLOOR_DB)

    def test_two_equal_impulses(self):
        h = np.zeros(10)
        h[0] = h[5] = 1.0
        edc = energy_decay_curve(Signal(h, FS))
        np.testing.assert_allclose(edc[1:6], 10 * np.log10(0.5), atol=1e-12)

    def test_matches_direct_sum(self):
        h = np.random.default_rng(0).standard_normal(300)
        total = sum(v * v for v in h)
        expected = [10 * np.log10(sum(v * v for v in h[n:]) / total) for n in range(h.size)]
        np.testing.assert_allclose(energy_decay_curve(Signal(h, FS)), expected, atol=1e-9)

    def test_all_zero_rejected(self):
        with pytest.raises(DataError):
            energy_decay_curve(Signal(np.zeros(5), FS))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**16), n=st.integers(1, 400))
    def test_non_increasing_from_zero(self, seed, n):
        h = np.random.default_rng(seed).standard_normal(n)
        edc = energy_decay_curve(Signal(h, FS))
        assert edc[0] == 0.0
        assert np.all(np.diff(edc) <= 0)


# ---------------------------------------------------------------------------
# Reverberation time
# ---------------------------------------------------------------------------


class TestEstimateRt:
    def test_ideal_exponential(self):
        edc = energy_decay_curve(exponential_air(0.5))
        assert estimate_rt(edc, FS) == pytest.approx(0.5, rel=0.05)

    def test_fit_ranges_agree_for_single_slope(self):
        edc = energy_decay_curve(exponential_air(0.5))
        assert estimate_rt(edc, FS, (-5, -25)) == pytest.approx(estimate_rt(edc, FS, (-5, -35)), rel=0.05)

    def test_insufficient_decay(self):
        # a flat 50-sample response only falls to 10 log10(1/50) ~ -17 dB
        edc = energy_decay_curve(Signal(np.ones(50), FS))
        assert edc.min() > -20
        with pytest.raises(InsufficientDecayError, match="insufficient decay"):
            estimate_rt(edc, FS)

    def test_bad_range(self):
        with pytest.raises(DataError):
            estimate_rt(np.linspace(0, -60, 100), FS, (-35, -5))


# ---------------------------------------------------------------------------
# DRR
# ---------------------------------------------------------------------------


class TestEstimateDrr:
    def test_hand_built_ten_db(self):
        h = np.zeros(2000)
        h[10] = 1.0
        h[500:510] = math.sqrt(0.1 / 10)
        assert estimate_drr(Signal(h, FS)) == pytest.approx(10.0, abs=0.1)

    def test_anechoic(self):
        h = np.zeros(200)
        h[50] = 1.0
        h[52] = 0.3
        with pytest.raises(AnechoicInputError, match="anechoic"):
            estimate_drr(Signal(h, FS))

    @settings(max_examples=30, deadline=None)
    @given(c=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
    def test_scale_invariance(self, c):
        air = synth_air(SynthAirSpec(0.4, 5.0, 8000, direct_delay=30, seed=3)).air
        scaled = Signal(air.samples * c, FS)
        assert estimate_drr(scaled) == pytest.approx(estimate_drr(air), abs=1e-9)
        edc_a, edc_b = energy_decay_curve(air), energy_decay_curve(scaled)
        assert estimate_rt(edc_b, FS) == pytest.approx(estimate_rt(edc_a, FS), rel=1e-9)


# ---------------------------------------------------------------------------
# FDRT
# ---------------------------------------------------------------------------


class TestFdrt:
    def test_default_bands(self):
        edges = octave_bands()
        assert edges.shape == (6, 2)
        np.testing.assert_allclose(np.sqrt(edges[:, 0] * edges[:, 1]), OCTAVE_CENTRES)

    def test_flat_decay_every_band(self):
        times, missing = fdrt(multitone_air(0.5))
        assert not any(missing)
        np.testing.assert_allclose(times, 0.5, rtol=0.10)

    def test_band_above_nyquist_rejected(self):
        with pytest.raises(DataError, match="Nyquist"):
            fdrt(multitone_air(0.5, fs=8000), bands=[[2800.0, 5600.0]])

    def test_monotone_in_t60(self):
        short = synth_air(SynthAirSpec(0.3, 5.0, 24000, direct_delay=40, seed=1)).air
        long = synth_air(SynthAirSpec(0.9, 5.0, 24000, direct_delay=40, seed=2)).air
        t_short, _ = fdrt(short)
        t_long, _ = fdrt(long)
        assert t_long.min() > t_short.max()

    def test_missing_band_flagged(self):
        times, missing = fdrt(Signal(np.zeros(4000), FS))
        assert missing == [True] * 6
        assert np.all(np.isnan(times))

    def test_scale_invariance(self):
        air = multitone_air(0.6)
        a, _ = fdrt(air)
        b, _ = fdrt(Signal(air.samples * 37.0, FS))
        np.testing.assert_allclose(a, b, rtol=1e-9)


# ---------------------------------------------------------------------------
# Synthetic AIRs
# ---------------------------------------------------------------------------


class TestSynthAir:
    def test_round_trip_example(self):
        air = synth_air(SynthAirSpec(t60=0.5, drr=6.0, length=16000, sample_rate=FS, seed=7)).air
        p = acoustic_params(air)
        assert p.t60 == pytest.approx(0.5, rel=0.05)
        assert p.drr == pytest.approx(6.0, abs=0.5)
        assert p.t30 == pytest.approx(p.t60 / 2)

    def test_deterministic(self):
        spec = SynthAirSpec(t60=0.5, drr=6.0, length=16000, seed=7)
        np.testing.assert_array_equal(synth_air(spec).air.samples, synth_air(spec).air.samples)

    def test_seed_changes_tail(self):
        a = synth_air(SynthAirSpec(0.5, 6.0, 16000, seed=1)).air.samples
        b = synth_air(SynthAirSpec(0.5, 6.0, 16000, seed=2)).air.samples
        assert not np.array_equal(a, b)

    def test_infinite_drr_rejected(self):
        with pytest.raises(DataError, match="infeasible"):
            synth_air(SynthAirSpec(0.5, math.inf, 16000))

    def test_too_short_rejected(self):
        with pytest.raises(DataError, match="infeasible"):
            synth_air(SynthAirSpec(0.5, 6.0, 4000))

    def test_structure(self):
        rec = synth_air(SynthAirSpec(0.3, 3.0, 8000, direct_delay=25, amplitude=0.7), "r", "a", "p", "x")
        h = rec.air.samples
        assert h[25] == 0.7
        np.testing.assert_array_equal(h[:25], 0.0)
        np.testing.assert_array_equal(h[26 : 25 + 32 + 1], 0.0)
        assert rec.block == ("r", "a", "p")

    @settings(max_examples=25, deadline=None)
    @given(
        t60=st.floats(0.2, 1.0),
        drr=st.floats(-6.0, 20.0),
        seed=st.integers(0, 2**31 - 1),
        delay=st.integers(0, 200),
    )
    def test_round_trip_property(self, t60, drr, seed, delay):
        spec = SynthAirSpec(t60, drr, math.ceil(t60 * FS) + delay + 200, direct_delay=delay, seed=seed)
        air = synth_air(spec).air
        assert estimate_rt(energy_decay_curve(air), FS) == pytest.approx(t60, rel=0.05)
        assert estimate_drr(air) == pytest.approx(drr, abs=0.5)


# ---------------------------------------------------------------------------
# Records and manifests
# ---------------------------------------------------------------------------


class TestManifest:
    def test_empty_label_rejected(self):
        with pytest.raises(DataError):
            AirRecord(Signal(np.ones(3), FS), "", "a", "p")

    def test_csv_round_trip(self, tmp_path):
        recs = [
            synth_air(SynthAirSpec(0.3, 4.0, 6000, seed=i), f"room{i % 2}", "a0", f"p{i}", f"air{i}")
            for i in range(4)
        ]
        recs = [AirRecord(r.air, r.room_id, r.array_id, r.position_id, r.air_id, grid_x=float(i))
                for i, r in enumerate(recs)]
        write_manifest(tmp_path / "m.csv", recs)
        back = read_manifest(tmp_path / "m.csv", expected_rate=FS)
        assert [r.air_id for r in back] == [r.air_id for r in recs]
        assert [r.grid_x for r in back] == [0.0, 1.0, 2.0, 3.0]
        for a, b in zip(recs, back):
            assert a.block == b.block
            np.testing.assert_allclose(a.air.samples, b.air.samples, atol=1e-7)

    def test_json_manifest(self, tmp_path):
        rec = synth_air(SynthAirSpec(0.3, 4.0, 6000), "r", "a", "p", "only")
        write_manifest(tmp_path / "m.json", [rec])
        back = read_manifest(tmp_path / "m.json")
        assert back[0].air_id == "only" and back[0].grid_x is None

    def test_missing_label_rejected(self, tmp_path):
        (tmp_path / "bad.csv").write_text("path,room_id,array_id,position_id\nx.wav,r,,p\n")
        with pytest.raises(DataError):
            read_manifest(tmp_path / "bad.csv")
