"""Dataset construction: utterances, balanced batches, fold plans.

Reverberant samples are made on the fly: a speaker's sentences are joined,
circularly shifted at random and cut to the utterance length, convolved
with an AIR, truncated back to the utterance length and turned into a
log-power spectrogram.

Balanced batches take a fixed number of AIRs from every position block
(room, array, position), walking each block with its own round-robin
counter that persists across batches and epochs.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from roomclass.acoustics import AirRecord, SynthAirSpec, synth_air
from roomclass.dsp import Signal, StftConfig, convolve, log_power_stft, read_wav, write_wav
from roomclass.errors import DataError

__all__ = [
    "SpeechCorpus",
    "DatasetConfig",
    "Batch",
    "FoldPlan",
    "BalancedBatcher",
    "build_utterance",
    "reverberant_speech",
    "spectrogram_sample",
    "make_balanced_batch",
    "make_samples",
    "make_folds",
    "epoch_plan",
    "room_labels",
    "validation_split",
    "ROOM_PRESETS",
    "synth_speech_corpus",
    "synth_manifest",
]


@dataclass
class SpeechCorpus:
    """Anechoic speech grouped by speaker, with a train/test tag per speaker."""

    speakers: dict[str, list[Signal]]
    split: dict[str, str]

    def __post_init__(self):
        for spk in self.speakers:
            if self.split.get(spk) not in ("train", "test"):
                raise DataError(f"speaker {spk!r} has no train/test tag")

    def ids(self, split: str) -> list[str]:
        return sorted(s for s in self.speakers if self.split[s] == split)

    @classmethod
    def from_directory(cls, root, sample_rate: int | None = None) -> "SpeechCorpus":
        """Load ``root/<speaker>/*.wav`` plus ``root/split.csv`` (columns
        ``speaker,split``)."""
        root = Path(root)
        with (root / "split.csv").open(newline="") as fh:
            split = {row["speaker"]: row["split"] for row in csv.DictReader(fh)}
        speakers = {}
        for spk in sorted(split):
            files = sorted((root / spk).glob("*.wav"))
            if not files:
                raise DataError(f"speaker {spk!r} has no WAV files under {root / spk}")
            speakers[spk] = [read_wav(f, expected_rate=sample_rate) for f in files]
        return cls(speakers, split)

    def to_directory(self, root) -> None:
        root = Path(root)
        for spk, sigs in self.speakers.items():
            (root / spk).mkdir(parents=True, exist_ok=True)
            for i, sig in enumerate(sigs):
                write_wav(root / spk / f"s{i:03d}.wav", sig)
        with (root / "split.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["speaker", "split"])
            for spk in sorted(self.split):
                writer.writerow([spk, self.split[spk]])


@dataclass(frozen=True)
class DatasetConfig:
    """``n_u`` is utterances per AIR; an epoch is ``ceil(M * n_u)`` updates."""

    n_u: float = 1.0
    utterance_length: float = 5.0
    sample_rate: int = 16000
    stft: StftConfig = field(default_factory=StftConfig)
    airs_per_position_per_batch: int = 2
    seed: int = 0

    def __post_init__(self):
        if not self.n_u >= 1:
            raise DataError(f"n_u must be >= 1, got {self.n_u}")
        if not self.utterance_length > 0:
            raise DataError("utterance_length must be positive")
        if self.airs_per_position_per_batch < 1:
            raise DataError("airs_per_position_per_batch must be >= 1")

    @property
    def n_samples(self) -> int:
        return int(round(self.utterance_length * self.sample_rate))

    @property
    def input_shape(self) -> tuple[int, int]:
        return (self.stft.n_frames(self.n_samples), self.stft.n_bins)


@dataclass
class Batch:
    X: np.ndarray
    labels: np.ndarray
    provenance: list[dict]

    def __len__(self):
        return self.labels.shape[0]


@dataclass(frozen=True)
class FoldPlan:
    scheme: str
    names: list[str]
    folds: list[frozenset]

    def __len__(self):
        return len(self.folds)


def room_labels(manifest) -> list[str]:
    """Sorted room ids; a room's class index is its position in this list."""
    return sorted({rec.room_id for rec in manifest})


def build_utterance(speech: list[Signal], cfg: DatasetConfig, rng: np.random.Generator) -> Signal:
    """Join a speaker's sentences (cycling if shorter than the utterance),
    apply a uniform random circular shift and truncate to the utterance length."""
    if not speech:
        raise DataError("speaker has no sentences")
    for s in speech:
        if s.sample_rate != cfg.sample_rate:
            raise DataError(f"speech at {s.sample_rate} Hz, expected {cfg.sample_rate} Hz")
    joined = np.concatenate([s.samples for s in speech])
    if joined.size == 0:
        raise DataError("speaker has zero total duration")
    n = cfg.n_samples
    if joined.size < n:
        joined = np.tile(joined, math.ceil(n / joined.size))
    shift = int(rng.integers(joined.size))
    return Signal(np.roll(joined, -shift)[:n], cfg.sample_rate)


def reverberant_speech(speech: Signal, air: Signal, n_samples: int) -> Signal:
    """``speech * air`` truncated to ``n_samples``."""
    wet = convolve(speech, air)
    return Signal(wet.samples[:n_samples], wet.sample_rate)


def spectrogram_sample(speech: Signal, air: Signal, cfg: DatasetConfig) -> np.ndarray:
    return log_power_stft(reverberant_speech(speech, air, cfg.n_samples), cfg.stft).values


def _blocks(manifest) -> dict[tuple, list[AirRecord]]:
    """Group records by (room, array, position); a mapping of block key to
    records is accepted as already grouped."""
    if isinstance(manifest, Mapping):
        return {tuple(k): list(v) for k, v in sorted(manifest.items())}
    blocks = defaultdict(list)
    for rec in manifest:
        blocks[rec.block].append(rec)
    return dict(sorted(blocks.items()))


def make_balanced_batch(manifest, corpus: SpeechCorpus, counters: dict, cfg: DatasetConfig,
                        rng: np.random.Generator, rooms: list[str] | None = None,
                        speakers: list[str] | None = None) -> Batch:
    """One balanced batch.

    Each position block contributes ``cfg.airs_per_position_per_batch`` AIRs
    chosen by its round-robin counter (``counters`` is updated in place).
    Every AIR is paired with a fresh utterance from a training speaker drawn
    with replacement.
    """
    blocks = _blocks(manifest)
    if not blocks:
        raise DataError("empty manifest")
    rooms = rooms or sorted({key[0] for key in blocks})
    speakers = speakers if speakers is not None else corpus.ids("train")
    if not speakers:
        raise DataError("no training speakers")
    X, labels, prov = [], [], []
    for key, recs in blocks.items():
        if not recs:
            raise DataError(f"empty position block {key}")
        for _ in range(cfg.airs_per_position_per_batch):
            idx = counters.get(key, 0)
            rec = recs[idx % len(recs)]
            counters[key] = (idx + 1) % len(recs)
            spk = speakers[int(rng.integers(len(speakers)))]
            utt = build_utterance(corpus.speakers[spk], cfg, rng)
            X.append(spectrogram_sample(utt, rec.air, cfg))
            labels.append(rooms.index(rec.room_id))
            prov.append({"air_id": rec.air_id, "speaker": spk, "block": "/".join(key)})
    return Batch(np.stack(X), np.asarray(labels, dtype=np.int64), prov)


def make_samples(records, corpus: SpeechCorpus, cfg: DatasetConfig, rng: np.random.Generator,
                 per_air: int = 1, split: str = "test", rooms: list[str] | None = None) -> Batch:
    """A fixed labelled set: ``per_air`` utterances (speakers from ``split``)
    convolved with every record."""
    records = list(records)
    if not records:
        raise DataError("no records to sample")
    rooms = rooms or room_labels(records)
    speakers = corpus.ids(split)
    if not speakers:
        raise DataError(f"no {split} speakers")
    X, labels, prov = [], [], []
    for rec in records:
        for _ in range(per_air):
            spk = speakers[int(rng.integers(len(speakers)))]
            utt = build_utterance(corpus.speakers[spk], cfg, rng)
            X.append(spectrogram_sample(utt, rec.air, cfg))
            labels.append(rooms.index(rec.room_id))
            prov.append({"air_id": rec.air_id, "speaker": spk, "block": "/".join(rec.block)})
    return Batch(np.stack(X), np.asarray(labels, dtype=np.int64), prov)


def epoch_plan(cfg: DatasetConfig, manifest) -> int:
    """Weight updates per epoch: ``ceil(M * n_u)``."""
    return math.ceil(len(manifest) * cfg.n_u - 1e-9)


class BalancedBatcher:
    """Stateful source of balanced training batches.

    Holds the per-block counters and its own rng so that the sequence of
    batches is reproducible from ``(manifest, corpus, cfg)``.
    """

    def __init__(self, manifest, corpus: SpeechCorpus, cfg: DatasetConfig, rooms=None,
                 updates_per_epoch: int | None = None):
        self.manifest = list(manifest)
        self.corpus = corpus
        self.cfg = cfg
        self.rooms = rooms or room_labels(self.manifest)
        self.counters: dict = {}
        self.rng = np.random.default_rng(cfg.seed)
        self.updates_per_epoch = updates_per_epoch or epoch_plan(cfg, self.manifest)
        self.batch_size = len(_blocks(self.manifest)) * cfg.airs_per_position_per_batch

    def next_batch(self) -> Batch:
        return make_balanced_batch(self.manifest, self.corpus, self.counters, self.cfg, self.rng, self.rooms)


def validation_split(manifest, fraction: float = 0.15, seed: int = 0):
    """Hold out ``fraction`` of the AIRs of every room (at least one) for
    validation, never emptying a position block.  Returns ``(train, val)``."""
    if not 0 < fraction < 1:
        raise DataError("validation fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    by_room = defaultdict(list)
    for rec in manifest:
        by_room[rec.room_id].append(rec)
    held = set()
    for room in sorted(by_room):
        recs = by_room[room]
        want = max(1, int(round(fraction * len(recs))))
        block_sizes = Counter(r.block for r in recs)
        order = rng.permutation(len(recs))
        for i in order:
            if want == 0:
                break
            rec = recs[i]
            if block_sizes[rec.block] > 1:
                held.add(id(rec))
                block_sizes[rec.block] -= 1
                want -= 1
        if not any(id(r) in held for r in recs):
            raise DataError(f"room {room!r}: no AIR can be held out for validation without emptying a block")
    train = [r for r in manifest if id(r) not in held]
    val = [r for r in manifest if id(r) in held]
    return train, val


def make_folds(manifest, scheme: str) -> FoldPlan:
    """Cross-validation partition of AIR ids.

    ``by_position``: one fold per (room, array, position).
    ``by_array``: one fold per array id.
    ``by_grid_x``: AIRs sorted by ``grid_x`` and cut into three equal-count
    parts; the two outer parts are the folds and the middle is dropped.
    """
    manifest = list(manifest)
    ids = [r.air_id for r in manifest]
    if len(set(ids)) != len(ids) or any(not i for i in ids):
        raise DataError("manifest AIR ids must be unique and non-empty")
    if scheme == "by_position":
        groups = defaultdict(set)
        for r in manifest:
            groups["/".join(r.block)].add(r.air_id)
    elif scheme == "by_array":
        groups = defaultdict(set)
        for r in manifest:
            groups[r.array_id].add(r.air_id)
    elif scheme == "by_grid_x":
        if any(r.grid_x is None for r in manifest):
            raise DataError("by_grid_x needs grid_x on every AIR")
        ordered = sorted(manifest, key=lambda r: (r.grid_x, r.air_id))
        third = len(ordered) // 3
        if third == 0:
            raise DataError("too few AIRs for by_grid_x")
        groups = {
            "low_x": {r.air_id for r in ordered[:third]},
            "high_x": {r.air_id for r in ordered[len(ordered) - third :]},
        }
    else:
        raise DataError(f"unknown fold scheme {scheme!r}")
    if len(groups) < 2:
        raise DataError(f"{scheme}: only {len(groups)} fold(s); cannot cross-validate")
    names = sorted(groups)
    return FoldPlan(scheme, names, [frozenset(groups[n]) for n in names])


# -- synthetic corpora --------------------------------------------------------

# disjoint T60 (s) and DRR (dB) bands, one per room
ROOM_PRESETS = (
    {"t60": (0.20, 0.30), "drr": (10.0, 16.0)},
    {"t60": (0.35, 0.45), "drr": (6.0, 10.0)},
    {"t60": (0.50, 0.60), "drr": (2.0, 6.0)},
    {"t60": (0.65, 0.75), "drr": (-2.0, 2.0)},
    {"t60": (0.80, 0.95), "drr": (-6.0, -2.0)},
)


def _synth_sentence(rng: np.random.Generator, fs: int, f0_range, duration: float) -> np.ndarray:
    """Voiced 'syllables' (harmonic complexes with a gliding pitch and a random
    formant-like envelope) separated by short silences."""
    n = int(duration * fs)
    out = np.zeros(n)
    pos = int(rng.uniform(0.02, 0.1) * fs)
    while pos < n:
        length = int(rng.uniform(0.08, 0.3) * fs)
        seg = min(length, n - pos)
        t = np.arange(seg) / fs
        f0 = rng.uniform(*f0_range) * (1.0 + rng.uniform(-0.15, 0.15) * t / max(t[-1], 1e-9) if seg > 1 else 1.0)
        phase = 2 * np.pi * np.cumsum(f0) / fs
        formants = rng.uniform([300, 900, 2000], [900, 2200, 3500])
        syll = np.zeros(seg)
        for k in range(1, int(4000 / f0_range[1]) + 1):
            fk = k * np.mean(f0)
            amp = sum(np.exp(-0.5 * ((fk - fm) / 150.0) ** 2) for fm in formants) + 0.05 / k
            syll += amp * np.sin(k * phase)
        env = np.sin(np.pi * np.arange(seg) / seg) ** 2
        out[pos : pos + seg] = syll * env * rng.uniform(0.5, 1.0)
        pos += seg + int(rng.uniform(0.03, 0.25) * fs)
    return out / (np.max(np.abs(out)) + 1e-12) * 0.5


def synth_speech_corpus(n_train: int = 8, n_test: int = 4, sentences: int = 3, sample_rate: int = 16000,
                        sentence_length: float = 2.5, seed: int = 0) -> SpeechCorpus:
    """Tone-complex stand-in for a speech corpus; speakers differ in pitch range."""
    rng = np.random.default_rng(seed)
    speakers, split = {}, {}
    for i in range(n_train + n_test):
        spk = f"spk{i:03d}"
        lo = rng.uniform(90, 220)
        f0_range = (lo, lo * 1.3)
        speakers[spk] = [
            Signal(_synth_sentence(rng, sample_rate, f0_range, sentence_length * rng.uniform(0.8, 1.2)), sample_rate)
            for _ in range(sentences)
        ]
        split[spk] = "train" if i < n_train else "test"
    return SpeechCorpus(speakers, split)


def synth_manifest(n_rooms: int = 5, arrays: int = 2, positions: int = 2, airs_per_position: int = 5,
                   sample_rate: int = 16000, seed: int = 0, presets=ROOM_PRESETS) -> list[AirRecord]:
    """Synthetic AIR manifest with rooms drawn from disjoint T60/DRR bands.

    Within a room the DRR is spread across positions (nearer positions get a
    higher DRR) and T60 varies slightly per AIR.  ``grid_x`` runs along the
    positions so every fold scheme is available.
    """
    if n_rooms > len(presets):
        raise DataError(f"only {len(presets)} room presets available")
    rng = np.random.default_rng(seed)
    records = []
    n_pos = arrays * positions
    for r in range(n_rooms):
        p = presets[r]
        t_lo, t_hi = p["t60"]
        d_lo, d_hi = p["drr"]
        length = int(math.ceil(t_hi * 1.1 * sample_rate)) + 200
        for a in range(arrays):
            for q in range(positions):
                k = a * positions + q
                drr_centre = d_hi - (k + 0.5) * (d_hi - d_lo) / n_pos
                for j in range(airs_per_position):
                    spec = SynthAirSpec(
                        t60=float(rng.uniform(t_lo, t_hi)),
                        drr=float(drr_centre + rng.uniform(-0.5, 0.5) * (d_hi - d_lo) / n_pos),
                        length=length,
                        sample_rate=sample_rate,
                        direct_delay=int(rng.integers(20, 120)),
                        seed=int(rng.integers(2**31)),
                    )
                    rec = synth_air(spec, f"room{r}", f"array{a}", f"pos{q}",
                                    air_id=f"room{r}_array{a}_pos{q}_{j:02d}")
                    records.append(
                        AirRecord(rec.air, rec.room_id, rec.array_id, rec.position_id, rec.air_id,
                                  grid_x=float(k + rng.uniform(0.0, 0.5)))
                    )
    return records
