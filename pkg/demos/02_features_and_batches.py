"""
From dry speech to balanced training batches
============================================

Builds the network input for one AIR: a five-second utterance, convolved
with the room response, turned into a log-power spectrogram.  Then shows
how the balanced batcher walks through every position of every room.
"""

import numpy as np

from roomclass.data import (
    BalancedBatcher,
    DatasetConfig,
    build_utterance,
    epoch_plan,
    make_folds,
    spectrogram_sample,
    synth_manifest,
    synth_speech_corpus,
)
from roomclass.dsp import frame_features, magnitude_stft

cfg = DatasetConfig()
corpus = synth_speech_corpus(n_train=4, n_test=2, seed=0)
manifest = synth_manifest(n_rooms=3, arrays=2, positions=2, airs_per_position=3, seed=0)
print(f"{len(manifest)} AIRs, training speakers {corpus.ids('train')}")

# %%
# One sample
# ----------
# Sentences of one speaker are joined, shifted circularly at random and cut
# to exactly five seconds.
rng = np.random.default_rng(0)
speaker = corpus.ids("train")[0]
utterance = build_utterance(corpus.speakers[speaker], cfg, rng)
print(f"utterance: {len(utterance)} samples = {utterance.duration} s")

X = spectrogram_sample(utterance, manifest[0].air, cfg)
print(f"log-power spectrogram: {X.shape} (frames x bins), range {X.min():.1f} .. {X.max():.1f}")

# Per-frame spectral summaries, used later by the attention analysis.
mags, freqs = magnitude_stft(utterance, cfg.stft)
feats = frame_features(mags, freqs)
# bandwidth is the magnitude-weighted spread, so it scales with level
print("mean centroid (Hz), bandwidth, roll-off (Hz):", np.round(feats.mean(axis=0)))

# %%
# Balanced batches
# ----------------
# Every (room, array, position) block contributes two AIRs per batch,
# chosen by a round-robin counter that survives across batches.
short = DatasetConfig(utterance_length=0.5)
batcher = BalancedBatcher(manifest, corpus, short)
for i in range(3):
    batch = batcher.next_batch()
    first_block = [p["air_id"] for p in batch.provenance[:2]]
    print(f"batch {i}: {len(batch)} samples, per room {np.bincount(batch.labels).tolist()}, "
          f"first block uses {first_block}")
print(f"updates per epoch with n_u=1: {epoch_plan(cfg, manifest)}")

# %%
# Cross-validation folds
# ----------------------
for scheme in ("by_position", "by_array", "by_grid_x"):
    plan = make_folds(manifest, scheme)
    print(f"{scheme:12s}: {len(plan)} folds of sizes {[len(f) for f in plan.folds]}")
