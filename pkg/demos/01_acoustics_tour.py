"""
Acoustic parameters of a synthetic room
=======================================

A walk through the acoustics module: build an impulse response with a known
decay time and direct-to-reverberant ratio, then recover both from the
energy decay curve and the direct-path window.  Octave-band decay times
close the tour.
"""

import numpy as np

from roomclass.acoustics import (
    SynthAirSpec,
    acoustic_params,
    energy_decay_curve,
    estimate_drr,
    estimate_rt,
    fdrt,
    octave_bands,
    synth_air,
)

fs = 16000

# An exponentially decaying noise tail behind a single direct-path spike.
# The generator scales the tail so that the requested DRR holds exactly.
spec = SynthAirSpec(t60=0.6, drr=4.0, length=int(0.8 * fs), sample_rate=fs, direct_delay=60, seed=3)
air = synth_air(spec, room_id="demo_room", array_id="a0", position_id="p0", air_id="demo").air
print(f"AIR: {len(air)} samples, {air.duration:.2f} s")

# %%
# Energy decay curve
# ------------------
# Backward integration of the squared response, in dB relative to the total.
edc = energy_decay_curve(air)
for ms in (0, 50, 100, 200, 400):
    print(f"EDC at {ms:3d} ms: {edc[int(ms * fs / 1000)]:7.2f} dB")

# The decay time comes from a straight-line fit between -5 and -35 dB,
# extrapolated to 60 dB of decay.
print(f"T60 estimate: {estimate_rt(edc, fs):.3f} s (generated with {spec.t60} s)")
print(f"DRR estimate: {estimate_drr(air):.2f} dB (generated with {spec.drr} dB)")

# %%
# All parameters at once
# ----------------------
params = acoustic_params(air)
print(f"t30={params.t30:.3f} s  t60={params.t60:.3f} s  drr={params.drr:.2f} dB")

# %%
# Decay time per octave band
# --------------------------
# The synthetic tail is white, so every band should decay at roughly the
# same rate.  Bands the response cannot support are flagged as missing.
times, missing = fdrt(air)
for (lo, hi), t, m in zip(octave_bands(), times, missing):
    label = "missing" if m else f"{t:.3f} s"
    print(f"{np.sqrt(lo * hi):6.0f} Hz band: {label}")
