"""Acoustic impulse response (AIR) characterisation and synthesis.

Energy decay curves use Schroeder backward integration; reverberation times
come from a least-squares line fit to the EDC over a dB range and are always
reported as the time to decay by 60 dB.  The T60 proxy is the (-5, -35) dB
fit extrapolated, which is the usual T30 procedure.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from roomclass.dsp import Signal, read_wav, write_wav
from roomclass.errors import AnechoicInputError, DataError, InsufficientDecayError

__all__ = [
    "AirRecord",
    "AcousticParams",
    "SynthAirSpec",
    "EDC_FLOOR_DB",
    "OCTAVE_CENTRES",
    "octave_bands",
    "energy_decay_curve",
    "estimate_rt",
    "estimate_drr",
    "fdrt",
    "acoustic_params",
    "synth_air",
    "read_manifest",
    "write_manifest",
]

EDC_FLOOR_DB = -120.0
OCTAVE_CENTRES = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0)
T30_RANGE = (-5.0, -35.0)


@dataclass(frozen=True)
class AirRecord:
    """An AIR together with its room / array / position labels.

    ``air_id`` identifies the record inside a manifest (fold plans and batch
    provenance refer to it).  ``grid_x`` is the receiver x-coordinate in
    metres, needed only for the grid fold scheme.
    """

    air: Signal
    room_id: str
    array_id: str
    position_id: str
    air_id: str = ""
    grid_x: float | None = None
    path: str | None = None

    def __post_init__(self):
        for name in ("room_id", "array_id", "position_id"):
            if not str(getattr(self, name)):
                raise DataError(f"AirRecord.{name} must be non-empty")
        if len(self.air) == 0:
            raise DataError("AirRecord.air must be non-empty")

    @property
    def block(self) -> tuple[str, str, str]:
        """Position block key used by balanced batching."""
        return (self.room_id, self.array_id, self.position_id)


@dataclass
class AcousticParams:
    t30: float
    t60: float
    drr: float
    fdrt: np.ndarray
    band_edges: np.ndarray
    fdrt_missing: list[bool] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "t30": self.t30,
            "t60": self.t60,
            "drr": self.drr,
            "fdrt": [None if m else float(v) for v, m in zip(self.fdrt, self.fdrt_missing)],
            "band_edges": [[float(lo), float(hi)] for lo, hi in self.band_edges],
        }


@dataclass(frozen=True)
class SynthAirSpec:
    t60: float
    drr: float
    length: int
    sample_rate: int = 16000
    direct_delay: int = 0
    seed: int = 0
    amplitude: float = 1.0
    direct_window_ms: float = 2.0


def energy_decay_curve(air: Signal | np.ndarray) -> np.ndarray:
    """Schroeder backward-integrated energy in dB, normalised to 0 dB at n = 0.

    Zero-energy tails are clamped to :data:`EDC_FLOOR_DB`.
    """
    h = air.samples if isinstance(air, Signal) else np.asarray(air, dtype=np.float64)
    if h.size == 0:
        raise DataError("empty AIR")
    energy = np.cumsum((h**2)[::-1])[::-1]
    if energy[0] <= 0:
        raise DataError("all-zero AIR has no decay curve")
    with np.errstate(divide="ignore"):
        edc = 10.0 * np.log10(energy / energy[0])
    # guard against cumsum round-off pushing the tail above earlier values
    edc = np.minimum.accumulate(np.maximum(edc, EDC_FLOOR_DB))
    edc[0] = 0.0
    return edc


def estimate_rt(edc: np.ndarray, sample_rate: int, fit_range=T30_RANGE) -> float:
    """Reverberation time (s) from a line fit to ``edc`` within ``fit_range`` dB.

    The fit uses every sample whose EDC lies in ``[end_dB, start_dB]``; the
    result is the time the fitted line takes to fall by 60 dB.
    """
    start_db, end_db = fit_range
    if not start_db > end_db:
        raise DataError(f"fit_range must be (start_dB, end_dB) with start > end, got {fit_range}")
    edc = np.asarray(edc, dtype=np.float64)
    if edc.min() > end_db:
        raise InsufficientDecayError(
            f"insufficient decay: EDC bottoms out at {edc.min():.1f} dB, needs {end_db} dB"
        )
    idx = np.flatnonzero((edc <= start_db) & (edc >= end_db))
    if idx.size < 2:
        raise InsufficientDecayError(f"insufficient decay: fewer than 2 EDC samples in {fit_range} dB")
    t = idx / float(sample_rate)
    slope, _ = np.polyfit(t, edc[idx], 1)
    if slope >= 0:
        raise InsufficientDecayError("insufficient decay: non-negative fitted slope")
    return float(-60.0 / slope)


def estimate_drr(air: Signal, direct_window: float = 2.0) -> float:
    """Direct-to-reverberant ratio in dB.

    Direct energy is taken within +/- ``direct_window`` ms of the absolute
    peak; everything else counts as reverberant.
    """
    h = air.samples
    if h.size == 0 or not np.any(h):
        raise DataError("AIR has no identifiable peak")
    peak = int(np.argmax(np.abs(h)))
    half = int(round(direct_window * 1e-3 * air.sample_rate))
    lo, hi = max(0, peak - half), min(h.size, peak + half + 1)
    energy = h**2
    direct = energy[lo:hi].sum()
    remaining = energy.sum() - direct
    if remaining <= 0:
        raise AnechoicInputError("anechoic input: no energy outside the direct-path window")
    return float(10.0 * np.log10(direct / remaining))


def octave_bands(centres=OCTAVE_CENTRES) -> np.ndarray:
    """``[n_bands, 2]`` octave band edges ``(fc / sqrt 2, fc * sqrt 2)``."""
    c = np.asarray(centres, dtype=np.float64)
    return np.column_stack([c / math.sqrt(2.0), c * math.sqrt(2.0)])


def fdrt(air: Signal, bands=None, fit_range=T30_RANGE, order: int = 4) -> tuple[np.ndarray, list[bool]]:
    """Per-band reverberation time (s).

    Each band is isolated with a Butterworth band-pass applied forward and
    backward (zero phase), then analysed with :func:`energy_decay_curve` and
    :func:`estimate_rt`.  Bands without enough decay come back as NaN with the
    matching entry of the returned flag list set.
    """
    edges = octave_bands() if bands is None else np.asarray(bands, dtype=np.float64)
    nyq = air.sample_rate / 2.0
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise DataError("bands must be an [n, 2] array of (low, high) edges")
    if np.any(edges[:, 1] >= nyq) or np.any(edges[:, 0] <= 0) or np.any(edges[:, 0] >= edges[:, 1]):
        raise DataError(f"band edges must satisfy 0 < low < high < Nyquist ({nyq} Hz)")
    times = np.full(edges.shape[0], np.nan)
    missing = []
    # zero guard on both sides: the non-causal filter response must not fold
    # back off the array edges (a direct impulse at n = 0 otherwise doubles)
    pad = air.sample_rate // 10
    h = np.concatenate([np.zeros(pad), air.samples, np.zeros(pad)])
    for i, (lo, hi) in enumerate(edges):
        sos = sps.butter(order, [lo, hi], btype="bandpass", fs=air.sample_rate, output="sos")
        band = sps.sosfiltfilt(sos, h, padlen=0)
        try:
            times[i] = estimate_rt(energy_decay_curve(band), air.sample_rate, fit_range)
            missing.append(False)
        except DataError:
            missing.append(True)
    return times, missing


def acoustic_params(air: Signal, bands=None) -> AcousticParams:
    """T30, T60 proxy, DRR and FDRT for one AIR.

    ``t60`` is the 60 dB decay time extrapolated from the (-5, -35) dB fit and
    ``t30`` is half of it (the time the fitted line needs to fall 30 dB).
    """
    t60 = estimate_rt(energy_decay_curve(air), air.sample_rate, T30_RANGE)
    edges = octave_bands() if bands is None else np.asarray(bands, dtype=np.float64)
    times, missing = fdrt(air, edges)
    return AcousticParams(
        t30=t60 / 2.0, t60=t60, drr=estimate_drr(air), fdrt=times, band_edges=edges, fdrt_missing=missing
    )


def synth_air(spec: SynthAirSpec, room_id="synthetic", array_id="a0", position_id="p0", air_id="") -> AirRecord:
    """Parametric AIR: a direct impulse, a silent gap, then an exponentially
    decaying Gaussian tail.

    The gap spans the direct-path window so :func:`estimate_drr` sees only
    the impulse as direct energy.  The tail envelope is ``exp(-n / (tau fs))``
    with ``tau = t60 / (3 ln 10)`` (``n`` counted from the direct impulse) and
    the tail is scaled so its realised energy gives exactly ``spec.drr``.
    """
    if not (spec.t60 > 0 and math.isfinite(spec.t60)):
        raise DataError(f"infeasible spec: t60 must be positive and finite, got {spec.t60}")
    if not math.isfinite(spec.drr):
        raise DataError(f"infeasible spec: drr must be finite, got {spec.drr}")
    if spec.amplitude == 0 or spec.direct_delay < 0:
        raise DataError("infeasible spec: amplitude must be non-zero and direct_delay >= 0")
    fs = spec.sample_rate
    gap = int(round(spec.direct_window_ms * 1e-3 * fs))
    tail_start = spec.direct_delay + gap + 1
    if spec.length - tail_start < math.ceil(spec.t60 * fs):
        raise DataError(
            f"infeasible spec: length {spec.length} cannot hold a {spec.t60} s decay after sample {tail_start}"
        )
    rng = np.random.default_rng(spec.seed)
    tau = spec.t60 / (3.0 * math.log(10.0))
    n = np.arange(tail_start, spec.length) - spec.direct_delay
    tail = rng.standard_normal(n.size) * np.exp(-n / (tau * fs))
    target = spec.amplitude**2 * 10.0 ** (-spec.drr / 10.0)
    tail *= math.sqrt(target / np.sum(tail**2))
    h = np.zeros(spec.length)
    h[spec.direct_delay] = spec.amplitude
    h[tail_start:] = tail
    if np.max(np.abs(tail)) >= abs(spec.amplitude):
        raise DataError("infeasible spec: tail peak exceeds the direct impulse (DRR too low for this T60)")
    return AirRecord(Signal(h, fs), room_id, array_id, position_id, air_id=air_id)


_MANIFEST_FIELDS = ("path", "room_id", "array_id", "position_id", "air_id", "grid_x")


def read_manifest(path, expected_rate: int | None = None) -> list[AirRecord]:
    """Load a CSV or JSON manifest and the AIR WAV files it points to.

    Relative ``path`` entries are resolved against the manifest's directory.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        rows = json.loads(path.read_text())
    else:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    records = []
    for i, row in enumerate(rows):
        missing = [k for k in ("path", "room_id", "array_id", "position_id") if not row.get(k)]
        if missing:
            raise DataError(f"{path}: row {i} lacks {missing}")
        wav = Path(row["path"])
        if not wav.is_absolute():
            wav = path.parent / wav
        gx = row.get("grid_x")
        records.append(
            AirRecord(
                read_wav(wav, expected_rate=expected_rate),
                str(row["room_id"]),
                str(row["array_id"]),
                str(row["position_id"]),
                air_id=str(row.get("air_id") or wav.stem),
                grid_x=None if gx in (None, "") else float(gx),
                path=str(row["path"]),
            )
        )
    return records


def write_manifest(path, records, air_dir="airs") -> None:
    """Write AIR WAVs (32-bit float) under ``air_dir`` and a CSV/JSON manifest."""
    path = Path(path)
    (path.parent / air_dir).mkdir(parents=True, exist_ok=True)
    rows = []
    for i, rec in enumerate(records):
        air_id = rec.air_id or f"air{i:05d}"
        rel = f"{air_dir}/{air_id}.wav"
        write_wav(path.parent / rel, rec.air)
        rows.append(
            {
                "path": rel,
                "room_id": rec.room_id,
                "array_id": rec.array_id,
                "position_id": rec.position_id,
                "air_id": air_id,
                "grid_x": "" if rec.grid_x is None else repr(float(rec.grid_x)),
            }
        )
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(rows, indent=2))
    else:
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=_MANIFEST_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
