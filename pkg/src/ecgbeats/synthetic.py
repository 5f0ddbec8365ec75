"""Synthetic ECG records in the native file formats.

Generates PQRST-like beat trains with per-class morphologies, drift,
mains hum, and noise, then writes them through the real encoders. The
result is a miniature stand-in database: every parser, filter, and
classifier in the package can run end-to-end on it, which is how the
pipeline is exercised where the real recordings are not on disk.
"""

from __future__ import annotations

import numpy as np

from .mitdb import (ALL_RECORDS, AnnotationEvent, EcgRecord, PACED_RECORDS,
                    RecordHeader, SignalSpec, write_record)

_RATE = 360.0
_ADC_GAIN = 200.0
_ADC_ZERO = 1024

# MIT codes used by the generator: one representative per AAMI class.
_CLASS_CODE = {"N": 1, "S": 8, "V": 5, "F": 6, "Q": 12}


def _gauss(t, mu, sigma, amp):
    return amp * np.exp(-0.5 * ((t - mu) / sigma) ** 2)


def _tri(t, mu, half, amp):
    return amp * np.clip(1.0 - np.abs(t - mu) / half, 0.0, None)


def beat_template(kind: str, t: np.ndarray) -> np.ndarray:
    """Millivolt waveform of one beat, R-peak at t = 0 (t in seconds)."""
    if kind == "N":
        return (_gauss(t, -0.170, 0.025, 0.15)      # P
                + _gauss(t, -0.045, 0.008, -0.12)   # Q dip
                + _tri(t, 0.0, 0.045, 1.00)         # R
                + _gauss(t, 0.045, 0.008, -0.20)    # S dip
                + _gauss(t, 0.240, 0.045, 0.35))    # T
    if kind == "S":
        return (_gauss(t, -0.045, 0.007, -0.08)
                + _tri(t, 0.0, 0.040, 0.90)
                + _gauss(t, 0.045, 0.007, -0.15)
                + _gauss(t, 0.220, 0.040, 0.22))
    if kind == "V":
        return (_tri(t, 0.0, 0.090, 1.40)
                + _gauss(t, 0.080, 0.020, -0.35)
                + _gauss(t, 0.260, 0.060, -0.40))   # inverted T
    if kind == "F":
        return 0.5 * (beat_template("N", t) + beat_template("V", t))
    if kind == "Q":
        return (_tri(t, 0.0, 0.070, 1.10)
                + _gauss(t, 0.250, 0.055, 0.25))
    raise ValueError(f"unknown beat kind {kind!r}")


def _beat_schedule(rng, duration_s, paced):
    """(time_s, class) pairs: normal rhythm with premature S/V intrusions."""
    times, kinds = [], []
    t = 1.0
    compensate = False
    while t < duration_s - 1.0:
        if paced:
            kind = "Q"
            rr = 0.85
        else:
            draw = rng.random()
            if compensate or draw < 0.80:
                kind, rr = "N", rng.uniform(0.75, 0.85)
                if compensate:
                    rr += 0.30          # pause after an ectopic beat
                compensate = False
            elif draw < 0.89:
                kind, rr = "S", rng.uniform(0.48, 0.56)
                compensate = True
            elif draw < 0.97:
                kind, rr = "V", rng.uniform(0.50, 0.60)
                compensate = True
            elif draw < 0.99:
                kind, rr = "F", rng.uniform(0.70, 0.80)
            else:
                kind, rr = "Q", rng.uniform(0.75, 0.85)
        t += rr
        if t >= duration_s - 1.0:
            break
        times.append(t)
        kinds.append(kind)
    return times, kinds


def make_record(record_id: str, duration_s: float = 60.0, seed: int | None = None,
                drift_amp: float = 0.15, mains_amp: float = 0.05,
                noise_sd: float = 0.01) -> EcgRecord:
    """One synthetic two-channel record with expert-style annotations."""
    if seed is None:
        seed = int(record_id)
    rng = np.random.default_rng(seed)
    n = int(duration_s * _RATE)
    tt = np.arange(n) / _RATE

    paced = record_id in PACED_RECORDS
    times, kinds = _beat_schedule(rng, duration_s, paced)

    clean = np.zeros(n)
    tpl_t = np.arange(-0.30 * _RATE, 0.50 * _RATE) / _RATE
    for bt, kind in zip(times, kinds):
        center = int(round(bt * _RATE))
        lo = center + int(-0.30 * _RATE)
        tpl = beat_template(kind, tpl_t)
        a, b = max(lo, 0), min(lo + tpl.size, n)
        clean[a:b] += tpl[a - lo:b - lo]

    signal = (clean
              + drift_amp * np.sin(2 * np.pi * 0.4 * tt + rng.uniform(0, 2 * np.pi))
              + mains_amp * np.sin(2 * np.pi * 60.0 * tt)
              + rng.normal(0.0, noise_sd, n))

    counts0 = np.clip(np.round(signal * _ADC_GAIN + _ADC_ZERO), -2048, 2047).astype(np.int16)
    counts1 = np.clip(np.round(0.5 * signal * _ADC_GAIN + _ADC_ZERO), -2048, 2047).astype(np.int16)

    anns = [AnnotationEvent(2, 28, "+", False, aux="(N")]   # rhythm label
    for bt, kind in zip(times, kinds):
        code = _CLASS_CODE[kind]
        r = int(round(bt * _RATE))
        anns.append(AnnotationEvent(r, code, {1: "N", 8: "A", 5: "V", 6: "F", 12: "/"}[code],
                                    True))

    header = RecordHeader(
        record_id, 2, _RATE, n,
        (SignalSpec(f"{record_id}.dat", 212, _ADC_GAIN, _ADC_ZERO, 11, "MLII"),
         SignalSpec(f"{record_id}.dat", 212, _ADC_GAIN, _ADC_ZERO, 11, "V5")))
    return EcgRecord(header, (counts0, counts1), tuple(anns))


def make_database(data_dir, record_ids=ALL_RECORDS, duration_s: float = 60.0,
                  seed: int = 0) -> None:
    """Write a synthetic database into ``data_dir`` (hea/dat/atr per record)."""
    for rid in record_ids:
        rec = make_record(rid, duration_s, seed=seed * 100003 + int(rid))
        write_record(data_dir, rec)
