"""Signal conditioning: baseline removal, notch filtering, resampling.

The chain runs at the native 360 Hz and only then drops to 115 Hz:
the 60 Hz mains component sits above the 57.5 Hz post-resample Nyquist,
so the notch must come first. Every step is deterministic and pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

from .errors import DataError
from .mitdb import AnnotationEvent, EcgRecord

TARGET_RATE = 115.0

# 360 Hz * 23 / 72 = 115 Hz exactly; the exact ratio keeps index math clean.
RESAMPLE_UP = 23
RESAMPLE_DOWN = 72

# Kaiser beta for a 60 dB stopband (scipy.signal.kaiser_beta(60)).
_KAISER_BETA_60DB = 5.65326


@dataclass(frozen=True)
class FilterSpec:
    median_window_1_ms: float = 200.0
    median_window_2_ms: float = 600.0
    notch_center_hz: float = 60.0
    notch_quality: float = 30.0


@dataclass(frozen=True)
class ResampleSpec:
    up: int = RESAMPLE_UP
    down: int = RESAMPLE_DOWN
    source_rate: float = 360.0
    target_rate: float = TARGET_RATE
    # scipy's polyphase design places the low-pass cutoff at
    # (up * source_rate / 2) / max(up, down) = 57.5 Hz for 23/72 at 360 Hz.
    anti_alias_cutoff_hz: float = 57.5


def _odd_window_samples(window_ms: float, rate: float) -> int:
    w = int(round(window_ms * rate / 1000.0))
    w = max(w, 1)
    return w if w % 2 else w + 1


def median_filter(x: np.ndarray, window_ms: float, rate: float) -> np.ndarray:
    """Centered running median with reflection (symmetric) edge padding."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("median_filter: empty signal")
    if window_ms < 1.0:
        raise ValueError("median window must be >= 1 ms")
    w = _odd_window_samples(window_ms, rate)
    return ndimage.median_filter(x, size=w, mode="reflect")


def remove_baseline(x: np.ndarray, rate: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Subtract the baseline-wander estimate from the signal.

    The estimate is a median cascade: the short window flattens QRS
    complexes, the long window flattens P and T waves, leaving only the
    slow drift, which is then subtracted.
    """
    baseline = median_filter(x, spec.median_window_1_ms, rate)
    baseline = median_filter(baseline, spec.median_window_2_ms, rate)
    return np.asarray(x, dtype=np.float64) - baseline


def notch_60hz(x: np.ndarray, rate: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Second-order IIR notch at the mains frequency (single pass)."""
    if rate <= 2 * spec.notch_center_hz:
        raise DataError(
            f"notch at {spec.notch_center_hz} Hz needs rate > "
            f"{2 * spec.notch_center_hz} Hz, got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("notch_60hz: empty signal")
    b, a = signal.iirnotch(spec.notch_center_hz, spec.notch_quality, fs=rate)
    return signal.lfilter(b, a, x)


def notch_response_db(freqs_hz, rate: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Analytic magnitude response of the notch design, in dB."""
    b, a = signal.iirnotch(spec.notch_center_hz, spec.notch_quality, fs=rate)
    _, h = signal.freqz(b, a, worN=np.atleast_1d(np.asarray(freqs_hz, dtype=float)), fs=rate)
    return 20.0 * np.log10(np.maximum(np.abs(h), 1e-300))


def resample_to_115(x: np.ndarray, spec: ResampleSpec = ResampleSpec()) -> np.ndarray:
    """Polyphase 23/72 resampling with a Kaiser anti-alias FIR.

    Output length is ceil(n * 23 / 72). The FIR is linear phase and scipy
    compensates its group delay, so sample k of the output corresponds to
    sample k * 72 / 23 of the input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("resample_to_115: empty signal")
    return signal.resample_poly(x, spec.up, spec.down,
                                window=("kaiser", _KAISER_BETA_60DB),
                                padtype="mean")


def remap_annotations(annotations, up: int = RESAMPLE_UP, down: int = RESAMPLE_DOWN,
                      resampled: np.ndarray | None = None,
                      n_samples_out: int | None = None):
    """Rescale annotation indices to the resampled rate.

    Indices map by round(i * up / down), half away from zero; collisions
    are resolved by shifting the later event forward one sample so order
    stays strict. When the resampled signal is supplied, each beat index
    is refined to the absolute-maximum amplitude within +/-5 samples.
    """
    if n_samples_out is None and resampled is not None:
        n_samples_out = resampled.size
    out = []
    prev = -1
    for ev in annotations:
        idx = int(np.floor(ev.sample_index * up / down + 0.5))
        if idx <= prev:
            idx = prev + 1
        if ev.is_beat and resampled is not None:
            lo = max(idx - 5, prev + 1, 0)
            hi = min(idx + 6, resampled.size)
            if lo < hi:
                idx = lo + int(np.argmax(np.abs(resampled[lo:hi])))
        if n_samples_out is not None and idx >= n_samples_out:
            raise DataError(
                f"remapped annotation index {idx} outside resampled signal "
                f"of length {n_samples_out}")
        out.append(AnnotationEvent(idx, ev.mit_code, ev.symbol, ev.is_beat, ev.aux))
        prev = idx
    return tuple(out)


def preprocess_record(record: EcgRecord, channel: int = 0,
                      filter_spec: FilterSpec = FilterSpec(),
                      resample_spec: ResampleSpec = ResampleSpec()):
    """Full chain for one record's channel: baseline -> notch -> resample.

    Returns ``(signal_mv, annotations)`` at the target rate. Only channel 0
    (the modified limb lead) is consumed downstream; channel 1 stays parsed
    but untouched.
    """
    rate = record.header.sampling_rate
    x = record.millivolts(channel)
    x = remove_baseline(x, rate, filter_spec)
    x = notch_60hz(x, rate, filter_spec)
    y = resample_to_115(x, resample_spec)
    anns = remap_annotations(record.annotations, resample_spec.up,
                             resample_spec.down, resampled=y)
    return y, anns
