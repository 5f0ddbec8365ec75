"""Beat segmentation, fiducial detection, and the 31-feature vector.

All indices here are at the 115 Hz post-resample rate. The column registry
``FEATURE_NAMES`` is the single source of feature ordering for selection,
training, and persistence; every matrix carries it.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .mitdb import map_to_aami
from .preprocess import TARGET_RATE

# Beat window around the annotated R-peak: [-0.25 s, +0.45 s].
PRE_SAMPLES = int(round(0.25 * TARGET_RATE))    # 29
POST_SAMPLES = int(round(0.45 * TARGET_RATE))   # 52
WINDOW_LEN = PRE_SAMPLES + POST_SAMPLES + 1

# Fallback fiducial offsets when the slope scan finds nothing usable.
_FALLBACK_QRS_HALF = int(round(0.06 * TARGET_RATE))   # 60 ms
# T-wave search window relative to the QRS offset.
_T_SEARCH_LO = int(round(0.06 * TARGET_RATE))          # +60 ms
_T_SEARCH_HI = int(round(0.36 * TARGET_RATE))          # +360 ms
# P-wave search window relative to the QRS onset.
_P_SEARCH_LO = int(round(0.20 * TARGET_RATE))          # -200 ms
_P_SEARCH_HI = int(round(0.04 * TARGET_RATE))          # -40 ms
P_WAVE_THRESHOLD_MV = 0.06

FEATURE_NAMES = (
    "pre_rr", "post_rr", "avg_rr", "local_avg_rr",
    "qrs_dur", "qr_dur", "rs_dur", "t_dur",
    "qrs_morph_0", "qrs_morph_1", "qrs_morph_2", "qrs_morph_3",
    "t_morph_0", "t_morph_1", "t_morph_2", "t_morph_3", "t_morph_4",
    "t_morph_5", "t_morph_6", "t_morph_7", "t_morph_8",
    "p_wave_flag", "norm_pre_rr",
    "energy_qrs", "energy_qr", "energy_rs", "energy_t",
    "max_fft_qr", "max_fft_rs", "max_fft_qrs",
    "r_amplitude",
)

# Feature subsets found by the wrapper search (11 via LDA, 4 via the MLP).
SUBSET_11 = ("norm_pre_rr", "post_rr", "t_dur", "energy_t",
             "qrs_morph_0", "qrs_morph_1", "qrs_morph_2", "qrs_morph_3",
             "max_fft_rs", "qrs_dur", "r_amplitude")
SUBSET_4 = ("t_dur", "r_amplitude", "max_fft_qrs", "norm_pre_rr")

MORPH_COLUMNS = ("qrs_morph_0", "qrs_morph_1", "qrs_morph_2", "qrs_morph_3",
                 "t_morph_0", "t_morph_1", "t_morph_2", "t_morph_3", "t_morph_4",
                 "t_morph_5", "t_morph_6", "t_morph_7", "t_morph_8")


@dataclass(frozen=True)
class Heartbeat:
    record_id: str
    beat_index: int            # position among the record's beat annotations
    r_peak: int                # absolute sample index at 115 Hz
    window: np.ndarray         # WINDOW_LEN samples, mV, R at PRE_SAMPLES
    true_class: str
    sveb_subclass: str | None = None


@dataclass(frozen=True)
class FiducialPoints:
    """QRS/T boundaries, window-local (R sits at PRE_SAMPLES)."""

    q_onset: int
    s_offset: int
    t_onset: int
    t_offset: int
    p_detected: bool
    degenerate: bool = False   # fallback offsets were used


@dataclass
class FeatureMatrix:
    """Beats-by-features table plus labels and provenance.

    ``feature_names`` fixes the column order for every consumer.
    """

    feature_names: tuple[str, ...]
    X: np.ndarray
    labels: list[str]
    record_ids: list[str]
    beat_indices: list[int]
    sveb_subclasses: list[str] = field(default_factory=list)
    flags: list[tuple[str, ...]] = field(default_factory=list)

    def __post_init__(self):
        if not self.sveb_subclasses:
            self.sveb_subclasses = [""] * len(self.labels)
        if not self.flags:
            self.flags = [()] * len(self.labels)

    def __len__(self):
        return self.X.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]

    def select(self, names) -> np.ndarray:
        idx = [self.feature_names.index(n) for n in names]
        return self.X[:, idx]

    def effective_labels(self, scheme: str = "aami5") -> list[str]:
        """Labels under a class scheme: 'aami5' (N,S,V,F,Q) or 's1s2'
        (N,S1,S2,V with F and Q folded into N)."""
        if scheme == "aami5":
            return list(self.labels)
        if scheme == "s1s2":
            out = []
            for lab, sub in zip(self.labels, self.sveb_subclasses):
                if lab == "S":
                    out.append(sub or "S1")
                elif lab == "V":
                    out.append("V")
                else:
                    out.append("N")
            return out
        raise ValueError(f"unknown class scheme {scheme!r}")

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_text())

    def to_text(self) -> str:
        buf = io.StringIO()
        cols = ("record_id", "beat_index", "label", "sveb_subclass") + self.feature_names
        buf.write("\t".join(cols) + "\n")
        for i in range(len(self)):
            row = [self.record_ids[i], str(self.beat_indices[i]),
                   self.labels[i], self.sveb_subclasses[i] or "-"]
            row += [f"{v:.17g}" for v in self.X[i]]
            buf.write("\t".join(row) + "\n")
        return buf.getvalue()

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        with open(path, encoding="ascii") as fh:
            return cls.from_text(fh.read())

    @classmethod
    def from_text(cls, text: str) -> "FeatureMatrix":
        lines = text.splitlines()
        if not lines:
            raise DataError("empty feature file")
        header = lines[0].split("\t")
        if header[:4] != ["record_id", "beat_index", "label", "sveb_subclass"]:
            raise DataError("feature file missing provenance columns")
        names = tuple(header[4:])
        rids, bidx, labels, subs, rows = [], [], [], [], []
        for ln in lines[1:]:
            if not ln:
                continue
            parts = ln.split("\t")
            rids.append(parts[0])
            bidx.append(int(parts[1]))
            labels.append(parts[2])
            subs.append("" if parts[3] == "-" else parts[3])
            rows.append([float(v) for v in parts[4:]])
        X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
        return cls(names, X, labels, rids, bidx, subs)

    @classmethod
    def concatenate(cls, matrices) -> "FeatureMatrix":
        matrices = list(matrices)
        if not matrices:
            raise DataError("nothing to concatenate")
        names = matrices[0].feature_names
        for m in matrices[1:]:
            if m.feature_names != names:
                raise DataError("feature registries differ across matrices")
        return cls(
            names,
            np.vstack([m.X for m in matrices]),
            sum((m.labels for m in matrices), []),
            sum((m.record_ids for m in matrices), []),
            sum((m.beat_indices for m in matrices), []),
            sum((m.sveb_subclasses for m in matrices), []),
            sum((m.flags for m in matrices), []),
        )


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def segment_beats(signal: np.ndarray, annotations, record_id: str = "") -> list[Heartbeat]:
    """Cut one window per annotated beat; drop edge beats.

    The first and last beats lack a neighbor RR interval and are dropped,
    as is any beat whose window would leave the record.
    """
    signal = np.asarray(signal, dtype=np.float64)
    beats = [a for a in annotations if a.is_beat]
    if len(beats) < 3:
        raise DataError(f"record {record_id or '?'}: need >= 3 beats, got {len(beats)}")
    out = []
    for i in range(1, len(beats) - 1):
        r = beats[i].sample_index
        lo, hi = r - PRE_SAMPLES, r + POST_SAMPLES + 1
        if lo < 0 or hi > signal.size:
            continue
        out.append(Heartbeat(record_id, i, r, signal[lo:hi].copy(),
                             map_to_aami(beats[i].mit_code)))
    return out


# ---------------------------------------------------------------------------
# Fiducial detection
# ---------------------------------------------------------------------------

def detect_fiducials(beat: Heartbeat) -> FiducialPoints:
    """Locate QRS and T-wave boundaries inside a beat window.

    QRS bounds come from a slope-threshold scan outward from R: the
    threshold is 5% of the largest absolute first difference within
    +/-100 ms of R and the slope must stay below it for 3 consecutive
    samples. The T wave is searched in [QRS offset + 60 ms, + 360 ms]
    and bounded at the 10%-of-peak amplitude crossings. Degenerate
    windows fall back to fixed offsets and are flagged, never rejected.
    """
    w = np.asarray(beat.window, dtype=np.float64)
    r = PRE_SAMPLES
    n = w.size
    d = np.diff(w)
    span = int(round(0.1 * TARGET_RATE))
    local = np.abs(d[max(r - span, 0):min(r + span, d.size)])
    thr = 0.05 * local.max() if local.size else 0.0

    degenerate = False
    q_onset = _scan_left(d, r, thr)
    if q_onset is None or q_onset >= r:
        q_onset = r - _FALLBACK_QRS_HALF
        degenerate = True
    s_offset = _scan_right(d, r, thr)
    if s_offset is None or s_offset <= r:
        s_offset = r + _FALLBACK_QRS_HALF
        degenerate = True
    q_onset = max(q_onset, 0)
    s_offset = min(s_offset, n - 3)

    t_lo = s_offset + _T_SEARCH_LO
    t_hi = min(s_offset + _T_SEARCH_HI, n - 1)
    if t_lo >= t_hi:
        t_lo = min(s_offset + 1, n - 2)
        t_hi = n - 1
        degenerate = True
    seg = np.abs(w[t_lo:t_hi + 1])
    ipk = t_lo + int(np.argmax(seg))
    t_thr = 0.1 * np.abs(w[ipk])
    t_onset = t_lo
    for i in range(ipk, t_lo - 1, -1):
        if np.abs(w[i]) < t_thr:
            t_onset = i + 1
            break
    t_offset = t_hi
    for i in range(ipk, t_hi + 1):
        if np.abs(w[i]) < t_thr:
            t_offset = i - 1
            break
    if t_offset <= t_onset:
        t_offset = min(t_onset + 1, n - 1)
        t_onset = t_offset - 1
        degenerate = True

    fid = FiducialPoints(q_onset, s_offset, t_onset, t_offset, False, degenerate)
    p = bool(p_wave_flag(beat, fid)[0])
    return FiducialPoints(q_onset, s_offset, t_onset, t_offset, p, degenerate)


def _scan_left(d, r, thr):
    if thr <= 0:
        return None
    for i in range(r - 1, 1, -1):
        if abs(d[i]) < thr and abs(d[i - 1]) < thr and abs(d[i - 2]) < thr:
            return i + 1
    return None


def _scan_right(d, r, thr):
    if thr <= 0:
        return None
    for i in range(r, d.size - 2):
        if abs(d[i]) < thr and abs(d[i + 1]) < thr and abs(d[i + 2]) < thr:
            return i
    return None


# ---------------------------------------------------------------------------
# Individual feature operations
# ---------------------------------------------------------------------------

def rr_features(r_peaks, i: int, rate: float = TARGET_RATE):
    """(pre_rr, post_rr, avg_rr, local_avg_rr) in seconds for beat ``i``.

    ``avg_rr`` is the record-wide mean RR; ``local_avg_rr`` averages the
    up-to-10 RR intervals ending at beat ``i``.
    """
    r = np.asarray(r_peaks, dtype=np.float64)
    if not 0 < i < r.size - 1:
        raise DataError(f"beat {i} has no neighbor on both sides")
    rr = np.diff(r) / rate
    pre = rr[i - 1]
    post = rr[i]
    local = rr[max(0, i - 10):i]
    return pre, post, float(rr.mean()), float(local.mean())


def normalized_pre_rr(pre_rr, labels, i: int, labels_available: bool) -> float:
    """Pre-RR of beat ``i`` over the typical normal pre-RR nearby.

    Training mode divides by the mean pre-RR of beats labeled N within a
    30-beat neighborhood. Testing mode has no labels, so normal beats are
    proxied by beats whose pre-RR lies within 20% of the neighborhood
    median; an empty proxy set falls back to the median itself.
    """
    pre_rr = np.asarray(pre_rr, dtype=np.float64)
    n = pre_rr.size
    lo, hi = max(0, i - 15), min(n, i + 15)
    idx = np.arange(lo, hi)
    idx = idx[np.isfinite(pre_rr[idx])]
    if idx.size == 0:
        return 1.0
    vals = pre_rr[idx]
    denom = None
    if labels_available and labels is not None:
        normals = vals[[labels[j] == "N" for j in idx]]
        if normals.size:
            denom = normals.mean()
    if denom is None:
        med = float(np.median(vals))
        proxy = vals[np.abs(vals - med) <= 0.2 * med]
        denom = proxy.mean() if proxy.size else med
    return float(pre_rr[i] / denom)


def morphology_samples(beat: Heartbeat, fid: FiducialPoints):
    """QRS samples at R+/-1, R+/-2 and 9 evenly spaced T-wave samples.

    T samples come from linear interpolation across [t_onset, t_offset].
    Out-of-window QRS samples are imputed as 0 and flagged.
    """
    w = beat.window
    r = PRE_SAMPLES
    flags = []
    qrs = np.zeros(4)
    for k, off in enumerate((-2, -1, 1, 2)):
        j = r + off
        if 0 <= j < w.size:
            qrs[k] = w[j]
        else:
            flags.append("qrs_morph_imputed")
    pos = np.linspace(fid.t_onset, fid.t_offset, 9)
    t = np.interp(pos, np.arange(w.size), w)
    return qrs, t, tuple(flags)


def energy(segment) -> float:
    """Sum of squared amplitudes over a sample slice."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.size == 0:
        raise ValueError("energy of an empty segment is undefined")
    return float(np.sum(segment * segment))


def max_fourier_coeff(segment) -> float:
    """Largest non-DC DFT magnitude, zero-padded to the next power of two."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.size < 2:
        raise ValueError("Fourier feature needs at least 2 samples")
    nfft = 1 << (segment.size - 1).bit_length()
    spectrum = np.fft.rfft(segment, n=nfft)
    return float(np.abs(spectrum[1:]).max())


def p_wave_flag(beat: Heartbeat, fid: FiducialPoints):
    """1 if a P-wave bump rises above the pre-QRS baseline, else 0.

    The search window is [q_onset - 200 ms, q_onset - 40 ms], clamped to
    the beat window; the bump must exceed the window's own median by
    ``P_WAVE_THRESHOLD_MV``. Returns ``(flag, imputed)``.
    """
    lo = max(0, fid.q_onset - _P_SEARCH_LO)
    hi = fid.q_onset - _P_SEARCH_HI
    if hi <= lo:
        return 0, True
    seg = beat.window[lo:hi + 1]
    bump = float(seg.max() - np.median(seg))
    return (1 if bump >= P_WAVE_THRESHOLD_MV else 0), False


# ---------------------------------------------------------------------------
# Whole-record extraction
# ---------------------------------------------------------------------------

def extract_features(signal, annotations, record_id: str = "",
                     labels_available: bool = True,
                     rate: float = TARGET_RATE) -> FeatureMatrix:
    """Build the 31-column feature matrix for one preprocessed record.

    Segment boundary convention: QR = [q_onset, r], RS = [r, s_offset],
    QRS = [q_onset, s_offset], so R belongs to both half-segments and is
    counted once in the full complex. Beats with imputed samples or
    fallback fiducials are flagged, never dropped silently.
    """
    beats = segment_beats(signal, annotations, record_id)
    beat_anns = [a for a in annotations if a.is_beat]
    r_peaks = np.asarray([a.sample_index for a in beat_anns], dtype=np.int64)
    labels_all = [map_to_aami(a.mit_code) for a in beat_anns]

    pre_all = np.full(len(beat_anns), np.nan)
    pre_all[1:] = np.diff(r_peaks) / rate

    rows = np.zeros((len(beats), len(FEATURE_NAMES)))
    labels, rids, bidx, flag_list = [], [], [], []
    col = {name: k for k, name in enumerate(FEATURE_NAMES)}

    for n, beat in enumerate(beats):
        i = beat.beat_index
        flags = []
        fid = detect_fiducials(beat)
        if fid.degenerate:
            flags.append("fiducial_fallback")

        pre, post, avg, local = rr_features(r_peaks, i, rate)
        norm = normalized_pre_rr(pre_all, labels_all, i, labels_available)

        w = beat.window
        r = PRE_SAMPLES
        qrs_m, t_m, m_flags = morphology_samples(beat, fid)
        flags.extend(m_flags)
        pflag, p_imputed = p_wave_flag(beat, fid)
        if p_imputed:
            flags.append("p_window_clamped")

        row = rows[n]
        row[col["pre_rr"]], row[col["post_rr"]] = pre, post
        row[col["avg_rr"]], row[col["local_avg_rr"]] = avg, local
        row[col["qrs_dur"]] = (fid.s_offset - fid.q_onset) / rate
        row[col["qr_dur"]] = (r - fid.q_onset) / rate
        row[col["rs_dur"]] = (fid.s_offset - r) / rate
        row[col["t_dur"]] = (fid.t_offset - fid.t_onset) / rate
        for k in range(4):
            row[col[f"qrs_morph_{k}"]] = qrs_m[k]
        for k in range(9):
            row[col[f"t_morph_{k}"]] = t_m[k]
        row[col["p_wave_flag"]] = pflag
        row[col["norm_pre_rr"]] = norm
        row[col["energy_qrs"]] = energy(w[fid.q_onset:fid.s_offset + 1])
        row[col["energy_qr"]] = energy(w[fid.q_onset:r + 1])
        row[col["energy_rs"]] = energy(w[r:fid.s_offset + 1])
        row[col["energy_t"]] = energy(w[fid.t_onset:fid.t_offset + 1])
        row[col["max_fft_qr"]] = max_fourier_coeff(w[fid.q_onset:r + 1])
        row[col["max_fft_rs"]] = max_fourier_coeff(w[r:fid.s_offset + 1])
        row[col["max_fft_qrs"]] = max_fourier_coeff(w[fid.q_onset:fid.s_offset + 1])
        row[col["r_amplitude"]] = w[r]

        labels.append(beat.true_class)
        rids.append(record_id)
        bidx.append(i)
        flag_list.append(tuple(flags))

    return FeatureMatrix(FEATURE_NAMES, rows, labels, rids, bidx,
                         [""] * len(beats), flag_list)


def standardize(train: np.ndarray, apply: np.ndarray | None = None):
    """Z-score by the training columns' mean and population sd.

    Constant columns pass through unscaled (sd treated as 1). Returns
    ``(train_std, apply_std, mean, sd)``; ``apply_std`` is None when no
    second matrix is given.
    """
    train = np.asarray(train, dtype=np.float64)
    mean = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    out_train = (train - mean) / sd
    out_apply = None if apply is None else (np.asarray(apply, dtype=np.float64) - mean) / sd
    return out_train, out_apply, mean, sd


# ---------------------------------------------------------------------------
# SVEB sub-typing
# ---------------------------------------------------------------------------

def split_sveb_classes(morph: np.ndarray, seed: int = 0, restarts: int = 20):
    """Assign SVEB beats to the two morphology patterns S1/S2.

    Plain 2-means on the concatenated QRS+T morphology samples with
    ``restarts`` seeded restarts; the best inertia wins and the larger
    cluster is named S1. Degenerate inputs collapse to a single S1 cluster.
    """
    morph = np.asarray(morph, dtype=np.float64)
    n = morph.shape[0]
    if n < 2 or np.allclose(morph, morph[0]):
        return np.array(["S1"] * n)

    rng = np.random.default_rng(seed)
    best_inertia, best_assign = np.inf, None
    for _ in range(restarts):
        centers = morph[rng.choice(n, 2, replace=False)]
        if np.allclose(centers[0], centers[1]):
            continue
        assign = None
        for _ in range(100):
            dist = ((morph[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_assign = dist.argmin(axis=1)
            if assign is not None and np.array_equal(new_assign, assign):
                break
            assign = new_assign
            for c in (0, 1):
                pts = morph[assign == c]
                if pts.size:
                    centers[c] = pts.mean(axis=0)
        if assign is None or len(np.unique(assign)) < 2:
            continue
        inertia = float(((morph - centers[assign]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia, best_assign = inertia, assign.copy()

    if best_assign is None:
        return np.array(["S1"] * n)
    larger = 0 if (best_assign == 0).sum() >= (best_assign == 1).sum() else 1
    return np.where(best_assign == larger, "S1", "S2")


def assign_sveb_subclasses(matrix: FeatureMatrix, seed: int = 0) -> FeatureMatrix:
    """Fill the sveb_subclass column for S-labeled beats (in place)."""
    s_idx = [i for i, lab in enumerate(matrix.labels) if lab == "S"]
    if not s_idx:
        return matrix
    morph = matrix.select(MORPH_COLUMNS)[s_idx]
    assigned = split_sveb_classes(morph, seed=seed)
    for i, sub in zip(s_idx, assigned):
        matrix.sveb_subclasses[i] = str(sub)
    return matrix
