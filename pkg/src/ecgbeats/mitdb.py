"""Readers and writers for MIT-BIH arrhythmia database files.

Three file kinds make up one record:

* ``<id>.hea`` -- plain-text header: record line, then one line per signal.
* ``<id>.dat`` -- format-212 binary: two 12-bit two's-complement samples
  packed into every 3 bytes, channels interleaved frame by frame.
* ``<id>.atr`` -- reference annotations: 16-bit little-endian words holding
  a 6-bit type code and a 10-bit sample delta.

Writers (``encode_format212``, ``encode_annotations``, ``write_record``)
invert the readers exactly and serve as round-trip oracles in the tests.
All parsing is pure and per-record; parsed records are never mutated.
"""

from __future__ import annotations

import os
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError

# ---------------------------------------------------------------------------
# Annotation code table (WFDB ecgcodes): code -> (symbol, description, is_beat)
# ---------------------------------------------------------------------------

ANNOTATION_CODES = {
    1: ("N", "Normal beat", True),
    2: ("L", "Left bundle branch block beat", True),
    3: ("R", "Right bundle branch block beat", True),
    4: ("a", "Aberrated atrial premature beat", True),
    5: ("V", "Premature ventricular contraction", True),
    6: ("F", "Fusion of ventricular and normal beat", True),
    7: ("J", "Nodal (junctional) premature beat", True),
    8: ("A", "Atrial premature beat", True),
    9: ("S", "Supraventricular premature beat", True),
    10: ("E", "Ventricular escape beat", True),
    11: ("j", "Nodal (junctional) escape beat", True),
    12: ("/", "Paced beat", True),
    13: ("Q", "Unclassifiable beat", True),
    14: ("~", "Signal quality change", False),
    16: ("|", "Isolated QRS-like artifact", False),
    18: ("s", "ST change", False),
    19: ("T", "T-wave change", False),
    20: ("*", "Systole", False),
    21: ("D", "Diastole", False),
    22: ('"', "Comment annotation", False),
    23: ("=", "Measurement annotation", False),
    24: ("p", "P-wave peak", False),
    25: ("B", "Bundle branch block beat (unspecified)", True),
    26: ("^", "Non-conducted pacer spike", False),
    27: ("t", "T-wave peak", False),
    28: ("+", "Rhythm change", False),
    29: ("u", "U-wave peak", False),
    30: ("?", "Learning", False),
    31: ("!", "Ventricular flutter wave", False),
    32: ("[", "Start of ventricular flutter/fibrillation", False),
    33: ("]", "End of ventricular flutter/fibrillation", False),
    34: ("e", "Atrial escape beat", True),
    35: ("n", "Supraventricular escape beat", True),
    36: ("@", "Link to external data", False),
    37: ("x", "Non-conducted P-wave", False),
    38: ("f", "Fusion of paced and normal beat", True),
    39: ("(", "Waveform onset", False),
    40: (")", "Waveform end", False),
    41: ("r", "R-on-T premature ventricular contraction", True),
}

# Reserved codes with structural meaning inside the annotation stream.
_SKIP, _NUM, _SUB, _CHAN, _AUX = 59, 60, 61, 62, 63

# ---------------------------------------------------------------------------
# AAMI five-class grouping of the MIT beat codes
# ---------------------------------------------------------------------------

AAMI_CLASSES = ("N", "S", "V", "F", "Q")

# Beat codes per AAMI class. Beat codes outside this table (B, n, r) never
# occur in the 48 arrhythmia records and are rejected rather than guessed.
AAMI_MAP = {
    1: "N", 2: "N", 3: "N", 34: "N", 11: "N",   # normal + BBB + escape
    8: "S", 4: "S", 7: "S", 9: "S",             # supraventricular ectopic
    5: "V", 10: "V",                            # ventricular ectopic
    6: "F",                                     # fusion of V and N
    12: "Q", 38: "Q", 13: "Q",                  # paced / unclassifiable
}

# ---------------------------------------------------------------------------
# Training/testing record splits (paced records carry only class-Q beats
# and are excluded from both)
# ---------------------------------------------------------------------------

DS1_RECORDS = ("101", "106", "108", "109", "112", "114", "115", "116",
               "118", "119", "122", "124", "201", "203", "205", "207",
               "208", "209", "215", "220", "223", "230")

DS2_RECORDS = ("100", "103", "105", "111", "113", "117", "121", "123",
               "200", "202", "210", "212", "213", "214", "219", "221",
               "222", "228", "231", "232", "233", "234")

PACED_RECORDS = ("102", "104", "107", "217")

ALL_RECORDS = tuple(sorted(DS1_RECORDS + DS2_RECORDS + PACED_RECORDS))

PHYSIONET_URL = "https://physionet.org/files/mitdb/1.0.0/"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignalSpec:
    """Per-signal fields of a header record line."""

    filename: str
    format_code: int
    adc_gain: float          # ADC counts per millivolt
    adc_zero: int            # ADC count corresponding to 0 mV
    adc_resolution: int      # bits
    lead_name: str


@dataclass(frozen=True)
class RecordHeader:
    record_id: str
    n_signals: int
    sampling_rate: float     # Hz
    n_samples: int           # per signal
    signals: tuple[SignalSpec, ...]


@dataclass(frozen=True)
class AnnotationEvent:
    sample_index: int        # absolute, at the header's native rate
    mit_code: int
    symbol: str
    is_beat: bool
    aux: str | None = None


@dataclass(frozen=True)
class DatasetSplit:
    ds1: tuple[str, ...]
    ds2: tuple[str, ...]
    excluded_paced: tuple[str, ...]


@dataclass(frozen=True)
class EcgRecord:
    """One parsed recording: header, integer samples, beat annotations."""

    header: RecordHeader
    channels: tuple[np.ndarray, ...]           # int16 arrays, ADC counts
    annotations: tuple[AnnotationEvent, ...]

    def millivolts(self, channel: int = 0) -> np.ndarray:
        spec = self.header.signals[channel]
        return (self.channels[channel].astype(np.float64) - spec.adc_zero) / spec.adc_gain

    def beat_annotations(self) -> tuple[AnnotationEvent, ...]:
        return tuple(a for a in self.annotations if a.is_beat)


# ---------------------------------------------------------------------------
# Header parsing
# ---------------------------------------------------------------------------

def parse_header(text: str) -> RecordHeader:
    """Parse the contents of a ``.hea`` file.

    Only the fields needed downstream are kept; optional trailing fields
    (init value, checksum, block size) are tolerated and ignored.
    """
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(n, ln) for n, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ParseError("empty header")

    lineno, record_line = lines[0]
    fields = record_line.split()
    if len(fields) < 3:
        raise ParseError("record line needs 'name n_sig fs [n_samples]'", line=lineno)
    record_id = fields[0].split("/")[0]
    try:
        n_signals = int(fields[1])
        sampling_rate = float(fields[2].split("/")[0])
        n_samples = int(fields[3]) if len(fields) > 3 else 0
    except ValueError as exc:
        raise ParseError(f"bad record line field: {exc}", line=lineno) from None
    if n_signals < 1:
        raise ParseError("n_signals must be >= 1", line=lineno)
    if sampling_rate <= 0:
        raise ParseError("sampling rate must be > 0", line=lineno)
    if n_samples < 0:
        raise ParseError("n_samples must be >= 0", line=lineno)

    if len(lines) < 1 + n_signals:
        raise ParseError(f"expected {n_signals} signal lines, found {len(lines) - 1}",
                         line=lines[-1][0])

    signals = []
    for lineno, ln in lines[1:1 + n_signals]:
        signals.append(_parse_signal_line(ln, lineno))
    return RecordHeader(record_id, n_signals, sampling_rate, n_samples, tuple(signals))


def _parse_signal_line(line: str, lineno: int) -> SignalSpec:
    fields = line.split()
    if len(fields) < 2:
        raise ParseError("signal line needs at least 'filename format'", line=lineno)
    filename = fields[0]
    # Format may carry xN (samples/frame), :skew, +offset decorations.
    fmt = fields[1]
    for sep in ("x", ":", "+"):
        fmt = fmt.split(sep)[0]
    try:
        format_code = int(fmt)
    except ValueError:
        raise ParseError(f"bad signal format {fields[1]!r}", line=lineno) from None

    gain, baseline, adc_res, adc_zero = 0.0, None, 12, 0
    try:
        if len(fields) > 2:
            g = fields[2].split("/")[0]          # strip '/units'
            if "(" in g:                          # gain(baseline)
                g, b = g.rstrip(")").split("(")
                baseline = int(b)
            gain = float(g)
        if len(fields) > 3:
            adc_res = int(fields[3])
        if len(fields) > 4:
            adc_zero = int(fields[4])
    except ValueError as exc:
        raise ParseError(f"bad signal line field: {exc}", line=lineno) from None

    if gain == 0.0:
        gain = 200.0                              # WFDB default for gain 0/absent
    if gain < 0:
        raise ParseError("adc gain must be > 0", line=lineno)
    lead_name = fields[8] if len(fields) > 8 else ""
    zero = baseline if baseline is not None else adc_zero
    return SignalSpec(filename, format_code, gain, zero, adc_res, lead_name)


# ---------------------------------------------------------------------------
# Format-212 signal codec
# ---------------------------------------------------------------------------

def decode_format212(data: bytes, n_samples: int, n_signals: int) -> tuple[np.ndarray, ...]:
    """Unpack format-212 bytes into ``n_signals`` int16 arrays.

    Layout per 3-byte group: s0 = b0 | ((b1 & 0x0F) << 8) and
    s1 = b2 | ((b1 & 0xF0) << 4), each sign-extended from bit 11.
    Samples alternate across channels frame by frame.
    """
    if n_samples < 0 or n_signals < 1:
        raise ValueError("n_samples must be >= 0 and n_signals >= 1")
    total = n_samples * n_signals
    needed = (3 * total + 1) // 2
    if len(data) < needed:
        raise ParseError(
            f"format-212 file truncated: {len(data)} bytes, "
            f"need {needed} for {total} samples", offset=len(data))

    groups = (total + 1) // 2
    buf = np.frombuffer(data, dtype=np.uint8, count=min(len(data), 3 * groups))
    if buf.size < 3 * groups:                    # odd total: final group short
        buf = np.concatenate([buf, np.zeros(3 * groups - buf.size, dtype=np.uint8)])
    b = buf.reshape(-1, 3).astype(np.int16)
    s0 = b[:, 0] | ((b[:, 1] & 0x0F) << 8)
    s1 = b[:, 2] | ((b[:, 1] & 0xF0) << 4)

    flat = np.empty(2 * groups, dtype=np.int16)
    flat[0::2] = s0
    flat[1::2] = s1
    flat = flat[:total]
    flat[flat > 2047] -= 4096                    # two's complement, 12 bits

    return tuple(np.ascontiguousarray(flat[c::n_signals]) for c in range(n_signals))


def encode_format212(channels) -> bytes:
    """Pack per-channel sample arrays into format-212 bytes (decode inverse)."""
    channels = [np.asarray(c, dtype=np.int64) for c in channels]
    if not channels:
        raise ValueError("need at least one channel")
    n = channels[0].size
    if any(c.size != n for c in channels):
        raise ValueError("channels must have equal lengths")
    flat = np.empty(n * len(channels), dtype=np.int64)
    for i, c in enumerate(channels):
        if c.size and (c.min() < -2048 or c.max() > 2047):
            raise ValueError("format-212 samples must lie in [-2048, 2047]")
        flat[i::len(channels)] = c

    if flat.size % 2:
        flat = np.concatenate([flat, [0]])
    u = (flat & 0xFFF).reshape(-1, 2)
    out = np.empty((u.shape[0], 3), dtype=np.uint8)
    out[:, 0] = u[:, 0] & 0xFF
    out[:, 1] = ((u[:, 0] >> 8) & 0x0F) | (((u[:, 1] >> 8) & 0x0F) << 4)
    out[:, 2] = u[:, 1] & 0xFF
    return out.tobytes()


# ---------------------------------------------------------------------------
# Annotation codec
# ---------------------------------------------------------------------------

def parse_annotations(data: bytes) -> tuple[AnnotationEvent, ...]:
    """Parse a ``.atr`` byte stream into annotation events.

    Words are 16-bit little-endian: code in the top 6 bits, sample delta in
    the low 10. SKIP (59) is followed by a signed 32-bit jump stored as two
    further words, high half first; AUX (63) carries a length byte and that
    many payload bytes padded to even length; NUM/SUB/CHAN modifier words
    are consumed and ignored. A zero word terminates the stream.
    """
    events: list[AnnotationEvent] = []
    t = 0
    pos = 0
    n = len(data)
    terminated = False
    while pos + 2 <= n:
        word = data[pos] | (data[pos + 1] << 8)
        pos += 2
        if word == 0:
            terminated = True
            break
        code = word >> 10
        delta = word & 0x3FF

        if code == _SKIP:
            if pos + 4 > n:
                raise ParseError("stream ends mid-SKIP extension", offset=pos)
            jump = ((data[pos] << 16) | (data[pos + 1] << 24)
                    | data[pos + 2] | (data[pos + 3] << 8))
            if jump >= 1 << 31:
                jump -= 1 << 32
            t += jump
            pos += 4
            continue
        if code == _AUX:
            length = word & 0xFF
            padded = length + (length & 1)
            if pos + padded > n:
                raise ParseError("stream ends mid-AUX payload", offset=pos)
            payload = data[pos:pos + length].decode("latin-1").rstrip("\x00")
            pos += padded
            if events:
                events[-1] = AnnotationEvent(
                    events[-1].sample_index, events[-1].mit_code,
                    events[-1].symbol, events[-1].is_beat, aux=payload)
            continue
        if code in (_NUM, _SUB, _CHAN):
            continue
        if code not in ANNOTATION_CODES:
            raise ParseError(f"unknown annotation code {code}", offset=pos - 2)

        t += delta
        symbol, _, is_beat = ANNOTATION_CODES[code]
        if events:
            last = events[-1].sample_index
            if t < last or (t == last and is_beat and events[-1].is_beat):
                raise ParseError(
                    f"annotation times not increasing: {t} after {last}",
                    offset=pos - 2)
        events.append(AnnotationEvent(t, code, symbol, is_beat))

    if not terminated:
        raise ParseError("annotation stream missing zero terminator", offset=pos)
    return tuple(events)


def encode_annotations(events) -> bytes:
    """Serialize annotation events (parse inverse, used as the test oracle)."""
    out = bytearray()
    t = 0
    for ev in events:
        if ev.mit_code not in ANNOTATION_CODES:
            raise ValueError(f"unknown annotation code {ev.mit_code}")
        gap = ev.sample_index - t
        if gap < 0:
            raise ValueError("annotation times must be non-decreasing")
        if gap > 0x3FF:
            out += (_SKIP << 10).to_bytes(2, "little")
            out += ((gap >> 16) & 0xFFFF).to_bytes(2, "little")
            out += (gap & 0xFFFF).to_bytes(2, "little")
            gap = 0
        out += ((ev.mit_code << 10) | gap).to_bytes(2, "little")
        t = ev.sample_index
        if ev.aux:
            payload = ev.aux.encode("latin-1")
            if len(payload) > 0xFF:
                raise ValueError("aux payload longer than 255 bytes")
            out += ((_AUX << 10) | len(payload)).to_bytes(2, "little")
            out += payload
            if len(payload) & 1:
                out += b"\x00"
    out += b"\x00\x00"
    return bytes(out)


# ---------------------------------------------------------------------------
# AAMI mapping and dataset splits
# ---------------------------------------------------------------------------

def map_to_aami(mit_code: int) -> str | None:
    """Map a MIT beat code to its AAMI class; None for non-beat codes."""
    if mit_code in AAMI_MAP:
        return AAMI_MAP[mit_code]
    info = ANNOTATION_CODES.get(mit_code)
    if info is None or info[2]:
        raise DataError(f"beat code {mit_code} has no AAMI class")
    return None


def split_dataset(record_ids) -> DatasetSplit:
    """Partition record ids into the fixed DS1/DS2/paced-excluded lists."""
    ids = [str(r) for r in record_ids]
    for r in ids:
        if r not in DS1_RECORDS and r not in DS2_RECORDS and r not in PACED_RECORDS:
            raise DataError(f"record {r} is not part of the 48-record database")
    present = set(ids)
    return DatasetSplit(
        ds1=tuple(r for r in DS1_RECORDS if r in present),
        ds2=tuple(r for r in DS2_RECORDS if r in present),
        excluded_paced=tuple(r for r in PACED_RECORDS if r in present),
    )


# ---------------------------------------------------------------------------
# Whole-record I/O
# ---------------------------------------------------------------------------

def read_record(data_dir, record_id: str) -> EcgRecord:
    """Read ``<record_id>.hea/.dat/.atr`` from a local directory."""
    base = os.path.join(str(data_dir), str(record_id))
    if not os.path.exists(base + ".hea"):
        raise DataError(f"missing header file {base}.hea")
    with open(base + ".hea", encoding="ascii", errors="replace") as fh:
        header = parse_header(fh.read())

    filenames = {s.filename for s in header.signals}
    if len(filenames) != 1:
        raise DataError(f"record {record_id}: multi-file signals are unsupported")
    formats = {s.format_code for s in header.signals}
    if formats != {212}:
        raise DataError(f"record {record_id}: only format 212 is supported, got {formats}")

    sig_path = os.path.join(str(data_dir), header.signals[0].filename)
    if not os.path.exists(sig_path):
        raise DataError(f"missing signal file {sig_path}")
    with open(sig_path, "rb") as fh:
        channels = decode_format212(fh.read(), header.n_samples, header.n_signals)

    ann_path = base + ".atr"
    if not os.path.exists(ann_path):
        raise DataError(f"missing annotation file {ann_path}")
    with open(ann_path, "rb") as fh:
        annotations = parse_annotations(fh.read())
    for ev in annotations:
        if not 0 <= ev.sample_index < header.n_samples:
            raise DataError(
                f"record {record_id}: annotation at sample {ev.sample_index} "
                f"outside [0, {header.n_samples})")

    return EcgRecord(header, channels, annotations)


def write_record(data_dir, record: EcgRecord) -> None:
    """Write a record in the same three-file layout (used for synthetic data)."""
    os.makedirs(str(data_dir), exist_ok=True)
    h = record.header
    base = os.path.join(str(data_dir), h.record_id)
    lines = [f"{h.record_id} {h.n_signals} {h.sampling_rate:g} {h.n_samples}"]
    for s in h.signals:
        lines.append(f"{s.filename} {s.format_code} {s.adc_gain:g} "
                     f"{s.adc_resolution} {s.adc_zero} 0 0 0 {s.lead_name}")
    with open(base + ".hea", "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(str(data_dir), h.signals[0].filename), "wb") as fh:
        fh.write(encode_format212(record.channels))
    with open(base + ".atr", "wb") as fh:
        fh.write(encode_annotations(record.annotations))


def fetch_record(data_dir, record_id: str, base_url: str = PHYSIONET_URL) -> None:
    """Download one record's three files from the public archive.

    Parsing never requires network access; this is a convenience for
    populating a local data directory.
    """
    os.makedirs(str(data_dir), exist_ok=True)
    for ext in (".hea", ".dat", ".atr"):
        name = f"{record_id}{ext}"
        dest = os.path.join(str(data_dir), name)
        if os.path.exists(dest):
            continue
        urllib.request.urlretrieve(base_url + name, dest)


def fetch_database(data_dir, record_ids=ALL_RECORDS, base_url: str = PHYSIONET_URL) -> None:
    for rid in record_ids:
        fetch_record(data_dir, rid, base_url)


def class_counts(records) -> dict[str, int]:
    """Count beats per AAMI class over an iterable of EcgRecord."""
    counts = dict.fromkeys(AAMI_CLASSES, 0)
    for rec in records:
        for ev in rec.beat_annotations():
            counts[map_to_aami(ev.mit_code)] += 1
    return counts
