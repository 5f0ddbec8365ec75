import numpy as np
import pytest

from ecgbeats import mitdb
from ecgbeats.errors import DataError, ParseError

# Canonical header of record 100 (fields cross-checked against a reference
# WFDB reader once; frozen here so the test needs no data files).
RECORD_100_HEADER = """\
100 2 360 650000
100.dat 212 200 11 1024 995 -22131 0 MLII
100.dat 212 200 11 1024 1011 20052 0 V5
"""


# ---------------------------------------------------------------------------
# Header parsing
# ---------------------------------------------------------------------------

def test_parse_header_record_100_reference():
    h = mitdb.parse_header(RECORD_100_HEADER)
    assert h.record_id == "100"
    assert h.n_signals == 2
    assert h.sampling_rate == 360.0
    assert h.n_samples == 650000
    for spec in h.signals:
        assert spec.format_code == 212
        assert spec.adc_gain == 200.0
        assert spec.adc_resolution == 11
        assert spec.adc_zero == 1024
    assert [s.lead_name for s in h.signals] == ["MLII", "V5"]


def test_parse_header_zero_rate_rejected():
    with pytest.raises(ParseError) as err:
        mitdb.parse_header("100 2 0 650000\nf.dat 212\nf.dat 212\n")
    assert "line 1" in str(err.value)


def test_parse_header_single_signal():
    h = mitdb.parse_header("x 1 250 1000\nx.dat 212 100 12 0 0 0 0 L1\n")
    assert h.n_signals == 1
    assert h.signals[0].adc_gain == 100.0


def test_parse_header_reports_bad_line_number():
    with pytest.raises(ParseError) as err:
        mitdb.parse_header("x 2 360 100\nx.dat 212 200\nx.dat notaformat\n")
    assert "line 3" in str(err.value)


def test_parse_header_comments_ignored():
    h = mitdb.parse_header("# comment\nx 1 360 5\n\nx.dat 212\n# trailing\n")
    assert h.n_samples == 5
    assert h.signals[0].adc_gain == 200.0   # WFDB default when absent


def test_parse_header_missing_signal_lines():
    with pytest.raises(ParseError):
        mitdb.parse_header("x 2 360 100\nx.dat 212 200\n")


# ---------------------------------------------------------------------------
# Format 212
# ---------------------------------------------------------------------------

def test_decode212_zero_high_nibbles():
    (ch,) = mitdb.decode_format212(bytes([0x01, 0x00, 0x02]), 2, 1)
    assert ch.tolist() == [1, 2]


def test_decode212_sign_extension():
    (ch,) = mitdb.decode_format212(bytes([0xFF, 0x0F, 0x00]), 2, 1)
    assert ch[0] == -1


def test_decode212_two_channel_interleave():
    data = mitdb.encode_format212([np.array([1, 2, 3]), np.array([-1, -2, -3])])
    ch0, ch1 = mitdb.decode_format212(data, 3, 2)
    assert ch0.tolist() == [1, 2, 3]
    assert ch1.tolist() == [-1, -2, -3]


def test_format212_round_trip_10k_pairs():
    # The packer is the independent oracle for the decoder and vice versa.
    rng = np.random.default_rng(212)
    a = rng.integers(-2048, 2048, size=10_000)
    b = rng.integers(-2048, 2048, size=10_000)
    out = mitdb.decode_format212(mitdb.encode_format212([a, b]), 10_000, 2)
    assert np.array_equal(out[0], a)
    assert np.array_equal(out[1], b)


def test_format212_odd_sample_count_round_trip():
    x = np.array([5, -5, 2047, -2048, 0])
    (ch,) = mitdb.decode_format212(mitdb.encode_format212([x]), 5, 1)
    assert ch.tolist() == x.tolist()


def test_decode212_truncation_error():
    with pytest.raises(ParseError) as err:
        mitdb.decode_format212(bytes([0x01, 0x00]), 4, 1)
    assert "truncated" in str(err.value)


def test_encode212_range_check():
    with pytest.raises(ValueError):
        mitdb.encode_format212([np.array([2048])])


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------

def _word(code, delta):
    return ((code << 10) | delta).to_bytes(2, "little")


def test_parse_annotations_delta_accumulation():
    data = _word(1, 77) + _word(1, 300) + b"\x00\x00"
    events = mitdb.parse_annotations(data)
    assert [(e.sample_index, e.symbol) for e in events] == [(77, "N"), (377, "N")]
    assert all(e.is_beat for e in events)


def test_parse_annotations_truncated_skip():
    data = _word(59, 0) + b"\x01\x02"       # SKIP needs 4 extension bytes
    with pytest.raises(ParseError) as err:
        mitdb.parse_annotations(data)
    assert "SKIP" in str(err.value)


def test_parse_annotations_skip_jump():
    # 70000 = 0x11170: high word 0x0001 first, then low word 0x1170.
    data = _word(59, 0) + (0x0001).to_bytes(2, "little") \
        + (0x1170).to_bytes(2, "little") + _word(5, 3) + b"\x00\x00"
    (ev,) = mitdb.parse_annotations(data)
    assert ev.sample_index == 70003
    assert ev.symbol == "V"


def test_parse_annotations_missing_terminator():
    with pytest.raises(ParseError):
        mitdb.parse_annotations(_word(1, 10))


def test_parse_annotations_non_beat_retained_and_flagged():
    data = _word(28, 5) + _word(1, 70) + b"\x00\x00"
    rhythm, beat = mitdb.parse_annotations(data)
    assert rhythm.mit_code == 28 and not rhythm.is_beat
    assert beat.is_beat


def test_parse_annotations_aux_payload():
    data = _word(28, 5) + _word(63, 3) + b"(N\x00\x00" + _word(1, 70) + b"\x00\x00"
    rhythm, beat = mitdb.parse_annotations(data)
    assert rhythm.aux == "(N"
    assert beat.sample_index == 75


def test_parse_annotations_rejects_decreasing_beats():
    data = _word(59, 0) + (0xFFFF).to_bytes(2, "little") \
        + (0xFF00).to_bytes(2, "little") + _word(1, 0) + b"\x00\x00"
    with pytest.raises(ParseError):
        mitdb.parse_annotations(_word(1, 100) + data)


def test_annotation_round_trip_1000_events():
    # Companion encoder is the oracle; gaps routinely exceed the 10-bit
    # delta so SKIP extensions get exercised too.
    rng = np.random.default_rng(1000)
    codes = sorted(mitdb.AAMI_MAP) + [28]
    t, events = 0, []
    for _ in range(1000):
        t += int(rng.integers(1, 5000))
        code = codes[int(rng.integers(len(codes)))]
        symbol, _, is_beat = mitdb.ANNOTATION_CODES[code]
        aux = "(T" if code == 28 else None
        events.append(mitdb.AnnotationEvent(t, code, symbol, is_beat, aux))
    parsed = mitdb.parse_annotations(mitdb.encode_annotations(events))
    assert [(e.sample_index, e.mit_code, e.aux) for e in parsed] \
        == [(e.sample_index, e.mit_code, e.aux) for e in events]


# ---------------------------------------------------------------------------
# AAMI mapping
# ---------------------------------------------------------------------------

def test_map_pvc_to_v():
    assert mitdb.map_to_aami(5) == "V"


def test_map_lbbb_to_n():
    assert mitdb.map_to_aami(2) == "N"


def test_map_rhythm_to_none():
    assert mitdb.map_to_aami(28) is None


def test_map_unknown_beat_code_errors():
    with pytest.raises(DataError):
        mitdb.map_to_aami(25)    # beat code outside the five-class table


def test_aami_map_total_and_disjoint():
    preimages = {c: {k for k, v in mitdb.AAMI_MAP.items() if v == c}
                 for c in mitdb.AAMI_CLASSES}
    all_codes = set()
    for c, codes in preimages.items():
        assert codes, f"class {c} has no beat codes"
        assert not (codes & all_codes)
        all_codes |= codes
    assert len(all_codes) == 15   # 5 N + 4 S + 2 V + 1 F + 3 Q named beat types
    for code in all_codes:
        assert mitdb.ANNOTATION_CODES[code][2]   # every mapped code is a beat


# ---------------------------------------------------------------------------
# Dataset split
# ---------------------------------------------------------------------------

def test_split_membership():
    split = mitdb.split_dataset(["101", "100", "102"])
    assert split.ds1 == ("101",)
    assert split.ds2 == ("100",)
    assert split.excluded_paced == ("102",)


def test_split_lists_are_fixed_and_disjoint():
    assert len(mitdb.DS1_RECORDS) == 22
    assert len(mitdb.DS2_RECORDS) == 22
    assert len(mitdb.PACED_RECORDS) == 4
    assert not set(mitdb.DS1_RECORDS) & set(mitdb.DS2_RECORDS)
    assert len(mitdb.ALL_RECORDS) == 48


def test_split_unknown_record_errors():
    with pytest.raises(DataError):
        mitdb.split_dataset(["999"])


# ---------------------------------------------------------------------------
# Whole-record round trip
# ---------------------------------------------------------------------------

def test_record_write_read_round_trip(tmp_path):
    from ecgbeats import synthetic
    rec = synthetic.make_record("109", duration_s=20)
    mitdb.write_record(tmp_path, rec)
    back = mitdb.read_record(tmp_path, "109")
    assert back.header.sampling_rate == rec.header.sampling_rate
    assert all(np.array_equal(a, b) for a, b in zip(rec.channels, back.channels))
    assert [(a.sample_index, a.mit_code) for a in rec.annotations] \
        == [(a.sample_index, a.mit_code) for a in back.annotations]


def test_millivolt_conversion(tmp_path):
    from ecgbeats import synthetic
    rec = synthetic.make_record("101", duration_s=10)
    mv = rec.millivolts(0)
    spec = rec.header.signals[0]
    i = 1234
    assert mv[i] == (rec.channels[0][i] - spec.adc_zero) / spec.adc_gain


def test_read_record_missing_files(tmp_path):
    with pytest.raises(DataError):
        mitdb.read_record(tmp_path, "100")
