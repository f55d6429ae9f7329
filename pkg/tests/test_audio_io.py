import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cryage.audio_io import (AudioClip, SegmentSpec, encode_wav, frame_rms_db, load_wav, parse_wav, resample,
                             save_wav, segment_clip)
from cryage.errors import MalformedWav, UnsupportedEncoding


def wav_bytes(samples_bytes, rate=16000, bits=16, channels=1, fmt_tag=1, declared=None):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    size = len(samples_bytes) if declared is None else declared
    body = b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", size) + samples_bytes
    return b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body


def test_zero_second_of_silence(tmp_path):
    p = tmp_path / "z.wav"
    p.write_bytes(wav_bytes(np.zeros(16000, "<i2").tobytes()))
    clip = load_wav(p)
    assert len(clip) == 16000 and clip.sample_rate == 16000
    assert np.all(clip.samples == 0.0)
    assert clip.duration_seconds == 1.0


def test_full_scale_positive_sample():
    clip = parse_wav(wav_bytes(np.array([32767], "<i2").tobytes()))
    assert clip.samples[0] == 32767 / 32768


def test_truncated_data_chunk():
    raw = wav_bytes(np.zeros(100, "<i2").tobytes(), declared=400)
    with pytest.raises(MalformedWav):
        parse_wav(raw)


def test_not_riff():
    with pytest.raises(MalformedWav):
        parse_wav(b"JUNKJUNKJUNKJUNK")


def test_unsupported_format_tag():
    with pytest.raises(UnsupportedEncoding):
        parse_wav(wav_bytes(np.zeros(10, "<i2").tobytes(), fmt_tag=0x0055))


def test_stereo_is_averaged():
    frames = np.array([[16384, -16384], [8192, 8192]], "<i2")
    clip = parse_wav(wav_bytes(frames.tobytes(), channels=2))
    assert np.allclose(clip.samples, [0.0, 0.25])


@pytest.mark.parametrize("bits,dtype,scale", [(8, np.uint8, None), (24, None, 2 ** 23), (32, "<i4", 2 ** 31)])
def test_other_pcm_depths(bits, dtype, scale):
    if bits == 8:
        raw = np.array([128, 192, 64], np.uint8).tobytes()
        expect = [0.0, 0.5, -0.5]
    elif bits == 24:
        vals = [0, 2 ** 22, -(2 ** 22)]
        raw = b"".join(int(v & 0xFFFFFF).to_bytes(3, "little") for v in vals)
        expect = [v / scale for v in vals]
    else:
        vals = np.array([0, 2 ** 30, -(2 ** 30)], dtype)
        raw = vals.tobytes()
        expect = vals / scale
    clip = parse_wav(wav_bytes(raw, bits=bits))
    assert np.allclose(clip.samples, expect)


def test_float32_wav():
    x = np.array([0.1, -0.7, 0.25], "<f4")
    clip = parse_wav(wav_bytes(x.tobytes(), bits=32, fmt_tag=3))
    assert np.allclose(clip.samples, x)


@given(st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=1, max_size=400))
def test_round_trip_quantization(values):
    clip = AudioClip(np.array(values), 16000)
    back = parse_wav(encode_wav(clip))
    assert len(back) == len(clip)
    # full-scale +1.0 clips to 32767/32768, which is the only error larger than half a step
    assert np.max(np.abs(back.samples - clip.samples)) <= 2.0 ** -15


def test_save_and_load(tmp_path):
    x = np.sin(np.linspace(0, 20, 1000)) * 0.5
    save_wav(tmp_path / "a.wav", AudioClip(x, 16000))
    assert np.max(np.abs(load_wav(tmp_path / "a.wav").samples - x)) <= 2.0 ** -15


def test_resample_identity():
    clip = AudioClip(np.linspace(-0.5, 0.5, 100), 16000)
    assert resample(clip, 16000) is clip


def test_resample_keeps_sine_frequency():
    from cryage.features import StftParams, stft

    t = np.arange(48000) / 48000
    clip = resample(AudioClip(0.5 * np.sin(2 * np.pi * 1000 * t), 48000), 16000)
    mags = stft(clip, StftParams()).mags
    assert np.all(np.argmax(mags[2:-2], axis=1) == 32)


def test_resample_length():
    clip = AudioClip(np.zeros(16000), 8000)
    assert abs(len(resample(clip, 16000)) - 32000) <= 1


@given(st.sampled_from([8000, 11025, 22050, 44100, 48000]), st.integers(100, 5000))
def test_resample_duration_preserved(rate, n):
    clip = AudioClip(np.zeros(n), rate)
    out = resample(clip, 16000)
    assert abs(out.duration_seconds - clip.duration_seconds) <= 1.0 / 16000


def test_normalized_peak_and_nonfinite():
    clip = AudioClip(np.array([0.0, np.nan, 0.2, -0.4, np.inf]), 8000)
    n = clip.normalized(0.9)
    assert np.all(np.isfinite(n.samples))
    assert np.isclose(np.max(np.abs(n.samples)), 0.9)


def test_segment_spec_validation():
    with pytest.raises(ValueError):
        SegmentSpec(min_len_s=2.0, max_len_s=1.0)
    with pytest.raises(ValueError):
        SegmentSpec(silence_db_floor=3.0)


def bursts(layout, rate=16000, seed=0):
    """Noise bursts at 0.5 amplitude over (start, stop) spans in seconds."""
    rng = np.random.default_rng(seed)
    total = max(stop for _, stop in layout) + 1.0
    x = np.zeros(int(total * rate))
    for a, b in layout:
        x[int(a * rate):int(b * rate)] = 0.5 * rng.uniform(-1, 1, int(b * rate) - int(a * rate))
    return AudioClip(x, rate)


def rms_scan_segments(clip, floor_db=-40.0, hop=160):
    # oracle: plain loop over frames, grouping consecutive loud ones
    x = clip.samples
    peak = np.max(np.abs(x))
    spans, start = [], None
    for i in range(len(x) // hop):
        loud = np.sqrt(np.mean(x[i * hop:(i + 1) * hop] ** 2)) >= peak * 10 ** (floor_db / 20)
        if loud and start is None:
            start = i
        if not loud and start is not None:
            spans.append((start * hop, i * hop))
            start = None
    if start is not None:
        spans.append((start * hop, (len(x) // hop) * hop))
    return spans


def test_three_bursts():
    clip = bursts([(1.0, 3.0), (4.0, 6.0), (7.0, 9.0)])
    segs = segment_clip(clip)
    oracle = rms_scan_segments(clip)
    assert len(segs) == 3 == len(oracle)
    for seg, (a, b) in zip(segs, oracle):
        assert abs(seg.duration_seconds - 2.0) <= 0.01
        assert len(seg) == b - a


def test_silence_and_short_burst():
    assert segment_clip(AudioClip(np.zeros(32000), 16000)) == []
    assert segment_clip(bursts([(1.0, 1.5)])) == []


def test_long_burst_is_split():
    segs = segment_clip(bursts([(0.5, 16.5)]))
    assert [round(s.duration_seconds, 2) for s in segs] == [7.0, 7.0, 2.0]


def test_short_silence_bridged():
    segs = segment_clip(bursts([(1.0, 2.0), (2.1, 3.0)]))
    assert len(segs) == 1 and abs(segs[0].duration_seconds - 2.0) <= 0.01


@given(st.lists(st.tuples(st.floats(0.05, 2.5), st.floats(0.05, 1.5)), min_size=1, max_size=5), st.integers(0, 99))
def test_segments_are_active_and_disjoint(layout, seed):
    spans, t = [], 0.2
    for length, gap in layout:
        spans.append((t, t + length))
        t += length + gap
    clip = bursts(spans, seed=seed)
    segs = segment_clip(clip)
    db = frame_rms_db(clip)
    x = clip.samples
    starts = []
    for s in segs:
        # locate each segment inside the clip
        pos = next(i for i in range(0, len(x) - len(s) + 1, 160) if np.array_equal(x[i:i + len(s)], s.samples))
        starts.append((pos, pos + len(s)))
        assert 1.0 - 1e-9 <= s.duration_seconds <= 7.0 + 1e-9
        assert db[pos // 160] >= -40 and db[(pos + len(s)) // 160 - 1] >= -40
    starts.sort()
    for (a0, b0), (a1, _) in zip(starts, starts[1:]):
        assert b0 <= a1


def test_empty_clip_rejected():
    with pytest.raises(ValueError):
        segment_clip(AudioClip(np.zeros(0), 16000))
