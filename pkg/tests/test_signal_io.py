import json

import numpy as np
import pytest
from scipy.io import wavfile

from svsnet.signal_io import (
    ManifestError,
    PairRecord,
    Waveform,
    group_by_pair,
    load_waveform,
    parse_manifest,
    peak_normalize,
    resample,
    save_waveform,
    write_manifest,
)


def spectrum_peak_hz(samples: np.ndarray, rate: int) -> float:
    n = 1 << int(np.ceil(np.log2(len(samples) * 4)))
    mags = np.abs(np.fft.rfft(samples, n))
    return float(np.fft.rfftfreq(n, 1.0 / rate)[np.argmax(mags)])


def write_wav(path, rate, samples_float):
    wavfile.write(str(path), rate, np.round(np.asarray(samples_float) * 32767).astype(np.int16))


class TestLoadWaveform:
    def test_16k_mono_identity_up_to_peak_norm(self, tmp_path, rng):
        x = rng.uniform(-0.5, 0.5, size=4000)
        path = tmp_path / "a.wav"
        write_wav(path, 16000, x)
        w = load_waveform(path)
        assert w.sample_rate == 16000
        assert len(w.samples) == 4000
        stored = np.round(x * 32767).astype(np.int16) / 32768.0
        expected = stored / np.max(np.abs(stored))
        assert np.allclose(w.samples, expected, atol=1e-6)

    def test_all_zero_stays_zero(self, tmp_path):
        path = tmp_path / "z.wav"
        write_wav(path, 22050, np.zeros(1000))
        w = load_waveform(path)
        assert np.all(w.samples == 0.0)
        assert w.sample_rate == 16000

    def test_stereo_averaged(self, tmp_path):
        left = np.full(2000, 0.5)
        right = np.full(2000, -0.25)
        data = np.round(np.stack([left, right], axis=1) * 32767).astype(np.int16)
        path = tmp_path / "st.wav"
        wavfile.write(str(path), 16000, data)
        w = load_waveform(path)
        # channel mean is constant, so peak normalization maps it to 1.0
        assert np.allclose(w.samples, 1.0, atol=1e-5)

    def test_8k_sine_peaks_at_440(self, tmp_path):
        t = np.arange(8000 * 2) / 8000.0
        path = tmp_path / "s.wav"
        write_wav(path, 8000, 0.8 * np.sin(2 * np.pi * 440.0 * t))
        w = load_waveform(path)
        assert w.sample_rate == 16000
        assert abs(spectrum_peak_hz(w.samples, 16000) - 440.0) < 2.0

    def test_zero_length_rejected(self, tmp_path):
        path = tmp_path / "e.wav"
        wavfile.write(str(path), 16000, np.zeros(0, dtype=np.int16))
        with pytest.raises(ValueError, match="zero-length"):
            load_waveform(path)

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"not a riff file")
        with pytest.raises(ValueError):
            load_waveform(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_waveform(tmp_path / "nope.wav")

    def test_deterministic(self, tmp_path, rng):
        path = tmp_path / "d.wav"
        write_wav(path, 22050, rng.uniform(-0.9, 0.9, size=5000))
        w1 = load_waveform(path)
        w2 = load_waveform(path)
        assert np.array_equal(w1.samples, w2.samples)

    def test_save_load_round_trip(self, tmp_path, rng):
        w = Waveform(rng.uniform(-1, 1, size=3000).astype(np.float32), 16000)
        path = tmp_path / "rt.wav"
        save_waveform(w, path)
        back = load_waveform(path)
        ref = peak_normalize(w.samples)
        assert np.allclose(back.samples, ref, atol=2e-4)


class TestResample:
    def test_identity_is_bitwise(self, rng):
        w = Waveform(rng.uniform(-1, 1, size=1000).astype(np.float32), 16000)
        out = resample(w, 16000)
        assert np.array_equal(out.samples, w.samples)

    def test_length_arithmetic(self):
        w = Waveform(np.zeros(44100, dtype=np.float32) + 0.01, 22050)
        assert len(resample(w, 16000).samples) == 32000

    @pytest.mark.parametrize("n,src,dst", [(1000, 8000, 16000), (999, 22050, 16000), (16001, 16000, 22050)])
    def test_rounded_length(self, n, src, dst, rng):
        w = Waveform(rng.uniform(-1, 1, size=n).astype(np.float32), src)
        expected = (2 * n * dst + src) // (2 * src)
        assert len(resample(w, dst).samples) == expected

    def test_stopband_noise_attenuated(self, rng):
        # noise band-limited to >= 8.8 kHz must drop by >= 40 dB at 16 kHz
        n = 44100
        noise = rng.standard_normal(n)
        spec = np.fft.rfft(noise)
        freqs = np.fft.rfftfreq(n, 1.0 / 22050)
        spec[freqs < 8800.0] = 0.0
        high = np.fft.irfft(spec, n)
        high = (high / np.max(np.abs(high))).astype(np.float32)
        out = resample(Waveform(high, 22050), 16000)
        in_rms = np.sqrt(np.mean(high.astype(np.float64) ** 2))
        out_rms = np.sqrt(np.mean(out.samples.astype(np.float64) ** 2))
        assert 20 * np.log10(out_rms / in_rms + 1e-12) < -40.0

    def test_passband_tone_preserved(self):
        t = np.arange(22050) / 22050.0
        tone = (0.5 * np.sin(2 * np.pi * 1000.0 * t)).astype(np.float32)
        out = resample(Waveform(tone, 22050), 16000)
        # steady-state amplitude within 0.1 dB
        mid = out.samples[2000:-2000].astype(np.float64)
        amp = np.sqrt(2.0) * np.sqrt(np.mean(mid**2))
        assert abs(20 * np.log10(amp / 0.5)) < 0.1

    def test_nonpositive_rate_rejected(self):
        w = Waveform(np.zeros(10, dtype=np.float32) + 0.1, 16000)
        with pytest.raises(ValueError):
            resample(w, 0)


class TestManifest:
    def test_single_line_parse(self, tmp_path):
        path = tmp_path / "m.jsonl"
        rec = {"pair_id": "p1", "system_id": "A", "test_path": "a.wav", "ref_path": "b.wav", "score": 3, "split": "train"}
        path.write_text(json.dumps(rec) + "\n")
        records = parse_manifest(path)
        assert len(records) == 1
        assert records[0] == PairRecord(**rec)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        assert parse_manifest(path) == []

    def test_score_out_of_range_names_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        good = {"pair_id": "p1", "system_id": "A", "test_path": "a.wav", "ref_path": "b.wav", "score": 3, "split": "train"}
        bad = dict(good, score=5, pair_id="p2")
        path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
        with pytest.raises(ManifestError, match="line 2"):
            parse_manifest(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("{broken\n")
        with pytest.raises(ManifestError, match="line 1"):
            parse_manifest(path)

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        rec = {"pair_id": "p1", "system_id": "A", "test_path": "a.wav", "ref_path": "b.wav", "score": 3, "split": "train", "extra": 1}
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ManifestError, match="unknown"):
            parse_manifest(path)

    def test_round_trip_preserves_order(self, tmp_path):
        records = [
            PairRecord(f"p{i}", "S", "a.wav", "b.wav", score=(i % 4) + 1, split="test")
            for i in range(6)
        ]
        path = tmp_path / "m.jsonl"
        write_manifest(records, path)
        assert parse_manifest(path) == records


class TestGroupByPair:
    def _records(self, spec):
        return [
            PairRecord(pid, "S", "a.wav", "b.wav", score=s, split="train")
            for pid, scores in spec
            for s in scores
        ]

    def test_mean_of_two_ratings(self):
        groups = group_by_pair(self._records([("p1", [2, 3])]))
        assert groups[0].mean_score == 2.5
        assert groups[0].rating_count == 2

    def test_singleton(self):
        groups = group_by_pair(self._records([("p1", [4])]))
        assert groups[0].mean_score == 4.0

    def test_first_appearance_order_and_counts(self):
        records = self._records([("a", [1]), ("b", [2, 2]), ("c", [3])])
        # interleave a second rating for "a" at the end
        records.append(PairRecord("a", "S", "a.wav", "b.wav", score=3, split="train"))
        groups = group_by_pair(records)
        assert [g.pair_id for g in groups] == ["a", "b", "c"]
        assert sum(g.rating_count for g in groups) == len(records)
        assert groups[0].mean_score == 2.0

    def test_majority_tie_breaks_low(self):
        groups = group_by_pair(self._records([("p", [4, 1])]))
        assert groups[0].majority_score == 1
        groups = group_by_pair(self._records([("p", [2, 3, 3])]))
        assert groups[0].majority_score == 3
