import numpy as np
import pytest

from svsnet.signal_io import group_by_pair, parse_manifest
from svsnet.synthdata import (
    F0_RANGE,
    SpeakerParams,
    gen_pair_dataset,
    gen_speaker,
    gen_utterance,
    speaker_distance,
)


def spectrum_peak_hz(samples, rate=16000):
    n = 1 << int(np.ceil(np.log2(len(samples) * 4)))
    mags = np.abs(np.fft.rfft(samples, n))
    return float(np.fft.rfftfreq(n, 1.0 / rate)[np.argmax(mags)])


class TestGenSpeaker:
    def test_deterministic(self):
        assert gen_speaker(42) == gen_speaker(42)

    def test_distinct_seeds_differ(self):
        assert gen_speaker(1) != gen_speaker(2)

    def test_f0_in_range(self):
        for seed in range(50):
            sp = gen_speaker(seed)
            assert F0_RANGE[0] <= sp.f0 <= F0_RANGE[1]


class TestGenUtterance:
    def test_spectral_peak_near_f0(self):
        for seed in (0, 5, 9):
            sp = gen_speaker(seed)
            w = gen_utterance(sp, 1.0, seed=seed + 100)
            assert abs(spectrum_peak_hz(w.samples) - sp.f0) < 5.0

    def test_duration_sample_count(self):
        w = gen_utterance(gen_speaker(0), 1.0, seed=1)
        assert len(w.samples) == 16000
        assert w.sample_rate == 16000

    def test_deterministic(self):
        sp = gen_speaker(3)
        a = gen_utterance(sp, 0.7, seed=9)
        b = gen_utterance(sp, 0.7, seed=9)
        assert np.array_equal(a.samples, b.samples)

    @pytest.mark.parametrize("duration", [0.3, 5.5])
    def test_duration_bounds(self, duration):
        with pytest.raises(ValueError, match="duration"):
            gen_utterance(gen_speaker(0), duration, seed=0)


class TestSpeakerDistance:
    def test_symmetric(self):
        a, b = gen_speaker(1), gen_speaker(2)
        assert speaker_distance(a, b) == speaker_distance(b, a)

    def test_zero_for_identical(self):
        a = gen_speaker(1)
        assert speaker_distance(a, a) == 0.0


class TestGenPairDataset:
    @pytest.fixture(scope="class")
    def corpus(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("synth")
        manifest = gen_pair_dataset(
            24, 4, seed=5, out_dir=out, duration_range=(0.5, 0.6), split_fractions=(0.5, 0.25, 0.25)
        )
        return out, manifest

    def test_manifest_and_wavs_exist(self, corpus):
        out, manifest = corpus
        records = parse_manifest(manifest)
        assert len(records) == 24
        for r in records:
            assert (out / r.test_path).exists()
            assert (out / r.ref_path).exists()

    def test_same_speaker_pairs_label_one(self, corpus):
        _, manifest = corpus
        records = parse_manifest(manifest)
        same = [r for r in records if r.system_id.split("_")[1] == r.system_id.split("_")[2]]
        assert same and all(r.score == 1 for r in same)

    def test_labels_monotone_in_distance(self, corpus):
        _, manifest = corpus
        records = parse_manifest(manifest)
        # recreate speakers from the generation seed stream
        rng = np.random.default_rng(5)
        speakers = [gen_speaker(int(rng.integers(2**31))) for _ in range(4)]
        scored = []
        for r in records:
            _, a, b = r.system_id.split("_")
            ia, ib = int(a), int(b)
            if ia != ib:
                scored.append((speaker_distance(speakers[ia], speakers[ib]), r.score))
        scored.sort()
        labels_in_distance_order = [s for _, s in scored]
        assert labels_in_distance_order == sorted(labels_in_distance_order)
        assert labels_in_distance_order[-1] == 4

    def test_balanced_classes(self, corpus):
        _, manifest = corpus
        records = parse_manifest(manifest)
        counts = {c: sum(1 for r in records if r.score == c) for c in (1, 2, 3, 4)}
        for c, n in counts.items():
            assert abs(n - 6) <= 1, counts

    def test_split_fractions_respected(self, corpus):
        _, manifest = corpus
        records = parse_manifest(manifest)
        counts = {s: sum(1 for r in records if r.split == s) for s in ("train", "val", "test")}
        assert counts["train"] == 12 and counts["val"] == 6 and counts["test"] == 6

    def test_reproducible_bytes(self, corpus, tmp_path):
        out, manifest = corpus
        again = gen_pair_dataset(
            24, 4, seed=5, out_dir=tmp_path, duration_range=(0.5, 0.6), split_fractions=(0.5, 0.25, 0.25)
        )
        assert manifest.read_bytes() == again.read_bytes()
        records = parse_manifest(manifest)
        sample = records[0]
        assert (out / sample.test_path).read_bytes() == (tmp_path / sample.test_path).read_bytes()

    def test_speaker_count_validated(self, tmp_path):
        with pytest.raises(ValueError, match="n_speakers"):
            gen_pair_dataset(24, 1, seed=0, out_dir=tmp_path)

    def test_grouping_round_trip(self, corpus):
        _, manifest = corpus
        groups = group_by_pair(parse_manifest(manifest))
        assert len(groups) == 24
        assert all(g.rating_count == 1 for g in groups)
