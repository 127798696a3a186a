"""Frontend tests: STFT/mel contracts, scene synthesis, augmentations, I/O."""

import numpy as np
import pytest

from sedlab.audio import Waveform, load_wav, save_wav
from sedlab.augment import mixup, time_shift, time_shift_events
from sedlab.data import DataConfig, build_dataset, load_manifest
from sedlab.errors import AudioError, LabelsError, PackingError, ShapeError
from sedlab.features import (
    FeatureConfig,
    mel_filterbank,
    mel_spectrogram,
    num_frames,
    stft,
)
from sedlab.labels import Event, load_labels_tsv, rasterize, save_labels_tsv
from sedlab.synth import EventSpec, SceneSpec, synth_scene

SR = 32000


def tone(freq: float, duration: float, sr: int = SR, amp: float = 0.5) -> Waveform:
    t = np.arange(int(duration * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


class TestStft:
    def test_frame_count_10s_default(self):
        # 1 + floor((320000 - 800) / 320) = 998
        spec = stft(Waveform(np.random.default_rng(0).standard_normal(320000) * 0.1, SR))
        assert spec.shape == (998, 513)

    def test_frame_count_formula_random_durations(self):
        rng = np.random.default_rng(1)
        cfg = FeatureConfig()
        for _ in range(100):
            n = int(rng.integers(900, 200000))
            spec = stft(Waveform(np.zeros(n), SR), cfg)
            assert spec.shape[0] == 1 + (n - 800) // 320 == num_frames(n, 800, 320)

    def test_too_short_clip_rejected(self):
        with pytest.raises(ShapeError):
            stft(Waveform(np.zeros(700), SR))

    def test_dc_energy_exactly_in_bin0_rect_window(self):
        # rectangular window with n_fft == win: DFT of a constant is one spike
        cfg = FeatureConfig(window="rect", n_fft=800)
        spec = stft(Waveform(np.full(32000, 0.25), SR), cfg)
        power = np.abs(spec) ** 2
        np.testing.assert_allclose(power[:, 1:], 0.0, atol=1e-12)
        assert (power[:, 0] > 0).all()

    def test_dc_peaks_at_bin0_default_window(self):
        spec = stft(Waveform(np.full(32000, 0.25), SR))
        power = np.abs(spec) ** 2
        assert (power.argmax(axis=1) == 0).all()
        # zero-padded Hamming main lobe: virtually all energy in the first bins
        assert power[:, :6].sum() / power.sum() > 0.99

    def test_1khz_tone_peaks_at_nearest_bin(self):
        spec = stft(tone(1000.0, 1.0))
        power = np.abs(spec) ** 2
        nearest = int(round(1000.0 / (SR / 1024)))  # bin 32
        assert nearest == 32
        assert (power.argmax(axis=1) == nearest).all()

    def test_one_frame_matches_direct_dft_oracle(self):
        wav = tone(440.0, 0.1)
        cfg = FeatureConfig()
        spec = stft(wav, cfg)
        # brute-force DFT of the first Hamming-windowed frame
        frame = wav.samples[:800] * np.hamming(800)
        padded = np.concatenate([frame, np.zeros(1024 - 800)])
        k = np.arange(513)
        n = np.arange(1024)
        oracle = (padded[None, :] * np.exp(-2j * np.pi * k[:, None] * n[None, :] / 1024)).sum(1)
        np.testing.assert_allclose(spec[0], oracle, atol=1e-8)


class TestMel:
    def test_silence_gives_log_eps(self):
        cfg = FeatureConfig()
        mel = mel_spectrogram(Waveform(np.zeros(32000), SR), cfg)
        np.testing.assert_allclose(mel.frames, np.log(cfg.log_eps), rtol=1e-6)
        assert mel.frame_rate == 100.0

    def test_filterbank_nonnegative_with_bounded_columns(self):
        fb = mel_filterbank(SR, 1024, 128)
        assert fb.shape == (128, 513)
        assert (fb >= 0).all()
        assert fb.max(axis=1).max() <= 1.0 + 1e-6
        # adjacent triangles are complementary in mel space: column sums <= 1
        assert fb.sum(axis=0).max() <= 1.0 + 1e-5

    def test_tone_concentrates_in_adjacent_mel_bands(self):
        cfg = FeatureConfig()
        wav = tone(1000.0, 1.0)
        mel = mel_spectrogram(wav, cfg).frames
        # oracle: apply the filterbank directly to the power spectrum
        power = np.abs(stft(wav, cfg)) ** 2
        fb = mel_filterbank(SR, cfg.n_fft, cfg.n_mels)
        oracle = np.log(power.astype(np.float32) @ fb.T + cfg.log_eps)
        np.testing.assert_allclose(mel, oracle, atol=1e-5)
        energies = np.exp(mel.mean(axis=0))
        top = int(energies.argmax())
        rest = np.delete(energies, [top - 1, top, top + 1])
        assert energies[top] > 10 * rest.max()


class TestSynth:
    def test_zero_events_background_only(self):
        wav, events, tags = synth_scene(SceneSpec(duration=1.0, events=[]), seed=0)
        assert events == [] and tags == []
        assert len(wav.samples) == 32000
        assert np.abs(wav.samples).max() <= 1.0

    def test_pinned_event_labels_match_synthesis_times(self):
        spec = SceneSpec(duration=10.0, events=[EventSpec("tone", onset=2.0, length=1.0)])
        _, events, tags = synth_scene(spec, seed=1)
        assert events == [Event("tone", 2.0, 3.0)]
        assert tags == ["tone"]

    def test_overlapping_different_classes_both_labeled(self):
        spec = SceneSpec(
            duration=4.0,
            events=[
                EventSpec("tone", onset=1.0, length=1.0),
                EventSpec("chirp", onset=1.2, length=1.0),
            ],
        )
        _, events, tags = synth_scene(spec, seed=2)
        assert {e.label for e in events} == {"tone", "chirp"}
        assert tags == ["chirp", "tone"]

    def test_deterministic_per_seed(self):
        spec = SceneSpec(duration=2.0, events=[EventSpec("noise_burst"), EventSpec("click")])
        a = synth_scene(spec, seed=7)
        b = synth_scene(spec, seed=7)
        assert a[0].samples.tobytes() == b[0].samples.tobytes()
        assert a[1] == b[1]

    def test_event_audible_above_background(self):
        spec = SceneSpec(duration=2.0, events=[EventSpec("tone", onset=0.5, length=1.0, snr_db=15)])
        wav, _, _ = synth_scene(spec, seed=3)
        inside = wav.samples[int(0.6 * SR) : int(1.3 * SR)]
        outside = wav.samples[: int(0.4 * SR)]
        assert np.sqrt((inside**2).mean()) > 3 * np.sqrt((outside**2).mean())

    def test_impossible_packing_rejected(self):
        spec = SceneSpec(duration=1.0, events=[EventSpec("tone", length=0.7)] * 3)
        with pytest.raises(PackingError):
            synth_scene(spec, seed=4)


class TestAugment:
    def test_mixup_coefficient_one_returns_first(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((20, 8)).astype(np.float32), np.ones((20, 8), np.float32)
        np.testing.assert_array_equal(mixup(a, b, 1.0), a)

    def test_mixup_half_on_one_hot_labels(self):
        np.testing.assert_allclose(
            mixup(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5), [0.5, 0.5]
        )

    def test_mixup_is_convex_combination(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        lam = 0.3
        np.testing.assert_allclose(mixup(a, b, lam), lam * a + (1 - lam) * b, rtol=1e-6)

    def test_mixup_preserves_label_sum_for_convex_one_hot(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            lam = rng.uniform()
            ya = np.eye(4)[rng.integers(4)]
            yb = np.eye(4)[rng.integers(4)]
            assert mixup(ya, yb, lam).sum() == pytest.approx(1.0, abs=1e-6)

    def test_mixup_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mixup(np.ones((2, 3)), np.ones((3, 2)), 0.5)

    def test_time_shift_zero_identity(self):
        mel = np.random.default_rng(0).standard_normal((100, 8)).astype(np.float32)
        events = [Event("tone", 0.2, 0.5)]
        out, ev = time_shift(mel, events, 0, frame_rate=100.0)
        np.testing.assert_array_equal(out, mel)
        assert ev == events

    def test_time_shift_round_trip_identity(self):
        mel = np.random.default_rng(1).standard_normal((100, 8)).astype(np.float32)
        events = [Event("tone", 0.2, 0.5), Event("chirp", 0.85, 0.95)]
        m1, e1 = time_shift(mel, events, 37, frame_rate=100.0)
        m2, e2 = time_shift(m1, e1, -37, frame_rate=100.0)
        np.testing.assert_array_equal(m2, mel)
        expected = sorted(events, key=lambda e: (e.onset, e.label))
        assert [e.label for e in e2] == [e.label for e in expected]
        for got, want in zip(e2, expected):
            assert got.onset == pytest.approx(want.onset, abs=1e-12)
            assert got.offset == pytest.approx(want.offset, abs=1e-12)

    def test_time_shift_moves_event_by_one_second(self):
        mel = np.zeros((1000, 4), np.float32)
        _, ev = time_shift(mel, [Event("tone", 2.0, 3.0)], 100, frame_rate=100.0)
        assert ev == [Event("tone", 3.0, 4.0)]

    def test_time_shift_wrap_splits_and_preserves_duration(self):
        mel = np.zeros((100, 4), np.float32)
        events = [Event("tone", 0.2, 0.5), Event("chirp", 0.55, 0.95)]
        _, shifted = time_shift(mel, events, 30, frame_rate=100.0)
        for label in ("tone", "chirp"):
            before = sum(e.duration for e in events if e.label == label)
            after = sum(e.duration for e in shifted if e.label == label)
            assert after == pytest.approx(before, abs=1e-9)
        assert any(e.onset == 0.0 for e in shifted)  # the chirp wrapped

    def test_time_shift_too_large_rejected(self):
        with pytest.raises(ShapeError):
            time_shift(np.zeros((10, 4), np.float32), [], 10, frame_rate=100.0)

    def test_event_shift_defined_modulo_duration(self):
        out = time_shift_events([Event("tone", 9.5, 10.0)], 1.0, 10.0)
        assert out == [Event("tone", 0.5, 1.0)]


class TestWavIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        wav = Waveform((rng.uniform(-1, 1, 16000) * 0.8).astype(np.float32), SR)
        save_wav(tmp_path / "a.wav", wav)
        loaded = load_wav(tmp_path / "a.wav")
        assert loaded.sample_rate == SR
        np.testing.assert_allclose(loaded.samples, wav.samples, atol=1.0 / 32768)

    def test_fullscale_sample_scaling(self, tmp_path):
        import struct
        import wave as wavemod

        with wavemod.open(str(tmp_path / "fs.wav"), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(SR)
            fh.writeframes(struct.pack("<h", 32767))
        loaded = load_wav(tmp_path / "fs.wav")
        assert loaded.samples[0] == pytest.approx(32767 / 32768)

    def test_malformed_header_rejected(self, tmp_path):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"RIFFxxxxWAVE" + b"\x00" * 16)
        with pytest.raises(AudioError):
            load_wav(bad)

    def test_stereo_rejected(self, tmp_path):
        import wave as wavemod

        with wavemod.open(str(tmp_path / "st.wav"), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(SR)
            fh.writeframes(b"\x00\x00\x00\x00" * 4)
        with pytest.raises(AudioError):
            load_wav(tmp_path / "st.wav")


class TestLabelsTsv:
    def test_round_trip(self, tmp_path):
        per_clip = {
            "a.wav": [Event("tone", 0.5, 1.25), Event("chirp", 2.0, 3.5)],
            "b.wav": [Event("click", 0.0, 0.4)],
        }
        path = tmp_path / "labels.tsv"
        save_labels_tsv(path, per_clip)
        assert load_labels_tsv(path) == per_clip

    def test_round_trip_with_confidence(self, tmp_path):
        per_clip = {"a.wav": [Event("tone", 0.5, 1.0, confidence=0.75)]}
        path = tmp_path / "dets.tsv"
        save_labels_tsv(path, per_clip)
        assert load_labels_tsv(path) == per_clip

    def test_empty_file_gives_empty_mapping(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        assert load_labels_tsv(path) == {}

    def test_headerless_file_accepted(self, tmp_path):
        path = tmp_path / "raw.tsv"
        path.write_text("x.wav\t1.0\t2.0\ttone\n")
        assert load_labels_tsv(path) == {"x.wav": [Event("tone", 1.0, 2.0)]}

    def test_bad_row_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("x.wav\t1.0\t2.0\ttone\nx.wav\toops\t2.0\ttone\n")
        with pytest.raises(LabelsError, match=":2:"):
            load_labels_tsv(path)

    def test_rasterize_basic(self):
        grid = rasterize([Event("a", 0.10, 0.20)], 100.0, 50, {"a": 0, "b": 1})
        assert grid.shape == (50, 2)
        assert grid[:, 1].sum() == 0
        np.testing.assert_array_equal(np.flatnonzero(grid[:, 0]), np.arange(10, 20))


class TestDataset:
    def test_build_is_deterministic(self, tmp_path):
        cfg = DataConfig(n_strong=3, n_weak=2, n_unlabeled=2, clip_duration=1.0)
        a = build_dataset(cfg, seed=11, out_dir=tmp_path / "a")
        b = build_dataset(cfg, seed=11, out_dir=tmp_path / "b")
        assert (tmp_path / "a/manifest.jsonl").read_text() == (
            tmp_path / "b/manifest.jsonl"
        ).read_text()
        assert a.records[0].seed == b.records[0].seed

    def test_manifest_round_trip_and_features(self, tmp_path):
        cfg = DataConfig(n_strong=2, n_weak=1, n_unlabeled=1, clip_duration=1.0)
        ds = build_dataset(cfg, seed=5, out_dir=tmp_path)
        loaded = load_manifest(tmp_path / "manifest.jsonl")
        assert len(loaded) == 4
        assert loaded.indices("strong") == [0, 1]
        assert loaded.records[0].events == ds.records[0].events
        feat = FeatureConfig()
        mel = loaded.mel(0, feat_cfg=feat)
        assert mel.shape == (num_frames(32000, 800, 320), 128)
        targets = loaded.strong_targets(0, feat)
        assert targets.shape == (mel.shape[0], 4)
        assert targets.max() == 1.0

    def test_unlabeled_clips_have_no_truth_in_manifest(self, tmp_path):
        cfg = DataConfig(n_strong=1, n_weak=1, n_unlabeled=1, clip_duration=1.0)
        build_dataset(cfg, seed=6, out_dir=tmp_path)
        loaded = load_manifest(tmp_path / "manifest.jsonl")
        rec = loaded.records[loaded.indices("unlabeled")[0]]
        assert rec.events is None and rec.tags is None
