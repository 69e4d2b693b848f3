import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepyco.signal_io import (
    EPOCH_SAMPLES,
    FS,
    N1,
    N2,
    N3,
    REM,
    W,
    ChannelNotFoundError,
    EDFError,
    EDFFieldError,
    EDFTruncatedError,
    EpochSequence,
    FoldSplit,
    Recording,
    epoch_signal,
    kfold_split,
    load_dataset,
    make_sequences,
    map_labels,
    preprocess,
    read_edf,
    read_edf_header,
    read_labels,
    read_raw,
    resample_100hz,
    sequence_windows,
    synth_dataset,
    synth_epoch,
    synth_hypnogram,
    trim_wake,
    write_dataset,
    write_edf,
    write_labels,
    write_raw,
)


def craft_edf(signals, n_records=1, duration=1):
    """Hand-built EDF bytes; ``signals`` is a list of (label, phys_min, phys_max, dig_min, dig_max, samples)."""

    def f(value, width):
        return str(value).ljust(width).encode("ascii")

    ns = len(signals)
    head = (f("0", 8) + f("patient", 80) + f("recording", 80) + f("01.01.00", 8) + f("00.00.00", 8)
            + f(256 + 256 * ns, 8) + f("", 44) + f(n_records, 8) + f(duration, 8) + f(ns, 4))
    columns = [
        [f(s[0], 16) for s in signals],
        [f("", 80)] * ns,
        [f("uV", 8)] * ns,
        [f(s[1], 8) for s in signals],
        [f(s[2], 8) for s in signals],
        [f(s[3], 8) for s in signals],
        [f(s[4], 8) for s in signals],
        [f("", 80)] * ns,
        [f(len(s[5]) // n_records, 8) for s in signals],
        [f("", 32)] * ns,
    ]
    for col in columns:
        head += b"".join(col)
    body = b""
    for r in range(n_records):
        for s in signals:
            per = len(s[5]) // n_records
            body += np.asarray(s[5][r * per : (r + 1) * per], dtype="<i2").tobytes()
    return head + body


class TestEDF:
    def test_linear_scaling(self):
        data = craft_edf([("EEG Fpz-Cz", -100, 100, -10, 10, [-10, 0, 5, 10])])
        rec = read_edf(data)
        np.testing.assert_allclose(rec.samples, [-100.0, 0.0, 50.0, 100.0])
        assert rec.sample_rate == 4
        assert rec.channel == "EEG Fpz-Cz"

    def test_two_signal_header(self):
        data = craft_edf([("EEG A", -1, 1, -1, 1, [0, 1]), ("EEG B", -1, 1, -1, 1, [1, -1])])
        assert data[252:256] == b"2   "
        header = read_edf_header(data)
        assert header["n_signals"] == 2
        assert [s["label"] for s in header["signals"]] == ["EEG A", "EEG B"]
        np.testing.assert_array_equal(read_edf(data, "EEG B").samples, [1.0, -1.0])

    def test_interleaved_records(self):
        a = [1, 2, 3, 4]
        b = [10, 20, 30, 40, 50, 60]
        data = craft_edf([("A", -100, 100, -100, 100, a), ("B", -100, 100, -100, 100, b)], n_records=2)
        np.testing.assert_array_equal(read_edf(data, "A").samples, a)
        np.testing.assert_array_equal(read_edf(data, "B").samples, b)

    def test_missing_channel_lists_available(self):
        data = craft_edf([("EEG A", -1, 1, -1, 1, [0]), ("EEG B", -1, 1, -1, 1, [0])])
        with pytest.raises(ChannelNotFoundError) as info:
            read_edf(data, "EEG C")
        assert "EEG A" in str(info.value) and "EEG B" in str(info.value)
        with pytest.raises(ChannelNotFoundError):
            read_edf(data)  # ambiguous without a channel

    def test_truncated_header(self):
        data = craft_edf([("A", -1, 1, -1, 1, [0, 0])])
        with pytest.raises(EDFTruncatedError):
            read_edf(data[:200])
        with pytest.raises(EDFTruncatedError):
            read_edf(data[:400])

    def test_truncated_body(self):
        data = craft_edf([("A", -1, 1, -1, 1, [0, 0, 0, 0])])
        with pytest.raises(EDFTruncatedError):
            read_edf(data[:-2])

    def test_non_numeric_field(self):
        data = bytearray(craft_edf([("A", -1, 1, -1, 1, [0, 0])]))
        data[252:256] = b"two "
        with pytest.raises(EDFFieldError, match="n_signals"):
            read_edf(bytes(data))

    def test_errors_are_distinct(self):
        assert len({EDFTruncatedError, EDFFieldError, ChannelNotFoundError}) == 3
        for err in (EDFTruncatedError, EDFFieldError, ChannelNotFoundError):
            assert issubclass(err, EDFError)

    def test_writer_round_trip(self, rng):
        rec = Recording("s1", rng.normal(0, 40, 3 * EPOCH_SAMPLES + 17), FS, "EEG Fpz-Cz")
        back = read_edf(write_edf(rec), subject_id="s1")
        assert back.sample_rate == FS and back.channel == "EEG Fpz-Cz"
        span = rec.samples.max() - rec.samples.min()
        step = span / 65535
        np.testing.assert_allclose(back.samples[: rec.samples.size], rec.samples, atol=step)
        np.testing.assert_array_equal(back.samples[rec.samples.size :], back.samples[-1])


class TestRaw:
    def test_round_trip(self, rng):
        rec = Recording("s", rng.standard_normal(50), 200, "EEG")
        back = read_raw(write_raw(rec), "s")
        assert back.sample_rate == 200
        np.testing.assert_array_equal(back.samples, rec.samples.astype(np.float32))

    def test_bad_magic_and_length(self):
        with pytest.raises(ValueError):
            read_raw(b"XXXX\x64\x00\x00\x00")
        with pytest.raises(ValueError):
            read_raw(b"SPYR\x64\x00\x00\x00abc")


def peak_hz(x, fs):
    power = np.abs(np.fft.rfft(x))
    return np.fft.rfftfreq(x.size, 1 / fs)[np.argmax(power)]


def band_power(x, fs, hz):
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, 1 / fs)
    return power[np.abs(freqs - hz) <= 0.5].sum()


class TestResample:
    def test_identity_at_100hz(self, rng):
        rec = Recording("s", rng.standard_normal(300), FS)
        assert resample_100hz(rec) is rec

    def test_peak_preserved(self):
        t = np.arange(2000 * 10) / 200
        out = resample_100hz(Recording("s", np.sin(2 * np.pi * 10 * t), 200))
        assert out.sample_rate == FS and out.samples.size == 10_000
        assert peak_hz(out.samples, FS) == pytest.approx(10.0, abs=0.1)

    def test_alias_attenuated(self):
        t = np.arange(200 * 20) / 200
        x = np.sin(2 * np.pi * 70 * t)
        out = resample_100hz(Recording("s", x, 200)).samples
        # 70 Hz folds to 30 Hz at 100 Hz; compare amplitude-normalised band powers
        before = band_power(x, 200, 70) / x.size**2
        after = band_power(out, FS, 30) / out.size**2
        assert 10 * np.log10(after / before) <= -20

    def test_non_integer_ratio_rejected(self):
        with pytest.raises(ValueError, match="ratio"):
            resample_100hz(Recording("s", np.zeros(256), 256))
        with pytest.raises(ValueError):
            resample_100hz(Recording("s", np.zeros(50), 50))


class TestLabels:
    def test_mapping(self):
        stages, keep = map_labels(["W", "N4", "MOVEMENT", "N3", "REM", "n1", "UNKNOWN", "N2"])
        np.testing.assert_array_equal(stages, [W, N3, N3, REM, N1, N2])
        np.testing.assert_array_equal(keep, [1, 1, 0, 1, 1, 1, 0, 1])

    def test_unknown_label(self):
        with pytest.raises(ValueError, match="S5"):
            map_labels(["W", "S5"])

    def test_csv_round_trip(self, tmp_path):
        write_labels(tmp_path / "l.csv", ["W", "N2", "REM"])
        assert read_labels(tmp_path / "l.csv") == ["W", "N2", "REM"]
        (tmp_path / "bad.csv").write_text("idx,stage\n0,W\n")
        with pytest.raises(ValueError):
            read_labels(tmp_path / "bad.csv")


class TestTrimWake:
    def trim(self, stages):
        stages = np.asarray(stages)
        return trim_wake(stages, np.arange(len(stages)))

    def test_leading_cap(self):
        s, e = self.trim([W] * 100 + [N2] * 5)
        assert (s[:60] == W).all() and s[60] == N2 and len(s) == 65
        assert e[0] == 40

    def test_under_cap(self):
        s, _ = self.trim([W] * 10 + [N2] * 5)
        assert len(s) == 15

    def test_trailing_cap(self):
        s, _ = self.trim([N2] * 5 + [W] * 200)
        assert len(s) == 65

    def test_all_wake_rejected(self):
        with pytest.raises(ValueError, match="wake"):
            self.trim([W] * 10)

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=400).filter(lambda s: any(s)))
    def test_sleep_span_is_kept(self, stages):
        s, _ = self.trim(stages)
        arr = np.asarray(stages)
        sleep = np.flatnonzero(arr != W)
        np.testing.assert_array_equal(s[s != W], arr[arr != W])
        lead = np.flatnonzero(s != W)[0]
        assert lead == min(sleep[0], 60)


class TestSequences:
    def test_windows(self):
        w = sequence_windows(12, 10)
        assert w.shape == (12, 10)
        # 1-based epoch 12 is index 11; its window spans 1-based epochs 3..12
        np.testing.assert_array_equal(w[11], np.arange(2, 12))
        np.testing.assert_array_equal(w[0], np.zeros(10))
        np.testing.assert_array_equal(w[1], [0] * 9 + [1])

    def test_skip_head(self):
        w = sequence_windows(12, 10, "skip")
        assert w.shape == (3, 10)
        np.testing.assert_array_equal(w[0], np.arange(10))

    def test_make_sequences(self, rng):
        epochs = rng.standard_normal((12, EPOCH_SAMPLES))
        labels = rng.integers(0, 5, 12)
        seqs = make_sequences(epochs, labels, 10)
        assert len(seqs) == 12
        assert seqs[0].signal.shape == (10 * EPOCH_SAMPLES,)
        np.testing.assert_array_equal(seqs[0].signal.reshape(10, -1), np.repeat(epochs[:1], 10, axis=0))
        assert [s.label for s in seqs] == list(labels)
        np.testing.assert_array_equal(seqs[11].signal[-EPOCH_SAMPLES:], epochs[11])

    def test_single_epoch_sequences(self, rng):
        epochs = rng.standard_normal((4, EPOCH_SAMPLES))
        seqs = make_sequences(epochs, np.arange(4), 1)
        assert all(s.signal.shape == (EPOCH_SAMPLES,) for s in seqs)

    def test_invalid(self):
        with pytest.raises(ValueError):
            sequence_windows(5, 0)
        with pytest.raises(ValueError):
            EpochSequence(np.zeros(10), 0, 1)
        with pytest.raises(ValueError):
            EpochSequence(np.zeros(EPOCH_SAMPLES), 5, 1)

    @given(st.integers(1, 60), st.integers(1, 12))
    def test_target_is_last_and_windows_contiguous(self, n, L):
        w = sequence_windows(n, L)
        np.testing.assert_array_equal(w[:, -1], np.arange(n))
        assert (np.diff(w, axis=1) >= 0).all() and (np.diff(w, axis=1) <= 1).all()


class TestKFold:
    def test_paper_scale_split(self):
        ids = [f"s{i:02d}" for i in range(79)]
        folds = kfold_split(ids, 10, 7, seed=0)
        assert len(folds) == 10
        assert {len(f.test) for f in folds} <= {7, 8}
        assert all(len(f.validation) == 7 for f in folds)
        tested = [s for f in folds for s in f.test]
        assert sorted(tested) == ids
        for f in folds:
            assert len(f.train) + len(f.validation) + len(f.test) == 79

    def test_deterministic(self):
        ids = [str(i) for i in range(20)]
        assert kfold_split(ids, 4, 2, 3) == kfold_split(ids, 4, 2, 3)
        assert kfold_split(ids, 4, 2, 3) != kfold_split(ids, 4, 2, 4)

    @pytest.mark.parametrize("n,k,n_val", [(3, 4, 1), (4, 2, 2), (5, 1, 1), (10, 3, 0)])
    def test_impossible_sizes(self, n, k, n_val):
        with pytest.raises(ValueError):
            kfold_split([str(i) for i in range(n)], k, n_val, 0)

    def test_duplicate_ids(self):
        with pytest.raises(ValueError):
            kfold_split(["a", "a", "b", "c"], 2, 1, 0)

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            FoldSplit(0, 2, ["a"], ["a"], ["b"])

    @settings(max_examples=30)
    @given(st.integers(6, 40), st.integers(2, 6), st.integers(1, 3), st.integers(0, 100))
    def test_roles_partition_subjects(self, n, k, n_val, seed):
        ids = [str(i) for i in range(n)]
        if n < k or n - -(-n // k) - n_val < 1:
            return
        for f in kfold_split(ids, k, n_val, seed):
            assert sorted(f.train + f.validation + f.test, key=int) == ids
            assert f.train


class TestSynthetic:
    def test_bit_identical(self):
        a = synth_dataset(5, 2, 20)
        b = synth_dataset(5, 2, 20)
        for x, y in zip(a, b):
            assert x.recording.samples.tobytes() == y.recording.samples.tobytes()
            assert x.labels == y.labels
        assert synth_dataset(6, 1, 20)[0].recording.samples.tobytes() != a[0].recording.samples.tobytes()

    def test_hypnogram_cycle(self):
        h = synth_hypnogram(np.random.default_rng(0), 300)
        changes = h[np.r_[True, h[1:] != h[:-1]]]
        cycle = [W, N1, N2, N3, N2, REM]
        np.testing.assert_array_equal(changes, (cycle * 10)[: len(changes)])

    def test_stage_rhythms(self):
        rng = np.random.default_rng(1)

        def power(x, lo, hi):
            psd = np.abs(np.fft.rfft(x)) ** 2
            f = np.fft.rfftfreq(x.size, 1 / FS)
            return psd[(f >= lo) & (f < hi)].sum()

        n3 = synth_epoch(rng, N3)
        wake = synth_epoch(rng, W)
        assert power(n3, 0.5, 2) > 10 * power(n3, 8, 13)
        assert power(wake, 8, 13) > 10 * power(wake, 0.5, 2)
        with pytest.raises(ValueError):
            synth_epoch(rng, 7)

    def test_no_subjects(self):
        with pytest.raises(ValueError):
            synth_dataset(0, 0, 10)


class TestDatasetDirectory:
    @pytest.mark.parametrize("fmt", ["raw", "edf"])
    def test_write_then_load(self, tmp_path, fmt):
        items = synth_dataset(2, 3, 12)
        write_dataset(tmp_path, items, fmt)
        data = load_dataset(tmp_path, fmt, trim=False)
        assert sorted(data) == ["synth000", "synth001", "synth002"]
        subject = data["synth001"]
        assert subject.epochs.shape == (12, EPOCH_SAMPLES)
        want = preprocess(items[1].recording, items[1].labels, trim=False)
        np.testing.assert_array_equal(subject.labels, want.labels)
        tol = 1e-4 if fmt == "raw" else 0.05
        np.testing.assert_allclose(subject.epochs, want.epochs, atol=tol * np.abs(want.epochs).max())

    def test_missing_root(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope")
        with pytest.raises(ValueError):
            load_dataset(tmp_path)

    def test_epoching(self):
        with pytest.raises(ValueError):
            epoch_signal(np.zeros(EPOCH_SAMPLES), 2)
        assert epoch_signal(np.zeros(2 * EPOCH_SAMPLES + 5), 2).shape == (2, EPOCH_SAMPLES)

    def test_preprocess_drops_unscored_epochs(self):
        x = np.repeat(np.arange(4.0), EPOCH_SAMPLES)
        out = preprocess(Recording("s", x, FS), ["N2", "MOVEMENT", "N3", "REM"], trim=False)
        np.testing.assert_array_equal(out.epochs[:, 0], [0.0, 2.0, 3.0])
        np.testing.assert_array_equal(out.labels, [N2, N3, REM])
