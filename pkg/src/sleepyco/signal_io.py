"""Recording ingestion (EDF subset, raw float32, synthetic), preprocessing, epoching and splits."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal as sps

from .config import STAGES

FS = 100
EPOCH_SECONDS = 30
EPOCH_SAMPLES = FS * EPOCH_SECONDS
WAKE_CAP = 60  # 30 min of 30-s epochs

STAGE_INDEX = {name: i for i, name in enumerate(STAGES)}
W, N1, N2, N3, REM = range(len(STAGES))

# Raw annotation -> stage name; None marks epochs that are dropped.
_LABEL_MAP = {
    "W": "W",
    "N1": "N1",
    "N2": "N2",
    "N3": "N3",
    "N4": "N3",
    "REM": "REM",
    "MOVEMENT": None,
    "UNKNOWN": None,
}


@dataclass
class Recording:
    """One single-channel EEG recording in microvolts."""

    subject_id: str
    samples: np.ndarray
    sample_rate: float
    channel: str = "EEG"

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError(f"{self.subject_id}: samples must be a non-empty 1-D array")
        if not self.sample_rate > 0:
            raise ValueError(f"{self.subject_id}: sample rate must be positive, got {self.sample_rate}")


@dataclass
class EpochSequence:
    """L consecutive epochs ending in the target epoch whose stage is ``label``."""

    signal: np.ndarray
    label: int
    L: int
    subject_id: str = ""

    def __post_init__(self) -> None:
        if self.signal.shape != (EPOCH_SAMPLES * self.L,):
            raise ValueError(f"sequence must hold {EPOCH_SAMPLES * self.L} samples, got {self.signal.shape}")
        if not 0 <= self.label < len(STAGES):
            raise ValueError(f"label {self.label} outside the {len(STAGES)}-stage set")


@dataclass
class SubjectEpochs:
    """A preprocessed recording cut into 30-s epochs with integer stage labels."""

    subject_id: str
    epochs: np.ndarray  # n x 3000
    labels: np.ndarray  # n

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class FoldSplit:
    fold_index: int
    k: int
    train: List[str]
    validation: List[str]
    test: List[str]

    def __post_init__(self) -> None:
        sets = [set(self.train), set(self.validation), set(self.test)]
        if sum(map(len, sets)) != len(set().union(*sets)):
            raise ValueError(f"fold {self.fold_index}: subject roles overlap")


# ---------------------------------------------------------------------------
# EDF


class EDFError(ValueError):
    """Base class for EDF parsing failures."""


class EDFTruncatedError(EDFError):
    pass


class EDFFieldError(EDFError):
    pass


class ChannelNotFoundError(EDFError, KeyError):
    def __str__(self) -> str:  # KeyError would otherwise repr() the message
        return str(self.args[0])


_GLOBAL_FIELDS = [
    ("version", 8),
    ("patient", 80),
    ("recording", 80),
    ("startdate", 8),
    ("starttime", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
]
_SIGNAL_FIELDS = [
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
]


def _number(text: str, name: str, kind=float):
    try:
        return kind(text.strip())
    except ValueError:
        raise EDFFieldError(f"EDF header field {name!r} is not numeric: {text!r}") from None


def read_edf_header(data: bytes) -> dict:
    """Parse the fixed-width ASCII header (256 bytes + 256 per signal)."""
    if len(data) < 256:
        raise EDFTruncatedError(f"EDF header needs 256 bytes, got {len(data)}")
    header: dict = {}
    pos = 0
    for name, width in _GLOBAL_FIELDS:
        header[name] = data[pos : pos + width].decode("ascii", errors="replace")
        pos += width
    ns = _number(header["n_signals"], "n_signals", int)
    if ns < 1:
        raise EDFFieldError(f"EDF declares {ns} signals")
    header["n_signals"] = ns
    header["n_records"] = _number(header["n_records"], "n_records", int)
    header["record_duration"] = _number(header["record_duration"], "record_duration")
    header["header_bytes"] = _number(header["header_bytes"], "header_bytes", int)
    if len(data) < 256 + 256 * ns:
        raise EDFTruncatedError(f"EDF header for {ns} signals needs {256 + 256 * ns} bytes, got {len(data)}")
    signals: List[dict] = [{} for _ in range(ns)]
    for name, width in _SIGNAL_FIELDS:
        for sig in signals:
            sig[name] = data[pos : pos + width].decode("ascii", errors="replace")
            pos += width
    for i, sig in enumerate(signals):
        sig["label"] = sig["label"].strip()
        for name in ("physical_min", "physical_max"):
            sig[name] = _number(sig[name], f"{name}[{i}]")
        for name in ("digital_min", "digital_max", "samples_per_record"):
            sig[name] = _number(sig[name], f"{name}[{i}]", int)
        if sig["digital_max"] == sig["digital_min"]:
            raise EDFFieldError(f"signal {sig['label']!r} has an empty digital range")
    header["signals"] = signals
    return header


def read_edf(data: bytes, channel: Optional[str] = None, subject_id: str = "") -> Recording:
    """Decode one channel of an EDF file to physical units.

    With ``channel`` unset the file must contain exactly one non-annotation signal.
    """
    header = read_edf_header(data)
    signals = header["signals"]
    labels = [s["label"] for s in signals]
    if channel:
        if channel not in labels:
            raise ChannelNotFoundError(f"channel {channel!r} not found; available: {labels}")
        idx = labels.index(channel)
    else:
        candidates = [i for i, lab in enumerate(labels) if lab != "EDF Annotations"]
        if len(candidates) != 1:
            raise ChannelNotFoundError(f"several signals present, choose a channel from {labels}")
        idx = candidates[0]
    counts = [s["samples_per_record"] for s in signals]
    record_len = sum(counts)
    start = 256 + 256 * len(signals)
    body = data[start:]
    n_records = header["n_records"]
    if n_records < 0:  # -1 means "unknown" in the EDF format
        n_records = len(body) // (2 * record_len)
    if len(body) < 2 * record_len * n_records:
        raise EDFTruncatedError(f"EDF data holds {len(body)} bytes, header promises {2 * record_len * n_records}")
    raw = np.frombuffer(body, dtype="<i2", count=record_len * n_records).reshape(n_records, record_len)
    offset = sum(counts[:idx])
    digital = raw[:, offset : offset + counts[idx]].reshape(-1).astype(np.float64)
    sig = signals[idx]
    gain = (sig["physical_max"] - sig["physical_min"]) / (sig["digital_max"] - sig["digital_min"])
    physical = (digital - sig["digital_min"]) * gain + sig["physical_min"]
    rate = counts[idx] / header["record_duration"]
    return Recording(subject_id, physical, rate, sig["label"])


def _field(value, width: int) -> bytes:
    text = value if isinstance(value, str) else _format_number(value, width)
    if len(text) > width:
        raise ValueError(f"{text!r} does not fit an EDF field of width {width}")
    return text.ljust(width).encode("ascii")


def _format_number(value, width: int) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if value.is_integer() and len(str(int(value))) <= width:
        return str(int(value))
    for decimals in range(width, -1, -1):
        text = f"{value:.{decimals}f}"
        if len(text) <= width:
            return text
    raise ValueError(f"{value} does not fit an EDF field of width {width}")


def _outward(value: float, width: int, up: bool) -> float:
    """Round ``value`` to what fits in ``width`` characters, away from the data range."""
    text = _format_number(value, width)
    decimals = len(text.split(".")[1]) if "." in text else 0
    step = 10.0 ** -decimals
    rounded = (math.ceil if up else math.floor)(value / step) * step
    return float(_format_number(rounded, width))


def write_edf(rec: Recording, record_seconds: float = 30.0) -> bytes:
    """Encode a recording as a single-signal EDF file with 16-bit samples.

    The trailing record is zero-padded; the physical range is the data range
    widened just enough to be printable in the 8-character header fields.
    """
    per_record = rec.sample_rate * record_seconds
    if not float(per_record).is_integer():
        raise ValueError("sample rate x record duration must be a whole number of samples")
    per_record = int(per_record)
    n_records = math.ceil(rec.samples.size / per_record)
    lo = _outward(float(rec.samples.min()), 8, up=False)
    hi = _outward(float(rec.samples.max()), 8, up=True)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    dmin, dmax = -32768, 32767
    digital = np.round((rec.samples - lo) / (hi - lo) * (dmax - dmin) + dmin)
    padded = np.zeros(n_records * per_record, dtype="<i2")
    padded[: digital.size] = np.clip(digital, dmin, dmax).astype("<i2")
    head = b"".join([
        _field("0", 8),
        _field(rec.subject_id or "X", 80),
        _field("Startdate X", 80),
        _field("01.01.00", 8),
        _field("00.00.00", 8),
        _field(512, 8),
        _field("", 44),
        _field(n_records, 8),
        _field(record_seconds, 8),
        _field(1, 4),
        _field(rec.channel, 16),
        _field("", 80),
        _field("uV", 8),
        _field(lo, 8),
        _field(hi, 8),
        _field(dmin, 8),
        _field(dmax, 8),
        _field("", 80),
        _field(per_record, 8),
        _field("", 32),
    ])
    return head + padded.tobytes()


# ---------------------------------------------------------------------------
# raw float32 format

RAW_MAGIC = b"SPYR"


def write_raw(rec: Recording) -> bytes:
    """8-byte header (4-byte magic, little-endian uint32 sample rate) then float32 samples."""
    if not float(rec.sample_rate).is_integer():
        raise ValueError("raw format stores integer sample rates only")
    return RAW_MAGIC + struct.pack("<I", int(rec.sample_rate)) + rec.samples.astype("<f4").tobytes()


def read_raw(data: bytes, subject_id: str = "", channel: str = "EEG") -> Recording:
    if len(data) < 8:
        raise ValueError(f"raw signal needs an 8-byte header, got {len(data)} bytes")
    if data[:4] != RAW_MAGIC:
        raise ValueError(f"bad raw signal magic {data[:4]!r}")
    (rate,) = struct.unpack("<I", data[4:8])
    if (len(data) - 8) % 4:
        raise ValueError("raw payload is not a whole number of float32 samples")
    return Recording(subject_id, np.frombuffer(data[8:], dtype="<f4").astype(np.float64), rate, channel)


# ---------------------------------------------------------------------------
# preprocessing


def resample_100hz(rec: Recording) -> Recording:
    """Low-pass and decimate to 100 Hz; only integer ratios are supported."""
    if rec.sample_rate == FS:
        return rec
    ratio = rec.sample_rate / FS
    if rec.sample_rate < FS or not float(ratio).is_integer():
        raise ValueError(f"cannot resample {rec.sample_rate} Hz to {FS} Hz: ratio is not an integer")
    out = sps.resample_poly(rec.samples, 1, int(ratio))
    return Recording(rec.subject_id, out, FS, rec.channel)


def map_labels(raw_stages: Iterable[str]) -> Tuple[np.ndarray, np.ndarray]:
    """Stage indices for kept epochs, plus the keep-mask over the input.

    N4 merges into N3; MOVEMENT and UNKNOWN epochs are dropped.
    """
    stages, keep = [], []
    for i, raw in enumerate(raw_stages):
        key = str(raw).strip().upper()
        if key not in _LABEL_MAP:
            raise ValueError(f"unrecognised stage label {raw!r} at epoch {i}")
        name = _LABEL_MAP[key]
        keep.append(name is not None)
        if name is not None:
            stages.append(STAGE_INDEX[name])
    return np.asarray(stages, dtype=np.int64), np.asarray(keep, dtype=bool)


def trim_wake(stages: np.ndarray, epochs: np.ndarray, cap: int = WAKE_CAP) -> Tuple[np.ndarray, np.ndarray]:
    """Keep at most ``cap`` wake epochs before the first and after the last sleep epoch."""
    stages = np.asarray(stages)
    sleep = np.flatnonzero(stages != W)
    if sleep.size == 0:
        raise ValueError("recording contains only wake epochs; nothing to trim around")
    start = max(sleep[0] - cap, 0)
    stop = min(sleep[-1] + cap + 1, len(stages))
    return stages[start:stop], epochs[start:stop]


def epoch_signal(samples: np.ndarray, n_epochs: int) -> np.ndarray:
    """Cut the first ``n_epochs`` 30-s epochs of a 100 Hz signal (n x 3000)."""
    needed = n_epochs * EPOCH_SAMPLES
    if samples.size < needed:
        raise ValueError(f"signal holds {samples.size} samples, {n_epochs} epochs need {needed}")
    return samples[:needed].reshape(n_epochs, EPOCH_SAMPLES)


def preprocess(rec: Recording, raw_labels: Sequence[str], trim: bool = True) -> SubjectEpochs:
    """Resample, epoch, map labels (dropping unscored epochs) and optionally trim wake."""
    rec = resample_100hz(rec)
    epochs = epoch_signal(rec.samples, len(raw_labels))
    stages, keep = map_labels(raw_labels)
    epochs = epochs[keep]
    if trim:
        stages, epochs = trim_wake(stages, epochs)
    return SubjectEpochs(rec.subject_id, np.ascontiguousarray(epochs), stages)


def sequence_windows(n_epochs: int, L: int, pad_head: str = "repeat") -> np.ndarray:
    """Epoch indices of every sequence window (n_targets x L); the target is the last column.

    ``pad_head="repeat"`` scores the first L-1 targets by repeating epoch 0 on
    the left; ``"skip"`` starts at the first full window.
    """
    if L < 1:
        raise ValueError(f"sequence length must be >= 1, got {L}")
    if pad_head not in ("repeat", "skip"):
        raise ValueError(f"pad_head must be 'repeat' or 'skip', got {pad_head!r}")
    first = 0 if pad_head == "repeat" else L - 1
    targets = np.arange(first, n_epochs)
    return np.maximum(targets[:, None] - np.arange(L - 1, -1, -1)[None, :], 0)


def make_sequences(epochs: np.ndarray, labels: np.ndarray, L: int, pad_head: str = "repeat",
                   subject_id: str = "") -> List[EpochSequence]:
    windows = sequence_windows(len(labels), L, pad_head)
    return [
        EpochSequence(epochs[w].reshape(-1), int(labels[w[-1]]), L, subject_id)
        for w in windows
    ]


def kfold_split(subject_ids: Sequence[str], k: int, n_val: int, seed: int) -> List[FoldSplit]:
    """Rotate contiguous test chunks over ``subject_ids``; draw validation subjects by seeded shuffle."""
    ids = list(subject_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("subject ids must be unique")
    if k < 2 or n_val < 1:
        raise ValueError(f"need k >= 2 and n_val >= 1, got k={k}, n_val={n_val}")
    largest_test = math.ceil(len(ids) / k)
    if len(ids) < k or len(ids) - largest_test - n_val < 1:
        raise ValueError(
            f"{len(ids)} subjects cannot fill {k} test folds, {n_val} validation subjects and a training set"
        )
    folds = []
    for i, chunk in enumerate(np.array_split(np.arange(len(ids)), k)):
        test = [ids[j] for j in chunk]
        rest = [s for s in ids if s not in test]
        order = np.random.default_rng([seed, i]).permutation(len(rest))
        val = [rest[j] for j in order[:n_val]]
        train = [s for s in rest if s not in val]
        folds.append(FoldSplit(i, k, train, val, test))
    return folds


# ---------------------------------------------------------------------------
# synthetic recordings

_CYCLE = (W, N1, N2, N3, N2, REM)
_DWELL = {W: (4, 12), N1: (3, 9), N2: (6, 18), N3: (6, 16), REM: (6, 16)}


def synth_hypnogram(rng: np.random.Generator, n_epochs: int) -> np.ndarray:
    """Stage sequence cycling W -> N1 -> N2 -> N3 -> N2 -> REM with random dwell times."""
    out: List[int] = []
    step = 0
    while len(out) < n_epochs:
        stage = _CYCLE[step % len(_CYCLE)]
        lo, hi = _DWELL[stage]
        out.extend([stage] * int(rng.integers(lo, hi + 1)))
        step += 1
    return np.asarray(out[:n_epochs], dtype=np.int64)


def _tones(rng, t, band, amplitude, n=3):
    """Sum of ``n`` sinusoids with random frequencies inside ``band`` and random phases."""
    freqs = rng.uniform(band[0], band[1], n)
    phases = rng.uniform(0, 2 * np.pi, n)
    amps = amplitude * rng.uniform(0.6, 1.0, n) / np.sqrt(n)
    return (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)


def _spindles(rng, t, amplitude):
    out = np.zeros_like(t)
    for _ in range(int(rng.integers(1, 4))):
        center = rng.uniform(2.0, EPOCH_SECONDS - 2.0)
        width = rng.uniform(0.25, 0.6)
        freq = rng.uniform(12.0, 14.0)
        envelope = np.exp(-0.5 * ((t - center) / width) ** 2)
        out += amplitude * envelope * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    return out


def _sawtooth(rng, t, band, amplitude):
    freq = rng.uniform(*band)
    return amplitude * sps.sawtooth(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi), width=0.8)


def synth_epoch(rng: np.random.Generator, stage: int, noise: float = 8.0) -> np.ndarray:
    """One 30-s, 100 Hz epoch whose dominant rhythms follow the stage's frequency band."""
    t = np.arange(EPOCH_SAMPLES) / FS
    if stage == W:
        x = _tones(rng, t, (8.0, 13.0), 30.0) + _tones(rng, t, (14.0, 30.0), 6.0)
    elif stage == N1:
        x = _tones(rng, t, (4.0, 7.0), 30.0)
    elif stage == N2:
        x = _tones(rng, t, (4.0, 7.0), 25.0) + _spindles(rng, t, 30.0)
    elif stage == N3:
        x = _tones(rng, t, (0.5, 2.0), 80.0) + _tones(rng, t, (4.0, 7.0), 8.0)
    elif stage == REM:
        x = _sawtooth(rng, t, (2.0, 6.0), 20.0) + _tones(rng, t, (4.0, 7.0), 20.0)
    else:
        raise ValueError(f"unknown stage index {stage}")
    return x + rng.normal(0.0, noise, EPOCH_SAMPLES)


@dataclass
class LabeledRecording:
    recording: Recording
    labels: List[str] = field(default_factory=list)


def synth_subject(seed: int, index: int, n_epochs: int, noise: float = 8.0) -> LabeledRecording:
    """Subject ``index`` of the synthetic cohort; its stream is keyed by (seed, index)."""
    rng = np.random.default_rng([seed, index])
    stages = synth_hypnogram(rng, n_epochs)
    gain = rng.uniform(0.8, 1.25)
    samples = np.concatenate([synth_epoch(rng, s, noise) for s in stages]) * gain
    sid = f"synth{index:03d}"
    return LabeledRecording(Recording(sid, samples, FS, "EEG"), [STAGES[s] for s in stages])


def synth_dataset(seed: int, n_subjects: int, epochs_per_subject: int, noise: float = 8.0) -> List[LabeledRecording]:
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    return [synth_subject(seed, i, epochs_per_subject, noise) for i in range(n_subjects)]


# ---------------------------------------------------------------------------
# dataset directories: <root>/<subject_id>/signal.{edf|raw} + labels.csv


def write_labels(path: Path, labels: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch_index", "stage"])
        writer.writerows(enumerate(labels))


def read_labels(path: Path) -> List[str]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch_index", "stage"]:
            raise ValueError(f"{path}: expected header epoch_index,stage, got {header}")
        rows = [(int(i), stage) for i, stage in reader]
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: epoch indices must run 0..n-1 in order")
    return [stage for _, stage in rows]


def write_dataset(root, items: Iterable[LabeledRecording], fmt: str = "raw") -> Path:
    root = Path(root)
    for item in items:
        sub = root / item.recording.subject_id
        sub.mkdir(parents=True, exist_ok=True)
        if fmt == "raw":
            (sub / "signal.raw").write_bytes(write_raw(item.recording))
        elif fmt == "edf":
            (sub / "signal.edf").write_bytes(write_edf(item.recording))
        else:
            raise ValueError(f"unknown signal format {fmt!r}")
        write_labels(sub / "labels.csv", item.labels)
    return root


def list_subjects(root) -> List[str]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    return sorted(p.name for p in root.iterdir() if (p / "labels.csv").is_file())


def read_subject(root, subject_id: str, fmt: str = "raw", channel: str = "") -> LabeledRecording:
    sub = Path(root) / subject_id
    if fmt == "raw":
        rec = read_raw((sub / "signal.raw").read_bytes(), subject_id)
    elif fmt == "edf":
        rec = read_edf((sub / "signal.edf").read_bytes(), channel or None, subject_id)
    else:
        raise ValueError(f"unknown signal format {fmt!r}")
    return LabeledRecording(rec, read_labels(sub / "labels.csv"))


def load_dataset(root, fmt: str = "raw", channel: str = "", trim: bool = True,
                 subjects: Optional[Sequence[str]] = None) -> Dict[str, SubjectEpochs]:
    """Read and preprocess every subject directory under ``root``."""
    ids = list(subjects) if subjects is not None else list_subjects(root)
    if not ids:
        raise ValueError(f"no subject directories with labels.csv under {root}")
    out = {}
    for sid in ids:
        item = read_subject(root, sid, fmt, channel)
        out[sid] = preprocess(item.recording, item.labels, trim)
    return out
