"""Trial datasets: ISF container I/O, band-pass preprocessing and a synthetic generator.

ISF layout (all integers little-endian)::

    b"ISF1"                       magic
    u16   version (= 1)
    u32   sampling rate in Hz
    u8    channel count C
    C x { u8 byte length, UTF-8 channel name }
    u32   trial count
    per trial: u8 class label, u32 samples per channel S,
               C * S float64 samples, channel-major

The subject id is not stored; it is taken from the file name stem.
"""

from __future__ import annotations

import math
import struct
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, RejectedInputError, ValidationError

MAGIC = b"ISF1"
VERSION = 1
CLASS_NAMES = ("up", "down", "right", "left", "forward", "backward")
CHANNEL_NAMES = ("F3", "F4", "C3", "C4", "P3", "P4")
SAMPLING_RATE = 128
TRIAL_SAMPLES = 512
TRIALS_PER_CLASS = 40


class DatasetWarning(UserWarning):
    """A dataset deviates from the expected recording protocol."""


@dataclass
class Trial:
    data: np.ndarray
    label: int
    subject: str = ""


@dataclass
class TrialSet:
    subject: str
    sampling_rate: int
    channel_names: list[str]
    trials: list[Trial] = field(default_factory=list)

    @property
    def X(self) -> np.ndarray:
        if not self.trials:
            return np.zeros((0, len(self.channel_names), TRIAL_SAMPLES))
        return np.stack([t.data for t in self.trials])

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.trials)

    def with_labels(self, labels) -> "TrialSet":
        trials = [Trial(t.data, int(lab), t.subject) for t, lab in zip(self.trials, labels)]
        return TrialSet(self.subject, self.sampling_rate, list(self.channel_names), trials)


def validate_trialset(ts: TrialSet, n_samples: int | None = TRIAL_SAMPLES) -> list[str]:
    """Raise on hard violations; return soft deviations from the protocol."""
    n_ch = len(ts.channel_names)
    for i, t in enumerate(ts.trials):
        if not 0 <= t.label < len(CLASS_NAMES):
            raise ValidationError(f"trial {i}: label {t.label} outside 0..{len(CLASS_NAMES) - 1}")
        if t.data.ndim != 2 or t.data.shape[0] != n_ch:
            raise ValidationError(f"trial {i}: shape {t.data.shape} does not have {n_ch} channels")
        if n_samples is not None and t.data.shape[1] != n_samples:
            raise ValidationError(f"trial {i}: {t.data.shape[1]} samples, expected {n_samples}")
        if not np.isfinite(t.data).all():
            raise ValidationError(f"trial {i}: non-finite samples")
    issues = []
    if ts.sampling_rate != SAMPLING_RATE:
        issues.append(f"sampling rate {ts.sampling_rate} Hz, expected {SAMPLING_RATE} Hz")
    if tuple(ts.channel_names) != CHANNEL_NAMES:
        issues.append(f"channels {list(ts.channel_names)}, expected {list(CHANNEL_NAMES)}")
    counts = Counter(t.label for t in ts.trials)
    for c in range(len(CLASS_NAMES)):
        if counts.get(c, 0) != TRIALS_PER_CLASS:
            issues.append(f"class {c} ({CLASS_NAMES[c]}) has {counts.get(c, 0)} trials, "
                          f"expected {TRIALS_PER_CLASS}")
    return issues


# --- ISF I/O ---------------------------------------------------------------

def encode_trialset(ts: TrialSet) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, int(ts.sampling_rate))]
    if len(ts.channel_names) > 255:
        raise RejectedInputError("at most 255 channels fit in an ISF header")
    parts.append(struct.pack("<B", len(ts.channel_names)))
    for name in ts.channel_names:
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise RejectedInputError(f"channel name {name!r} longer than 255 bytes")
        parts.append(struct.pack("<B", len(raw)) + raw)
    parts.append(struct.pack("<I", len(ts.trials)))
    n_ch = len(ts.channel_names)
    for i, t in enumerate(ts.trials):
        data = np.asarray(t.data, dtype="<f8")
        if data.ndim != 2 or data.shape[0] != n_ch:
            raise RejectedInputError(f"trial {i} has shape {data.shape}, expected ({n_ch}, S)")
        if not 0 <= t.label <= 255:
            raise RejectedInputError(f"trial {i} label {t.label} does not fit in u8")
        parts.append(struct.pack("<BI", t.label, data.shape[1]))
        parts.append(np.ascontiguousarray(data).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_trialset(buf: bytes, subject: str = "", n_samples: int | None = TRIAL_SAMPLES) -> TrialSet:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not an ISF file", 0)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"unsupported ISF version {version}", 4)
    (fs,) = r.unpack("<I", "sampling rate")
    (n_ch,) = r.unpack("<B", "channel count")
    names = []
    for c in range(n_ch):
        (length,) = r.unpack("<B", f"channel {c} name length")
        start = r.pos
        try:
            names.append(r.take(length, f"channel {c} name").decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError(f"channel {c} name is not UTF-8", start) from None
    (count,) = r.unpack("<I", "trial count")
    trials = []
    for i in range(count):
        label_at = r.pos
        label, samples = r.unpack("<BI", f"trial {i} header")
        if not 0 <= label < len(CLASS_NAMES):
            raise ValidationError(f"trial {i}: label {label} outside 0..5 (byte offset {label_at})")
        if n_samples is not None and samples != n_samples:
            raise FormatError(f"trial {i} has {samples} samples per channel, expected {n_samples}",
                              label_at + 1)
        raw = r.take(8 * n_ch * samples, f"trial {i} samples")
        data = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(n_ch, samples)
        trials.append(Trial(data, label, subject))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last trial", r.pos)
    return TrialSet(subject, fs, names, trials)


def save_trialset(ts: TrialSet, path) -> None:
    payload = encode_trialset(ts)
    Path(path).write_bytes(payload)


def load_trialset(path, n_samples: int | None = TRIAL_SAMPLES, warn: bool = True) -> TrialSet:
    """Read and validate an ISF file.

    ``n_samples=None`` accepts any trial length (raw recordings awaiting
    preprocessing). Protocol deviations are reported as :class:`DatasetWarning`.
    """
    path = Path(path)
    ts = decode_trialset(path.read_bytes(), subject=path.stem, n_samples=n_samples)
    issues = validate_trialset(ts, n_samples)
    if warn:
        for msg in issues:
            warnings.warn(f"{path.name}: {msg}", DatasetWarning, stacklevel=2)
    return ts


# --- FIR band-pass and decimation ------------------------------------------

@dataclass(frozen=True)
class FirFilter:
    coefficients: np.ndarray
    low: float
    high: float
    fs: float

    @property
    def taps(self) -> int:
        return len(self.coefficients)

    def response(self, freqs) -> np.ndarray:
        """Complex frequency response at ``freqs`` (Hz)."""
        freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
        n = np.arange(self.taps)
        return np.exp(-2j * np.pi * np.outer(freqs / self.fs, n)) @ self.coefficients

    def gain_db(self, freqs) -> np.ndarray:
        return 20.0 * np.log10(np.maximum(np.abs(self.response(freqs)), 1e-300))


def _lowpass(cutoff: float, fs: float, taps: int, window: np.ndarray) -> np.ndarray:
    n = np.arange(taps) - (taps - 1) / 2
    fc = cutoff / fs
    h = 2.0 * fc * np.sinc(2.0 * fc * n) * window
    return h / h.sum()


def design_fir_bandpass(low: float, high: float, fs: float, taps: int = 513) -> FirFilter:
    """Hamming-windowed sinc band-pass.

    Built as the difference of two unit-DC-gain low-pass kernels, so the DC
    gain is exactly zero and the passband gain is close to one.
    """
    if taps < 3 or taps % 2 == 0:
        raise RejectedInputError(f"taps must be odd and >= 3, got {taps}")
    if not 0 < low < high < fs / 2:
        raise RejectedInputError(f"need 0 < low < high < fs/2, got low={low}, high={high}, fs={fs}")
    window = np.hamming(taps)
    h = _lowpass(high, fs, taps, window) - _lowpass(low, fs, taps, window)
    # force exact symmetry against rounding in the two kernels
    h = 0.5 * (h + h[::-1])
    return FirFilter(h, float(low), float(high), float(fs))


def identity_filter(fs: float) -> FirFilter:
    return FirFilter(np.ones(1), 0.0, fs / 2, float(fs))


def filter_and_decimate(signal, filt: FirFilter, factor: int) -> np.ndarray:
    """Delay-compensated FIR filtering along the last axis, then keep every ``factor``-th sample."""
    if factor < 1 or filt.fs % factor != 0:
        raise RejectedInputError(f"sampling rate {filt.fs} not divisible by factor {factor}")
    x = np.asarray(signal, dtype=np.float64)
    delay = (filt.taps - 1) // 2
    n = x.shape[-1]
    rows = x.reshape(-1, n)
    out = np.empty_like(rows)
    for i, row in enumerate(rows):
        out[i] = np.convolve(row, filt.coefficients, mode="full")[delay:delay + n]
    return out.reshape(x.shape)[..., ::factor]


def segment_trial(recording, cue_offset: float = 4.0, fs: float = SAMPLING_RATE,
                  n_samples: int = TRIAL_SAMPLES) -> np.ndarray:
    """Cut ``n_samples`` per channel starting ``cue_offset`` seconds in.

    The default offset skips the 2 s ready and 2 s cue intervals.
    """
    rec = np.asarray(recording, dtype=np.float64)
    if rec.ndim != 2:
        raise RejectedInputError("recording must be a channels x samples matrix")
    start = int(round(cue_offset * fs))
    if start < 0 or start + n_samples > rec.shape[1]:
        raise RejectedInputError(
            f"window [{start}, {start + n_samples}) exceeds recording of {rec.shape[1]} samples")
    return rec[:, start:start + n_samples].copy()


def preprocess_trialset(raw: TrialSet, taps: int = 513, low: float = 2.0, high: float = 40.0,
                        target_rate: int = SAMPLING_RATE, cue_offset: float | None = 4.0
                        ) -> TrialSet:
    """Band-pass, decimate to ``target_rate`` and (optionally) cut the imagination window."""
    if raw.sampling_rate % target_rate:
        raise RejectedInputError(f"{raw.sampling_rate} Hz is not a multiple of {target_rate} Hz")
    factor = raw.sampling_rate // target_rate
    filt = design_fir_bandpass(low, high, raw.sampling_rate, taps)
    trials = []
    for t in raw.trials:
        x = filter_and_decimate(t.data, filt, factor)
        if cue_offset is not None:
            x = segment_trial(x, cue_offset, target_rate)
        trials.append(Trial(x, t.label, t.subject))
    return TrialSet(raw.subject, target_rate, list(raw.channel_names), trials)


# --- synthetic data --------------------------------------------------------

def _default_frequencies() -> tuple[tuple[float, ...], ...]:
    return ((4.0, 13.0), (6.0, 17.0), (8.0, 21.0), (10.0, 26.0), (12.0, 31.0), (15.0, 37.0))


def _default_gains() -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(round(1.0 + 0.5 * math.cos(2 * math.pi * (c + 2 * ch) / 6), 6)
                       for ch in range(6)) for c in range(6))


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 6
    trials_per_class: int = TRIALS_PER_CLASS
    n_channels: int = 6
    n_samples: int = TRIAL_SAMPLES
    sampling_rate: int = SAMPLING_RATE
    frequencies: tuple = field(default_factory=_default_frequencies)
    gains: tuple = field(default_factory=_default_gains)
    amplitude: float = 1.0
    noise_sd: float = 1.0
    seed: int = 0
    subject: str = "synthetic"

    def __post_init__(self):
        if self.n_classes < 1 or self.trials_per_class < 1:
            raise RejectedInputError("need at least one class and one trial per class")
        if self.n_classes > len(CLASS_NAMES):
            raise RejectedInputError(f"at most {len(CLASS_NAMES)} classes")
        if len(self.frequencies) < self.n_classes or len(self.gains) < self.n_classes:
            raise RejectedInputError("frequency and gain tables need one row per class")
        for c in range(self.n_classes):
            for f in self.frequencies[c]:
                if not 2.0 <= f <= 40.0:
                    raise RejectedInputError(f"class {c} frequency {f} Hz outside the 2-40 Hz band")
            if len(self.gains[c]) != self.n_channels:
                raise RejectedInputError(f"class {c} gain vector needs {self.n_channels} entries")
        if not self.noise_sd >= 0:
            raise RejectedInputError("noise_sd must be >= 0")


def synth_generate(config: SynthConfig = SynthConfig()) -> TrialSet:
    """Class-specific sinusoid mixtures scaled per channel, plus white Gaussian noise."""
    rng = np.random.default_rng(config.seed)
    t = np.arange(config.n_samples) / config.sampling_rate
    names = list(CHANNEL_NAMES[:config.n_channels]) + [
        f"CH{i}" for i in range(len(CHANNEL_NAMES), config.n_channels)]
    trials = []
    for c in range(config.n_classes):
        wave = config.amplitude * sum(np.sin(2 * np.pi * f * t) for f in config.frequencies[c])
        clean = np.outer(np.asarray(config.gains[c], dtype=np.float64), wave)
        for _ in range(config.trials_per_class):
            noise = rng.standard_normal(clean.shape) * config.noise_sd
            trials.append(Trial(clean + noise, c, config.subject))
    return TrialSet(config.subject, config.sampling_rate, names, trials)
