"""WAV input/output and acoustic feature extraction.

Audio enters as RIFF/WAVE PCM16 mono files and leaves as feature
matrices: log-mel spectrogram frames, strided raw-waveform patches, or
externally precomputed features read from a small binary container.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadHeader,
    NonFinite,
    NotWav,
    ShapeMismatch,
    TooShort,
    TruncatedFile,
    UnsupportedFormat,
)

FEATURE_MAGIC = b"ATFX"
FEATURE_VERSION = 1

_INT16_SCALE = 32768.0


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ShapeMismatch("waveform must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise NonFinite("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise UnsupportedFormat(f"bad sample rate {self.sample_rate}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 2048
    hop: int = 512
    window: str = "hann"
    n_mels: int = 64
    fmin: float = 20.0
    fmax: float = 22050.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_fft <= 0 or (self.n_fft & (self.n_fft - 1)) != 0:
            raise ShapeMismatch(f"n_fft must be a positive power of two, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ShapeMismatch(f"hop must be in [1, n_fft], got {self.hop}")
        if self.window != "hann":
            raise UnsupportedFormat(f"unknown window {self.window!r}")
        if not 1 <= self.n_mels <= self.n_fft // 2 + 1:
            raise ShapeMismatch(f"n_mels must be in [1, n_fft/2+1], got {self.n_mels}")
        if not 0 <= self.fmin < self.fmax:
            raise ShapeMismatch(f"need 0 <= fmin < fmax, got {self.fmin}, {self.fmax}")
        if self.log_floor <= 0:
            raise ShapeMismatch("log_floor must be positive")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray
    origin: str = "external"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeMismatch(f"feature matrix must be 2-D and non-empty, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFinite("feature matrix contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# WAV I/O


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFile(f"unexpected end of file while reading {what}")
    return data


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE file holding 16-bit PCM mono samples.

    Samples are scaled by 1/32768 into [-1, 1).
    """
    with open(path, "rb") as fh:
        riff = fh.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise NotWav(f"{path}: not a RIFF/WAVE file")
        fmt = None
        data = None
        while True:
            head = fh.read(8)
            if len(head) == 0:
                break
            if len(head) < 8:
                raise TruncatedFile(f"{path}: truncated chunk header")
            chunk_id, size = struct.unpack("<4sI", head)
            payload = _read_exact(fh, size, f"{chunk_id!r} chunk")
            if size % 2 == 1:  # RIFF chunks are word-aligned
                fh.read(1)
            if chunk_id == b"fmt ":
                fmt = payload
            elif chunk_id == b"data":
                data = payload
                if fmt is not None:
                    break
        if fmt is None or data is None:
            raise TruncatedFile(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise TruncatedFile(f"{path}: short fmt chunk")
    audio_format, channels, sample_rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format != 1:
        raise UnsupportedFormat(f"{path}: compression code {audio_format}, expected PCM")
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, expected mono")
    if bits != 16:
        raise UnsupportedFormat(f"{path}: {bits}-bit samples, expected 16")
    if len(data) % 2 != 0:
        raise TruncatedFile(f"{path}: data chunk holds a partial sample")
    if len(data) == 0:
        raise TruncatedFile(f"{path}: empty data chunk")
    ints = np.frombuffer(data, dtype="<i2")
    return Waveform(ints.astype(np.float64) / _INT16_SCALE, sample_rate)


def write_wav(path, wave: Waveform) -> None:
    """Write 16-bit PCM mono; samples are clipped and rounded to int16."""
    ints = np.clip(np.rint(wave.samples * _INT16_SCALE), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,
        1,
        wave.sample_rate,
        wave.sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


# ---------------------------------------------------------------------------
# Spectrogram features


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filters over FFT bins, each normalized to unit sum.

    Returns an (n_mels, n_fft//2 + 1) matrix.
    """
    n_bins = n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * (sample_rate / n_fft)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    filters = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_hz - lo) / (mid - lo)
        down = (hi - bin_hz) / (hi - mid)
        tri = np.maximum(0.0, np.minimum(up, down))
        total = tri.sum()
        if total > 0:
            filters[m] = tri / total
    return filters


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, n_fft: int, hop: int) -> int:
    return 1 + (n_samples - n_fft) // hop


def stft_power(wave: Waveform, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Power spectrogram |STFT|^2, shape (T, n_fft//2 + 1). No centering."""
    n = len(wave.samples)
    if n < cfg.n_fft:
        raise TooShort(f"need at least {cfg.n_fft} samples, got {n}")
    t_frames = frame_count(n, cfg.n_fft, cfg.hop)
    window = _hann_periodic(cfg.n_fft)
    starts = np.arange(t_frames) * cfg.hop
    frames = wave.samples[starts[:, None] + np.arange(cfg.n_fft)] * window
    spectrum = np.fft.rfft(frames, axis=1)
    return np.abs(spectrum) ** 2


def stft_logmel(wave: Waveform, cfg: StftConfig = StftConfig()) -> FeatureMatrix:
    """Log mel spectrogram: ln(mel-pooled power + log_floor)."""
    if wave.sample_rate != 44100:
        warnings.warn(
            f"processing {wave.sample_rate} Hz audio at its native rate",
            stacklevel=2,
        )
    power = stft_power(wave, cfg)
    fmax = min(cfg.fmax, wave.sample_rate / 2.0)
    filters = mel_filterbank(wave.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, fmax)
    mel = power @ filters.T
    return FeatureMatrix(np.log(mel + cfg.log_floor), origin="logmel")


def rawpatch(wave: Waveform, patch: int, stride: int) -> FeatureMatrix:
    """Strided raw-waveform patches: row t = samples[t*stride : t*stride+patch]."""
    if patch <= 0 or stride <= 0:
        raise ShapeMismatch("patch and stride must be positive")
    n = len(wave.samples)
    if n < patch:
        raise TooShort(f"need at least {patch} samples, got {n}")
    t_frames = frame_count(n, patch, stride)
    starts = np.arange(t_frames) * stride
    rows = wave.samples[starts[:, None] + np.arange(patch)]
    return FeatureMatrix(rows, origin="rawpatch")


# ---------------------------------------------------------------------------
# Feature file container


def write_features(path, matrix: FeatureMatrix) -> None:
    values = matrix.values.astype("<f4")
    if not np.all(np.isfinite(values)):
        raise NonFinite("feature matrix overflows float32")
    t_frames, n_dims = values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, t_frames, n_dims))
        fh.write(values.tobytes(order="C"))


def load_external_features(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != FEATURE_MAGIC:
            raise BadHeader(f"{path}: not a feature file")
        version, t_frames, n_dims = struct.unpack("<III", head[4:16])
        if version != FEATURE_VERSION:
            raise BadHeader(f"{path}: unsupported feature file version {version}")
        if t_frames < 1 or n_dims < 1:
            raise BadHeader(f"{path}: empty matrix {t_frames}x{n_dims}")
        payload = fh.read()
    expected = t_frames * n_dims * 4
    if len(payload) != expected:
        raise ShapeMismatch(
            f"{path}: header declares {t_frames}x{n_dims} ({expected} bytes), payload holds {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(t_frames, n_dims)
    if not np.all(np.isfinite(values)):
        raise NonFinite(f"{path}: payload contains non-finite values")
    return FeatureMatrix(values.astype(np.float64), origin="external")
