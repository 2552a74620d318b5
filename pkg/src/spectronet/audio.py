"""WAV decoding, resampling and mel-spectrogram features with an on-disk cache."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal as sps

CACHE_MAGIC = b"MELF"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIII")

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class AudioError(Exception):
    """Base class for audio decoding and feature errors."""


class WavReadError(AudioError):
    """File is missing, unreadable, or not a well-formed RIFF/WAVE stream."""


class UnsupportedEncodingError(AudioError):
    """WAV encoding other than 16-bit PCM or 32-bit float, or more than 2 channels."""


class EmptyAudioError(AudioError):
    """Audio payload contains no samples."""


class FeatureCacheError(AudioError):
    """Base class for feature cache format errors."""


class BadMagicError(FeatureCacheError):
    pass


class CacheVersionError(FeatureCacheError):
    pass


class TruncatedCacheError(FeatureCacheError):
    pass


class NormalizationError(AudioError):
    """Dimension mismatch or repeated normalization."""


@dataclass
class PcmSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"PcmSignal must be mono, got shape {self.samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("PcmSignal samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    """Framing and filter-bank settings.

    The defaults give 46.4 ms frames with a 23.2 ms hop at 22050 Hz and 64 mel
    bands. ``fmax=None`` means Nyquist. ``log_compress`` switches the output to
    ``log10(mel + epsilon)``.
    """

    sample_rate: int = 22050
    frame_length: int = 1024
    hop_length: int = 512
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float | None = None
    epsilon: float = 1e-8
    log_compress: bool = False

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not 1 <= self.hop_length <= self.frame_length:
            raise ValueError("need 1 <= hop_length <= frame_length")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not 0 <= self.fmin < self.upper_frequency <= self.sample_rate / 2:
            raise ValueError("need 0 <= fmin < fmax <= sample_rate / 2")

    @property
    def upper_frequency(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Spectrogram:
    """Frames x mel-bands matrix (time on axis 0), stored as float32."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_mels(self) -> int:
        return self.data.shape[1]


@dataclass
class Normalizer:
    """Per-band statistics fitted on training spectrograms.

    ``use_std`` divides by the standard deviation instead of the variance.
    """

    mean: np.ndarray
    variance: np.ndarray
    epsilon: float = 1e-8
    use_std: bool = False

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.variance = np.asarray(self.variance, dtype=np.float64)
        if self.mean.shape != self.variance.shape or self.mean.ndim != 1:
            raise ValueError("mean and variance must be equal-length vectors")
        if np.any(self.variance < 0):
            raise ValueError("variance entries must be >= 0")

    @property
    def n_mels(self) -> int:
        return self.mean.shape[0]

    @property
    def scale(self) -> np.ndarray:
        spread = np.sqrt(self.variance) if self.use_std else self.variance
        return spread + self.epsilon

    def to_json(self) -> str:
        obj = {
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "epsilon": self.epsilon,
        }
        if self.use_std:
            obj["use_std"] = True
        return json.dumps(obj)

    @classmethod
    def from_json(cls, text: str) -> "Normalizer":
        obj = json.loads(text)
        return cls(
            mean=obj["mean"],
            variance=obj["variance"],
            epsilon=float(obj["epsilon"]),
            use_std=bool(obj.get("use_std", False)),
        )


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def _riff_chunks(blob: bytes, path) -> dict[bytes, bytes]:
    if len(blob) < 12:
        raise WavReadError(f"{path}: file too short for a RIFF header")
    riff, _, wave = struct.unpack_from("<4sI4s", blob, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavReadError(f"{path}: not a RIFF/WAVE file")
    chunks: dict[bytes, bytes] = {}
    pos = 12
    while pos + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, pos)
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise WavReadError(f"{path}: chunk {cid!r} truncated")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    if b"fmt " not in chunks:
        raise WavReadError(f"{path}: missing fmt chunk")
    if b"data" not in chunks:
        raise WavReadError(f"{path}: missing data chunk")
    return chunks


def decode_wav(path: str | os.PathLike) -> PcmSignal:
    """Read a 16-bit PCM or 32-bit float WAV file as a mono signal in [-1, 1]."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise WavReadError(f"{path}: {exc}") from exc
    chunks = _riff_chunks(blob, path)
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise WavReadError(f"{path}: fmt chunk truncated")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncodingError(f"{path}: format tag {tag} with {bits} bits is not supported")
    if channels not in (1, 2):
        raise UnsupportedEncodingError(f"{path}: {channels} channels (expected 1 or 2)")
    if rate == 0:
        raise WavReadError(f"{path}: sample rate is zero")

    payload = chunks[b"data"]
    frame_bytes = channels * dtype.itemsize
    n_frames = len(payload) // frame_bytes
    if n_frames == 0:
        raise EmptyAudioError(f"{path}: no audio samples")
    raw = np.frombuffer(payload[: n_frames * frame_bytes], dtype=dtype)
    samples = raw.astype(np.float64).reshape(n_frames, channels).mean(axis=1) / scale
    if not np.all(np.isfinite(samples)):
        raise WavReadError(f"{path}: non-finite sample values")
    return PcmSignal(np.clip(samples, -1.0, 1.0), rate)


def write_wav(path: str | os.PathLike, samples: np.ndarray, sample_rate: int, *, encoding: str = "pcm16") -> None:
    """Write mono (1-D) or multichannel ([n, channels]) audio."""
    data = np.asarray(samples, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    channels = data.shape[1]
    if encoding == "pcm16":
        payload = np.clip(np.round(data * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        payload = data.astype("<f4").tobytes()
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def resample(sig: PcmSignal, target_rate: int) -> PcmSignal:
    """Polyphase windowed-sinc resampling to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == sig.sample_rate:
        return PcmSignal(sig.samples.copy(), sig.sample_rate)
    ratio = Fraction(int(target_rate), sig.sample_rate)
    out = sps.resample_poly(sig.samples, ratio.numerator, ratio.denominator)
    return PcmSignal(out, target_rate)


def fix_duration(sig: PcmSignal, seconds: float) -> PcmSignal:
    """Zero-pad at the end, or truncate, to exactly ``seconds`` of audio."""
    n = int(round(seconds * sig.sample_rate))
    x = sig.samples[:n]
    if len(x) < n:
        x = np.concatenate([x, np.zeros(n - len(x))])
    return PcmSignal(x, sig.sample_rate)


# ---------------------------------------------------------------------------
# Mel features
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig) -> np.ndarray:
    """Triangular filters on the mel scale, shape [n_mels, frame_length // 2 + 1].

    Filter edges sit on the neighbouring filters' centres, so adjacent filters
    overlap by half. Peaks are 1.
    """
    n_bins = config.frame_length // 2 + 1
    bin_mel = hz_to_mel(np.arange(n_bins) * config.sample_rate / config.frame_length)
    edges = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.upper_frequency), config.n_mels + 2)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_mel - lo) / (mid - lo)
    falling = (hi - bin_mel) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the DFT-even form
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, config: FeatureConfig) -> int:
    n = max(n_samples, config.frame_length)
    return (n - config.frame_length) // config.hop_length + 1


def extract_mel_spectrogram(sig: PcmSignal, config: FeatureConfig = FeatureConfig()) -> Spectrogram:
    if len(sig.samples) == 0:
        raise EmptyAudioError("cannot extract features from an empty signal")
    if sig.sample_rate != config.sample_rate:
        raise ValueError(f"signal rate {sig.sample_rate} != feature rate {config.sample_rate}; resample first")
    x = sig.samples
    if len(x) < config.frame_length:
        x = np.concatenate([x, np.zeros(config.frame_length - len(x))])
    frames = np.lib.stride_tricks.sliding_window_view(x, config.frame_length)[:: config.hop_length]
    power = np.abs(np.fft.rfft(frames * _hann(config.frame_length), axis=1)) ** 2
    mel = power @ mel_filterbank(config).T
    if config.log_compress:
        mel = np.log10(mel + config.epsilon)
    return Spectrogram(mel)


def featurize_file(path, config: FeatureConfig, seconds: float | None = None) -> Spectrogram:
    """Decode, resample, fix duration and extract features for one file."""
    sig = decode_wav(path)
    sig = resample(sig, config.sample_rate)
    if seconds is not None:
        sig = fix_duration(sig, seconds)
    return extract_mel_spectrogram(sig, config)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def fit_normalizer(spectrograms: Iterable[Spectrogram], epsilon: float = 1e-8, *, use_std: bool = False) -> Normalizer:
    """Per-band population mean and variance over every frame of every input."""
    specs = list(spectrograms)
    if not specs:
        raise NormalizationError("cannot fit a normalizer on an empty collection")
    widths = {s.n_mels for s in specs}
    if len(widths) != 1:
        raise NormalizationError(f"mixed n_mels in collection: {sorted(widths)}")
    count = 0
    total = np.zeros(specs[0].n_mels)
    for s in specs:
        total += s.data.sum(axis=0, dtype=np.float64)
        count += s.n_frames
    mean = total / count
    sq = np.zeros_like(mean)
    for s in specs:
        sq += ((s.data.astype(np.float64) - mean) ** 2).sum(axis=0)
    return Normalizer(mean, sq / count, epsilon, use_std)


def apply_normalizer(norm: Normalizer, spec: Spectrogram) -> Spectrogram:
    if spec.normalized:
        raise NormalizationError("spectrogram is already normalized")
    if spec.n_mels != norm.n_mels:
        raise NormalizationError(f"spectrogram has {spec.n_mels} bands, normalizer has {norm.n_mels}")
    out = (spec.data.astype(np.float64) - norm.mean) / norm.scale
    return Spectrogram(out, normalized=True)


def denormalize(norm: Normalizer, spec: Spectrogram) -> Spectrogram:
    if not spec.normalized:
        raise NormalizationError("spectrogram is not normalized")
    if spec.n_mels != norm.n_mels:
        raise NormalizationError(f"spectrogram has {spec.n_mels} bands, normalizer has {norm.n_mels}")
    return Spectrogram(spec.data.astype(np.float64) * norm.scale + norm.mean)


# ---------------------------------------------------------------------------
# Feature cache
# ---------------------------------------------------------------------------


def write_feature_cache(spec: Spectrogram, path: str | os.PathLike) -> None:
    """Write atomically: header then row-major little-endian float32 frames."""
    path = Path(path)
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, spec.n_frames, spec.n_mels)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(spec.data.astype("<f4").tobytes())
    os.replace(tmp, path)


def read_feature_cache(path: str | os.PathLike) -> Spectrogram:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != CACHE_MAGIC:
        raise BadMagicError(f"{path}: not a feature cache file")
    if len(blob) < _CACHE_HEADER.size:
        raise TruncatedCacheError(f"{path}: header truncated")
    _, version, n_frames, n_mels = _CACHE_HEADER.unpack_from(blob, 0)
    if version != CACHE_VERSION:
        raise CacheVersionError(f"{path}: version {version}, expected {CACHE_VERSION}")
    n_bytes = n_frames * n_mels * 4
    payload = blob[_CACHE_HEADER.size :]
    if len(payload) < n_bytes:
        raise TruncatedCacheError(f"{path}: payload has {len(payload)} bytes, expected {n_bytes}")
    data = np.frombuffer(payload[:n_bytes], dtype="<f4").reshape(n_frames, n_mels)
    return Spectrogram(data.astype(np.float32))


def stack_spectrograms(specs: Sequence[Spectrogram]) -> np.ndarray:
    """[N, 1, frames, mels] float32 batch for the models."""
    return np.stack([s.data for s in specs])[:, None, :, :].astype(np.float32)
