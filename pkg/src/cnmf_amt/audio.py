"""WAV decoding and amplitude spectrograms."""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from math import gcd

import numpy as np
import scipy.io.wavfile
from scipy.signal import resample_poly

from .errors import (
    ClipTooShortError,
    EmptyAudioError,
    UnreadableAudioError,
    UnsupportedEncodingError,
)

SAMPLE_RATE = 44100
WINDOW_TAGS = {"hann": 0}


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("AudioClip expects mono samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioClip samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """STFT parameters, in samples. Defaults give 80 ms windows and 20 ms hops at 44.1 kHz."""

    window_length: int = 3528
    hop_length: int = 882
    fft_size: int = 8192
    window: str = "hann"
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.window_length <= 0 or self.hop_length <= 0:
            raise ValueError("window_length and hop_length must be positive")
        if self.hop_length > self.window_length:
            raise ValueError("hop_length must not exceed window_length")
        if self.fft_size < self.window_length:
            raise ValueError("fft_size must be >= window_length")
        if self.window not in WINDOW_TAGS:
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.fft_size

    @property
    def hop_seconds(self) -> float:
        return self.hop_length / self.sample_rate

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop_length


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray
    bin_hz: float
    hop_seconds: float
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def shape(self):
        return self.values.shape

    def frame_times(self) -> np.ndarray:
        return np.arange(self.values.shape[1]) * self.hop_seconds


def load_audio(path, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Read a PCM WAV file as a mono clip in [-1, 1], resampled to `sample_rate`."""
    try:
        sr, data = scipy.io.wavfile.read(path)
    except FileNotFoundError as exc:
        raise UnreadableAudioError(f"cannot open {path}: {exc}") from exc
    except (ValueError, OSError, EOFError, wave.Error) as exc:
        msg = str(exc)
        if any(k in msg.lower() for k in ("unknown wave file format", "unsupported bit depth")):
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise UnreadableAudioError(f"{path}: {msg}") from exc

    # 24-bit PCM is delivered left-justified in int32
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample type {data.dtype}")

    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise EmptyAudioError(f"{path}: no samples")

    if sr != sample_rate:
        x = resample(x, sr, sample_rate)
    return AudioClip(x, sample_rate)


def resample(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    g = gcd(int(sr_in), int(sr_out))
    return resample_poly(x, sr_out // g, sr_in // g)


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE, bits: int = 16):
    """Write float samples (mono 1-D or frames x channels) as integer PCM."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    channels = 1 if x.ndim == 1 else x.shape[1]
    if bits == 16:
        ints = np.round(x * 32767).astype("<i2")
        raw = ints.tobytes()
    elif bits == 24:
        ints = np.round(x * 8388607).astype("<i4").reshape(-1)
        raw = np.frombuffer(ints.tobytes(), dtype=np.uint8).reshape(-1, 4)[:, :3].tobytes()
    else:
        raise ValueError("bits must be 16 or 24")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(bits // 8)
        w.setframerate(sample_rate)
        w.writeframes(raw)


def _window(cfg: StftConfig) -> np.ndarray:
    # periodic Hann
    return np.hanning(cfg.window_length + 1)[:-1]


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Frames as rows: frame t holds samples [t*hop, t*hop + window), zero-padded past the end."""
    m = cfg.n_frames(len(x))
    padded_len = (m - 1) * cfg.hop_length + cfg.window_length
    xp = np.zeros(padded_len)
    xp[: len(x)] = x
    return np.lib.stride_tricks.sliding_window_view(xp, cfg.window_length)[:: cfg.hop_length]


def compute_spectrogram(clip: AudioClip, cfg: StftConfig | None = None) -> Spectrogram:
    """Amplitude spectrogram |STFT|, n = fft_size/2 + 1 bins by m = 1 + len // hop frames."""
    cfg = cfg or StftConfig(sample_rate=clip.sample_rate)
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"clip is at {clip.sample_rate} Hz but config expects {cfg.sample_rate} Hz"
        )
    if len(clip.samples) < cfg.hop_length:
        raise ClipTooShortError(
            f"clip has {len(clip.samples)} samples, shorter than one hop ({cfg.hop_length})"
        )
    frames = frame_signal(clip.samples, cfg) * _window(cfg)
    values = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)).T
    return Spectrogram(np.ascontiguousarray(values), cfg.bin_hz, cfg.hop_seconds, cfg)


def write_spectrogram_csv(spec: Spectrogram, path):
    n, m = spec.values.shape
    header = f"# n={n} m={m} bin_hz={spec.bin_hz!r} hop_s={spec.hop_seconds!r}"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, spec.values, delimiter=",", fmt="%.17g")
