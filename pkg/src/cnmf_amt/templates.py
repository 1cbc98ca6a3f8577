"""Template libraries: one convolutive template per note, persisted in a fixed binary layout.

Layout (little-endian):

    magic  b"CNMFTPL1"                                          8 bytes
    u32    version, n, tau, r, midi_base, sample_rate,
           window_length, hop_length, fft_size, window_tag,
           reserved x4 (zero)                                   56 bytes
    f64    n*tau*r template values, index ((q*tau) + i)*n + f
    u32    count, then count x (u32 byte length + UTF-8 bytes)

Metadata strings are ``key=value``: ``iterations=<k>`` and one ``source.<q>=<label>``
per note that has a provenance label.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import WINDOW_TAGS, StftConfig
from .errors import (
    ConfigMismatchError,
    LibraryError,
    LibraryVersionError,
    NotALibraryError,
    TruncatedLibraryError,
)

MAGIC = b"CNMFTPL1"
VERSION = 1
HEADER = struct.Struct("<8s14I")
HEADER_SIZE = HEADER.size  # 64
PIANO_MIDI_BASE = 21
PIANO_NOTES = 88

_TAG_TO_WINDOW = {v: k for k, v in WINDOW_TAGS.items()}


@dataclass
class TemplateLibrary:
    tensor: np.ndarray  # (n, tau, r)
    midi_base: int = PIANO_MIDI_BASE
    stft: StftConfig = field(default_factory=StftConfig)
    iterations: int = 0
    sources: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float64)
        if t.ndim != 3:
            raise LibraryError(f"template tensor must be 3-D, got shape {t.shape}")
        if np.any(~np.isfinite(t)) or np.any(t < 0):
            raise LibraryError("template tensor has negative or non-finite values")
        if t.shape[0] != self.stft.n_bins:
            raise LibraryError(
                f"templates have {t.shape[0]} bins but the STFT config gives {self.stft.n_bins}"
            )
        self.tensor = t

    @property
    def n(self) -> int:
        return self.tensor.shape[0]

    @property
    def tau(self) -> int:
        return self.tensor.shape[1]

    @property
    def r(self) -> int:
        return self.tensor.shape[2]

    @property
    def pitches(self) -> list[int]:
        return [self.midi_base + q for q in range(self.r)]

    def pitch_of(self, q: int) -> int:
        return pitch_of(q, self)

    def check_compatible(self, cfg: StftConfig):
        """Refuse to transcribe spectrograms computed differently from the training ones."""
        if cfg != self.stft:
            raise ConfigMismatchError(
                f"STFT config mismatch: library trained with {self.stft}, spectrogram uses {cfg}"
            )


def pitch_of(q: int, lib: TemplateLibrary) -> int:
    if not 0 <= q < lib.r:
        raise IndexError(f"template index {q} out of range for r={lib.r}")
    return lib.midi_base + q


def _metadata_strings(lib: TemplateLibrary) -> list[str]:
    out = [f"iterations={lib.iterations}"]
    out += [f"source.{q}={label}" for q, label in sorted(lib.sources.items())]
    return out


def save_library(lib: TemplateLibrary, path):
    cfg = lib.stft
    header = HEADER.pack(
        MAGIC, VERSION, lib.n, lib.tau, lib.r, lib.midi_base, cfg.sample_rate,
        cfg.window_length, cfg.hop_length, cfg.fft_size, WINDOW_TAGS[cfg.window],
        0, 0, 0, 0,
    )
    # (n, tau, r) -> q-major, then i, then f
    payload = np.ascontiguousarray(lib.tensor.transpose(2, 1, 0), dtype="<f8").tobytes()
    meta = [s.encode("utf-8") for s in _metadata_strings(lib)]
    parts = [header, payload, struct.pack("<I", len(meta))]
    for b in meta:
        parts += [struct.pack("<I", len(b)), b]
    Path(path).write_bytes(b"".join(parts))


def load_library(path) -> TemplateLibrary:
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE or data[:8] != MAGIC:
        raise NotALibraryError(f"{path}: not a template library")
    (_, version, n, tau, r, midi_base, sr, win, hop, nfft, tag, *_) = HEADER.unpack_from(data)
    if version != VERSION:
        raise LibraryVersionError(f"{path}: format version {version}, only {VERSION} supported")
    if tag not in _TAG_TO_WINDOW:
        raise LibraryError(f"{path}: unknown window tag {tag}")

    end = HEADER_SIZE + 8 * n * tau * r
    if len(data) < end + 4:
        raise TruncatedLibraryError(
            f"{path}: truncated, expected at least {end + 4} bytes, found {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f8", count=n * tau * r, offset=HEADER_SIZE)
    tensor = values.reshape(r, tau, n).transpose(2, 1, 0).astype(np.float64)
    if np.any(tensor < 0):
        raise LibraryError(f"{path}: negative template values")

    strings = []
    pos = end
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    for _ in range(count):
        if pos + 4 > len(data):
            raise TruncatedLibraryError(f"{path}: truncated metadata block")
        (size,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + size > len(data):
            raise TruncatedLibraryError(
                f"{path}: truncated metadata string, expected {pos + size} bytes, found {len(data)}"
            )
        strings.append(data[pos : pos + size].decode("utf-8"))
        pos += size

    iterations, sources = 0, {}
    for s in strings:
        key, _, value = s.partition("=")
        if key == "iterations":
            iterations = int(value)
        elif key.startswith("source."):
            sources[int(key[len("source."):])] = value

    cfg = StftConfig(
        window_length=win, hop_length=hop, fft_size=nfft,
        window=_TAG_TO_WINDOW[tag], sample_rate=sr,
    )
    return TemplateLibrary(tensor, midi_base, cfg, iterations, sources)
