"""From activations to note events: adaptive-threshold onset picking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .midi import VELOCITY, NoteEvent

MAX_DURATION = 0.5


@dataclass(frozen=True)
class PeakPickConfig:
    delta: float = 0.05
    half_window: int = 10
    hop_seconds: float = 0.02

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.half_window < 0:
            raise ValueError("half_window must be >= 0")


def local_mean(H, half_window: int = 10) -> np.ndarray:
    """Row-wise centred moving average over 2*half_window + 1 frames, zero-padded at the ends."""
    H = np.asarray(H, dtype=np.float64)
    width = 2 * half_window + 1
    padded = np.pad(H, ((0, 0), (half_window, half_window)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, width, axis=1)
    return windows.sum(axis=-1) / width


def onset_mask(H, delta: float, half_window: int = 10) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    return H > local_mean(H, half_window) + delta


def pick_onsets(H, cfg: PeakPickConfig) -> list[list[int]]:
    """Frames where a note's activation exceeds its local mean plus delta, per note."""
    mask = onset_mask(H, cfg.delta, cfg.half_window)
    return [np.flatnonzero(row).tolist() for row in mask]


def events_from_onsets(onsets, pitches, hop_seconds: float, max_duration: float = MAX_DURATION):
    """NoteEvents sorted by (onset, pitch). A note lasts max_duration or until its next onset."""
    events = []
    for frames, pitch in zip(onsets, pitches):
        times = [t * hop_seconds for t in sorted(frames)]
        for k, t in enumerate(times):
            dur = max_duration
            if k + 1 < len(times):
                dur = min(dur, times[k + 1] - t)
            events.append(NoteEvent(t, pitch, dur, VELOCITY))
    return sorted(events)


def scale_activations(H) -> np.ndarray:
    """H divided by its largest entry, so thresholds do not depend on recording level."""
    H = np.asarray(H, dtype=np.float64)
    peak = H.max(initial=0.0)
    return H / peak if peak > 0 else H.copy()


def activations_to_events(H, pitches, cfg: PeakPickConfig, scale: bool = True):
    if scale:
        H = scale_activations(H)
    return events_from_onsets(pick_onsets(H, cfg), pitches, cfg.hop_seconds)


def write_activations_csv(H, path, hop_seconds: float, midi_base: int):
    r, m = H.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# r={r} m={m} hop_s={hop_seconds!r} midi_base={midi_base}\n")
        np.savetxt(fh, H, delimiter=",", fmt="%.17g")


def read_activations_csv(path):
    """Returns (H, hop_seconds, midi_base)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise DataError(f"{path}: missing activation header")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        try:
            r, m = int(meta["r"]), int(meta["m"])
            hop, base = float(meta["hop_s"]), int(meta["midi_base"])
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: malformed activation header") from exc
        H = np.loadtxt(fh, delimiter=",", ndmin=2)
    if r == 0 or m == 0:
        H = np.zeros((r, m))
    if H.shape != (r, m):
        raise DataError(f"{path}: header says {r}x{m}, data is {H.shape[0]}x{H.shape[1]}")
    return H, hop, base
