"""Minimal Standard MIDI File writer and reader for note events."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import MidiError

PPQ = 480
BPM = 120
TEMPO_US = 60_000_000 // BPM
VELOCITY = 80


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset: float
    pitch: int
    duration: float = 0.5
    velocity: int = VELOCITY

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError("onset must be >= 0")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if not 0 <= self.velocity <= 127:
            raise ValueError("velocity must be in [0, 127]")
        if not 0 <= self.pitch <= 127:
            raise ValueError("pitch must be in [0, 127]")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


def seconds_to_ticks(seconds: float) -> int:
    return int(round(seconds * PPQ * BPM / 60))


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def encode_midi(events) -> bytes:
    """Format 0, one track, PPQ 480 at 120 BPM; note-off messages carry velocity 0."""
    msgs = []
    for ev in events:
        on = seconds_to_ticks(ev.onset)
        off = max(seconds_to_ticks(ev.offset), on + 1)
        # offs sort before ons at the same tick so repeated notes don't swallow each other
        msgs.append((on, 1, ev.pitch, bytes([0x90, ev.pitch, ev.velocity])))
        msgs.append((off, 0, ev.pitch, bytes([0x80, ev.pitch, 0])))
    msgs.sort(key=lambda m: m[:3])

    track = bytearray()
    track += b"\x00\xff\x51\x03" + TEMPO_US.to_bytes(3, "big")
    now = 0
    for tick, _, _, data in msgs:
        track += _varlen(tick - now) + data
        now = tick
    track += b"\x00\xff\x2f\x00"

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, PPQ)
    return header + b"MTrk" + struct.pack(">I", len(track)) + bytes(track)


def write_midi(events, path):
    Path(path).write_bytes(encode_midi(events))


def _read_varlen(data, pos):
    value = 0
    while True:
        if pos >= len(data):
            raise MidiError("truncated variable-length quantity")
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos


def _parse_track(data):
    """Yield (abs_tick, kind, a, b) with kind in {'on', 'off', 'tempo'}."""
    pos, tick, status = 0, 0, None
    while pos < len(data):
        delta, pos = _read_varlen(data, pos)
        tick += delta
        b = data[pos]
        if b == 0xFF:
            mtype = data[pos + 1]
            length, pos = _read_varlen(data, pos + 2)
            if mtype == 0x51 and length == 3:
                yield tick, "tempo", int.from_bytes(data[pos : pos + 3], "big"), 0
            pos += length
            if mtype == 0x2F:
                return
            continue
        if b in (0xF0, 0xF7):
            length, pos = _read_varlen(data, pos + 1)
            pos += length
            continue
        if b & 0x80:
            status = b
            pos += 1
        elif status is None:
            raise MidiError("running status without a prior status byte")
        kind = status & 0xF0
        nbytes = 1 if kind in (0xC0, 0xD0) else 2
        args = data[pos : pos + nbytes]
        pos += nbytes
        if kind == 0x90 and args[1] > 0:
            yield tick, "on", args[0], args[1]
        elif kind == 0x80 or (kind == 0x90 and args[1] == 0):
            yield tick, "off", args[0], 0


def decode_midi(data: bytes) -> list[NoteEvent]:
    """Note events from a format 0/1 SMF, honouring tempo changes. Unterminated notes end at the last event."""
    if data[:4] != b"MThd":
        raise MidiError("not a MIDI file")
    hlen, _, ntracks, division = struct.unpack(">IHHH", data[4:14])
    if division & 0x8000:
        raise MidiError("SMPTE time division is not supported")
    pos = 8 + hlen
    raw = []
    for _ in range(ntracks):
        if data[pos : pos + 4] != b"MTrk":
            raise MidiError("missing track chunk")
        (length,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        raw.extend(_parse_track(data[pos + 8 : pos + 8 + length]))
        pos += 8 + length

    # stable sort keeps in-track order for simultaneous events
    raw.sort(key=lambda e: e[0])
    tempo_us, last_tick, seconds = 500_000, 0, 0.0
    timed = []
    for tick, kind, a, b in raw:
        seconds += (tick - last_tick) * tempo_us / (division * 1e6)
        last_tick = tick
        if kind == "tempo":
            tempo_us = a
        else:
            timed.append((seconds, kind, a, b))

    events, active = [], {}
    for t, kind, pitch, vel in timed:
        if kind == "on":
            if pitch in active:
                start, v = active.pop(pitch)
                events.append((start, pitch, t - start, v))
            active[pitch] = (t, vel)
        elif pitch in active:
            start, v = active.pop(pitch)
            events.append((start, pitch, t - start, v))
    end = timed[-1][0] if timed else 0.0
    for pitch, (start, v) in active.items():
        events.append((start, pitch, end - start, v))
    return sorted(NoteEvent(s, p, d if d > 0 else 1e-3, v) for s, p, d, v in events)


def read_midi(path) -> list[NoteEvent]:
    return decode_midi(Path(path).read_bytes())
