"""Synthetic data: planted CNMF problems and damped-harmonic note audio."""

from __future__ import annotations

import numpy as np

from .audio import SAMPLE_RATE
from .cnmf import cnmf_apply
from .midi import NoteEvent


def midi_to_hz(pitch: float) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12)


def random_templates(rng, n, tau, r, sparsity: float = 3.0):
    """Unit-mass random templates; raising to a power makes them peakier and better separated."""
    W = rng.random((n, tau, r)) ** sparsity
    return W / W.sum(axis=(0, 1))


def impulse_train(rng, r, m, min_gap, max_gap=None, height=(1.0, 2.0), margin=0):
    """Activations with isolated impulses at least `min_gap` frames apart in every row."""
    max_gap = max_gap or 2 * min_gap
    H = np.zeros((r, m))
    for q in range(r):
        t = int(rng.integers(0, min_gap))
        while t < m - margin:
            H[q, t] = rng.uniform(*height)
            t += int(rng.integers(min_gap, max_gap + 1))
    return H


def planted_problem(rng, n=48, tau=4, r=5, m=240, min_gap=25):
    W = random_templates(rng, n, tau, r)
    H = impulse_train(rng, r, m, min_gap, margin=tau)
    return W, H, cnmf_apply(W, H)


def damped_note(pitch, duration, sr=SAMPLE_RATE, n_partials=8, decay=2.5, amplitude=0.3,
                inharmonicity=0.0):
    """A struck-string-like tone: harmonic partials with exponential decay, higher partials faster."""
    t = np.arange(int(round(duration * sr))) / sr
    f0 = midi_to_hz(pitch)
    x = np.zeros_like(t)
    for k in range(1, n_partials + 1):
        fk = k * f0 * np.sqrt(1 + inharmonicity * k * k)
        if fk >= sr / 2:
            break
        x += np.exp(-decay * k ** 0.5 * t) * np.sin(2 * np.pi * fk * t) / k
    attack = np.minimum(1.0, t / 0.005)
    return amplitude * x * attack / np.max(np.abs(x) + 1e-12)


def render(events, duration, sr=SAMPLE_RATE, note_length=1.0, **note_kw):
    out = np.zeros(int(round(duration * sr)))
    for ev in events:
        start = int(round(ev.onset * sr))
        tone = damped_note(ev.pitch, note_length, sr, **note_kw)
        end = min(len(out), start + len(tone))
        out[start:end] += tone[: end - start]
    return out


def random_sequence(rng, pitches, n_events, duration, min_gap=0.5, hop=0.02):
    """n_events onsets (grid-aligned to `hop`) spread over `duration`, with same-pitch gaps >= min_gap."""
    slots = np.sort(rng.choice(np.arange(0.2, duration - 1.0, 0.4), n_events, replace=False))
    events = []
    last = {}
    for t in slots:
        choices = [p for p in pitches if t - last.get(p, -np.inf) >= min_gap]
        p = int(rng.choice(choices))
        last[p] = t
        events.append(NoteEvent(round(round(t / hop) * hop, 6), p))
    return sorted(events)
