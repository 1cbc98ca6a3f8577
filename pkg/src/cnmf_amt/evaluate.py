"""Note-wise transcription scoring (pitch + onset within a tolerance) and threshold sweeps."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field

import numpy as np

from .transcribe import PeakPickConfig, activations_to_events

ONSET_TOLERANCE = 0.05
# onset distances are rounded like mir_eval does, so 50 ms boundaries are not lost to float error
_DECIMALS = 4


def default_grid() -> list[float]:
    return [round(0.01 * k, 2) for k in range(1, 41)]


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f_measure(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def accuracy(self) -> float:
        d = self.tp + self.fp + self.fn
        return self.tp / d if d else 0.0

    def __add__(self, other):
        return EvalReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_row(self) -> dict:
        return {
            "P": self.precision, "R": self.recall, "F": self.f_measure, "A": self.accuracy,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
        }


def match_notes(ref, est, tol: float = ONSET_TOLERANCE):
    """Maximum matching of est to ref notes with equal pitch and |onset difference| <= tol.

    Returns (tp, fp, fn, pairs) with pairs a sorted list of (ref_index, est_index).
    """
    by_pitch = {}
    for j, e in enumerate(est):
        by_pitch.setdefault(e.pitch, []).append((e.onset, j))
    for cands in by_pitch.values():
        cands.sort()

    adj = [[] for _ in ref]
    for i, r in enumerate(ref):
        cands = by_pitch.get(r.pitch, [])
        lo = bisect.bisect_left(cands, (r.onset - tol - 1e-3, -1))
        for onset, j in cands[lo:]:
            if onset > r.onset + tol + 1e-3:
                break
            if round(abs(r.onset - onset), _DECIMALS) <= tol:
                adj[i].append(j)

    match_est = [-1] * len(est)

    def augment(i, seen):
        for j in adj[i]:
            if seen[j]:
                continue
            seen[j] = True
            if match_est[j] < 0 or augment(match_est[j], seen):
                match_est[j] = i
                return True
        return False

    for i in range(len(ref)):
        if adj[i]:
            augment(i, [False] * len(est))

    pairs = sorted((i, j) for j, i in enumerate(match_est) if i >= 0)
    tp = len(pairs)
    return tp, len(est) - tp, len(ref) - tp, pairs


def score(ref, est, tol: float = ONSET_TOLERANCE) -> EvalReport:
    tp, fp, fn, _ = match_notes(ref, est, tol)
    return EvalReport(tp, fp, fn)


def truncate(events, first_seconds: float | None):
    if first_seconds is None:
        return list(events)
    return [e for e in events if e.onset < first_seconds]


def macro(reports) -> dict:
    """Mean of per-song ratios, and counts summed."""
    reports = list(reports)
    rows = [r.as_row() for r in reports]
    out = {k: float(np.mean([row[k] for row in rows])) for k in ("P", "R", "F", "A")}
    pooled = sum(reports, EvalReport(0, 0, 0))
    out.update(tp=pooled.tp, fp=pooled.fp, fn=pooled.fn)
    return out


def micro(reports) -> dict:
    """Ratios computed from pooled counts."""
    return sum(reports, EvalReport(0, 0, 0)).as_row()


@dataclass
class Song:
    name: str
    H: np.ndarray
    pitches: list[int]
    hop_seconds: float
    reference: list


@dataclass
class ThresholdSweepResult:
    grid: list[float]
    songs: list[str]
    reports: list[list[EvalReport]]  # [delta index][song index]
    best_global: float
    best_per_song: list[float]
    chosen: list[EvalReport] = field(default_factory=list)

    def f_table(self) -> np.ndarray:
        return np.array([[r.f_measure for r in row] for row in self.reports])


def sweep_thresholds(songs, grid=None, mode: str = "global", tol: float = ONSET_TOLERANCE,
                     first_seconds: float | None = None, half_window: int = 10):
    """Oracle threshold selection over `grid`.

    mode="global" keeps the single delta with the best mean F over songs;
    mode="song" keeps each song's own best delta. Ties go to the smaller delta.
    """
    grid = default_grid() if grid is None else list(grid)
    if not grid:
        raise ValueError("threshold grid is empty")
    if not songs:
        raise ValueError("no songs to sweep")
    if mode not in ("global", "song"):
        raise ValueError(f"unknown sweep mode {mode!r}")

    order = sorted(range(len(grid)), key=lambda k: grid[k])
    grid = [grid[k] for k in order]
    refs = [truncate(s.reference, first_seconds) for s in songs]
    reports = []
    for delta in grid:
        row = []
        for song, ref in zip(songs, refs):
            cfg = PeakPickConfig(delta, half_window, song.hop_seconds)
            est = truncate(activations_to_events(song.H, song.pitches, cfg), first_seconds)
            row.append(score(ref, est, tol))
        reports.append(row)

    F = np.array([[r.f_measure for r in row] for row in reports])
    g = int(np.argmax(F.mean(axis=1)))  # argmax returns the first (smallest delta) on ties
    per_song = [int(k) for k in np.argmax(F, axis=0)]
    if mode == "global":
        chosen = [reports[g][s] for s in range(len(songs))]
    else:
        chosen = [reports[k][s] for s, k in enumerate(per_song)]
    return ThresholdSweepResult(
        grid=grid,
        songs=[s.name for s in songs],
        reports=reports,
        best_global=grid[g],
        best_per_song=[grid[k] for k in per_song],
        chosen=chosen,
    )


REPORT_COLUMNS = ["song", "delta", "P", "R", "F", "A", "tp", "fp", "fn"]


def report_rows(names, reports, deltas=None):
    rows = []
    for k, (name, rep) in enumerate(zip(names, reports)):
        row = {"song": name, "delta": "" if deltas is None else deltas[k]}
        row.update(rep.as_row())
        rows.append(row)
    return rows


def summary_rows(reports, delta=""):
    return [
        {"song": "MEAN(macro)", "delta": delta, **macro(reports)},
        {"song": "POOLED(micro)", "delta": delta, **micro(reports)},
    ]


def write_report_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in REPORT_COLUMNS})


def format_table(rows) -> str:
    cells = [REPORT_COLUMNS] + [[_fmt(row[k]) for k in REPORT_COLUMNS] for row in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(v.rjust(w) if c else v.ljust(w) for c, (v, w) in enumerate(zip(r, widths)))
             for r in cells]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)
