"""Self-verification suite on synthetic data, each check against an independent oracle."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import cnmf
from .audio import AudioClip, StftConfig, compute_spectrogram
from .evaluate import Song, match_notes, sweep_thresholds
from .midi import NoteEvent
from .synth import damped_note, planted_problem, random_sequence, random_templates, render
from .transcribe import PeakPickConfig, activations_to_events, onset_mask


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: str
    tolerance: str
    seconds: float = 0.0


# -- oracles ---------------------------------------------------------------

def nmf_kl_update_H(M, W, H, eps=cnmf.EPS):
    return H * (W.T @ (M / (W @ H + eps))) / (W.T @ np.ones_like(M) + eps)


def nmf_kl_update_W(M, W, H, eps=cnmf.EPS):
    return W * ((M / (W @ H + eps)) @ H.T) / (np.ones_like(M) @ H.T + eps)


def brute_onsets(H, delta, half_window=10):
    r, m = H.shape
    out = np.zeros((r, m), dtype=bool)
    width = 2 * half_window + 1
    for q in range(r):
        for t in range(m):
            s = 0.0
            for j in range(-half_window, half_window + 1):
                if 0 <= t + j < m:
                    s += H[q, t + j]
            out[q, t] = H[q, t] > s / width + delta
    return out


def brute_max_matching(ref, est, tol):
    """Largest set of disjoint feasible pairs, by enumerating injections of ref into est or None."""
    feasible = [
        [j for j, e in enumerate(est)
         if e.pitch == r.pitch and round(abs(e.onset - r.onset), 4) <= tol]
        for r in ref
    ]
    best = 0

    def rec(i, used, count):
        nonlocal best
        if count + (len(ref) - i) <= best:
            return
        if i == len(ref):
            best = max(best, count)
            return
        for j in feasible[i]:
            if j not in used:
                rec(i + 1, used | {j}, count + 1)
        rec(i + 1, used, count)

    rec(0, frozenset(), 0)
    return best


# -- checks ----------------------------------------------------------------

def check_monotone(rng, scale=1, instances=10, iters=500, tamper=False):
    worst = -np.inf
    ok = True
    for _ in range(instances):
        n = int(rng.integers(2, 32 * scale + 1))
        m = int(rng.integers(8, 64 * scale + 1))
        r = int(rng.integers(1, 9))
        tau = int(rng.integers(1, 7))
        M = rng.random((n, m))
        _, _, trace = cnmf.fit(M, rng.random((n, tau, r)), rng.random((r, m)),
                               cnmf.SolverConfig(max_iters=iters))
        c = np.array(trace.cost_per_iteration)
        if tamper:
            c = c + 1e-3 * np.abs(c) * (np.arange(len(c)) % 2)
        rel = np.max(c[1:] / c[:-1] - 1)
        worst = max(worst, rel)
        ok &= bool(np.all(c[1:] <= c[:-1] * (1 + 1e-9)))
    return ok, f"max rel increase {worst:.2e}", "<= 1e-9"


def check_nmf_degeneracy(rng, scale=1, instances=10):
    worst = 0.0
    for _ in range(instances):
        n, m, r = (int(v) for v in rng.integers(2, 24 * scale, size=3))
        M = rng.random((n, m))
        W = rng.random((n, 1, r))
        H = rng.random((r, m))
        W2 = W[:, 0, :]
        worst = max(
            worst,
            np.max(np.abs(cnmf.cnmf_apply(W, H) - W2 @ H)),
            np.max(np.abs(cnmf.update_H(M, W, H) - nmf_kl_update_H(M, W2, H))),
            np.max(np.abs(cnmf.update_W(M, W, H)[:, 0, :] - nmf_kl_update_W(M, W2, H))),
        )
    return worst <= 1e-12, f"max abs diff {worst:.2e}", "<= 1e-12"


def check_convexity(rng, scale=1, instances=3, starts=5, iters=500):
    worst = 0.0
    for _ in range(instances):
        n, m, r, tau = 16 * scale, 40 * scale, 4, 3
        M = rng.random((n, m))
        W = random_templates(rng, n, tau, r, sparsity=1.0)
        costs = []
        for _ in range(starts):
            _, trace = cnmf.solve_activations(M, W, rng.random((r, m)) + 0.1,
                                              cnmf.SolverConfig(max_iters=iters))
            costs.append(trace.final_cost)
        worst = max(worst, (max(costs) - min(costs)) / min(costs))
    return worst <= 1e-4, f"max rel spread {worst:.2e}", "<= 1e-4"


def check_rank_one_recovery(rng, scale=1, seeds=3):
    worst = 1.0
    for _ in range(seeds):
        n, tau = 32 * scale, 4
        w = random_templates(rng, n, tau, 1, sparsity=1.0)
        h = np.zeros((1, 48 * scale))
        h[0, [2, 20, 38]] = rng.uniform(0.5, 2.0, size=3)
        V = cnmf.cnmf_apply(w, h)
        est, _ = cnmf.train_note_template(V, tau, cnmf.SolverConfig(max_iters=100))
        worst = min(worst, best_aligned_cosine(w[:, :, 0], est))
    return worst > 0.99, f"min cosine {worst:.6f}", "> 0.99"


def best_aligned_cosine(a, b):
    best = -1.0
    for s in range(a.shape[1]):
        bs = np.roll(b, s, axis=1)
        best = max(best, float(np.sum(a * bs) / (np.linalg.norm(a) * np.linalg.norm(bs))))
    return best


def check_planted_transcription(rng, scale=1, seeds=3):
    ok = True
    hits = 0
    for _ in range(seeds):
        W, H, M = planted_problem(rng, n=48 * scale, m=240 * scale)
        Hhat, _ = cnmf.transcribe_activations(M, W)
        pitches = list(range(60, 60 + W.shape[2]))
        est = activations_to_events(Hhat, pitches, PeakPickConfig(0.05))
        ref = [NoteEvent(t * 0.02, pitches[q]) for q, t in zip(*np.nonzero(H))]
        tp, fp, fn, _ = match_notes(sorted(ref), est, tol=1e-6)
        ok &= fp == 0 and fn == 0
        hits += tp == len(ref) and fp == 0
    return ok, f"{hits}/{seeds} exact", "all exact"


def check_peak_picking(rng, scale=1, instances=5):
    grid = [round(0.01 * k, 2) for k in range(1, 41)]
    bad = 0
    for _ in range(instances):
        H = rng.random((8, 200 * scale)) ** 4
        for delta in grid:
            bad += int(np.any(onset_mask(H, delta) != brute_onsets(H, delta)))
    return bad == 0, f"{bad} mismatching (H, delta) pairs", "0"


def check_matching(rng, scale=1, cases=200):
    bad = 0
    for _ in range(cases * scale):
        def notes(k):
            return [NoteEvent(round(float(rng.uniform(0, 0.3)), 3), int(rng.integers(60, 62)))
                    for _ in range(k)]
        ref, est = notes(int(rng.integers(0, 7))), notes(int(rng.integers(0, 7)))
        tp = match_notes(ref, est, 0.05)[0]
        bad += tp != brute_max_matching(ref, est, 0.05)
    return bad == 0, f"{bad} mismatches", "0"


def check_stft_dims(rng, scale=1):
    spec = compute_spectrogram(AudioClip(np.zeros(30 * 44100)), StftConfig())
    n, m = spec.values.shape
    return (n, m) == (4097, 1501), f"n={n} m={m}", "n=4097 m=1501"


def check_end_to_end(rng, scale=1):
    pitches = [60, 61, 62]
    cfg = StftConfig()
    W = np.stack([
        cnmf.train_note_template(
            compute_spectrogram(AudioClip(damped_note(p, 1.5)), cfg).values, 10)[0]
        for p in pitches
    ], axis=2)
    events = random_sequence(rng, pitches, 12, 10.0)
    M = compute_spectrogram(AudioClip(render(events, 10.0)), cfg).values
    H, _ = cnmf.transcribe_activations(M, W)
    res = sweep_thresholds([Song("synthetic", H, pitches, cfg.hop_seconds, events)])
    best = float(res.f_table().max())
    return best >= 0.9, f"best F {best:.3f}", ">= 0.9"


CHECKS = [
    ("monotone KL descent", check_monotone),
    ("tau=1 NMF degeneracy", check_nmf_degeneracy),
    ("fixed-W convexity", check_convexity),
    ("planted rank-one recovery", check_rank_one_recovery),
    ("planted transcription", check_planted_transcription),
    ("peak-picking oracle", check_peak_picking),
    ("matching oracle", check_matching),
    ("STFT dimensions", check_stft_dims),
    ("end-to-end micro-benchmark", check_end_to_end),
]


def run(seed: int = 0, scale: int = 1, tamper: bool = False, only=None):
    results = []
    for k, (name, fn) in enumerate(CHECKS):
        if only is not None and name not in only:
            continue
        rng = np.random.default_rng([seed, k])
        t0 = time.perf_counter()
        kwargs = {"tamper": True} if tamper and fn is check_monotone else {}
        passed, measured, tol = fn(rng, scale=scale, **kwargs)
        results.append(CheckResult(name, bool(passed), measured, tol, time.perf_counter() - t0))
    return results


def format_results(results) -> str:
    w = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.name:<{w}}  {r.measured}  (tol {r.tolerance}, {r.seconds:.1f}s)")
    return "\n".join(lines)

