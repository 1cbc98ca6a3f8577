"""Command-line interface: train, transcribe, eval, synthbench.

Exit codes: 0 ok, 1 usage, 2 data error, 3 self-check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, cnmf
from .audio import AudioClip, StftConfig, compute_spectrogram, load_audio, write_spectrogram_csv
from .errors import DataError
from .evaluate import (
    Song,
    default_grid,
    format_table,
    report_rows,
    score,
    summary_rows,
    sweep_thresholds,
    truncate,
    write_report_csv,
)
from .midi import read_midi, write_midi
from .templates import TemplateLibrary, load_library, save_library
from .transcribe import (
    PeakPickConfig,
    activations_to_events,
    read_activations_csv,
    write_activations_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SUITE = 0, 1, 2, 3

NOTE_FILE = re.compile(r"^(\d+)(?:_.*)?\.wav$", re.IGNORECASE)
MAPS_FILE = re.compile(r"^MAPS_ISOL_NO_([PMF])_S(\d+)_M(\d+)_.*\.wav$", re.IGNORECASE)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ---------------------------------------------------------------

def _jobs(arg):
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("CNMF_JOBS")
    return max(1, int(env)) if env else 1


def _stft_from_args(args) -> StftConfig:
    return StftConfig(
        window_length=args.window_length,
        hop_length=args.hop_length,
        fft_size=args.fft_size,
        sample_rate=args.sample_rate,
    )


def _write_manifest(command, params, inputs, outputs, timings, results, path=None):
    manifest = {
        "command": command,
        "version": __version__,
        "parameters": params,
        "inputs": inputs,
        "outputs": outputs,
        "timings_s": {k: round(v, 4) for k, v in timings.items()},
        "results": results,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True, default=str)
    if path is None:
        print(text, file=sys.stderr)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return manifest


def _stft_params(cfg: StftConfig) -> dict:
    return {
        "sample_rate": cfg.sample_rate, "window_length": cfg.window_length,
        "hop_length": cfg.hop_length, "fft_size": cfg.fft_size, "window": cfg.window,
    }


def collect_note_files(note_dir, maps=False, intensity="M"):
    """Map MIDI pitch -> wav path. Duplicates are a data error.

    With maps=True, a pitch recorded both with and without sustain pedal keeps the pedal-up take.
    """
    found, rank = {}, {}
    for path in sorted(Path(note_dir).iterdir()):
        if maps:
            mt = MAPS_FILE.match(path.name)
            if not mt or mt.group(1).upper() != intensity.upper():
                continue
            pitch, sustain = int(mt.group(3)), int(mt.group(2))
        else:
            mt = NOTE_FILE.match(path.name)
            if not mt:
                continue
            pitch, sustain = int(mt.group(1)), 0
        if pitch in found:
            if sustain > rank[pitch]:
                continue
            if sustain == rank[pitch]:
                raise DataError(f"duplicate files for MIDI {pitch}: {found[pitch].name}, {path.name}")
        found[pitch], rank[pitch] = path, sustain
    if not found:
        raise DataError(f"no note recordings found in {note_dir}")
    return found


def _train_one(job):
    pitch, path, tau, iters, cfg = job
    t0 = time.perf_counter()
    V = compute_spectrogram(load_audio(path, cfg.sample_rate), cfg).values
    template, trace = cnmf.train_note_template(V, tau, cnmf.SolverConfig(max_iters=iters))
    return pitch, template, trace.final_cost, trace.iterations_run, time.perf_counter() - t0


# -- commands --------------------------------------------------------------

def cmd_train(args):
    cfg = _stft_from_args(args)
    t_start = time.perf_counter()
    files = collect_note_files(args.notes, args.maps, args.intensity)
    lo, hi = args.range if args.range else (min(files), max(files))
    missing = [p for p in range(lo, hi + 1) if p not in files]
    if missing:
        raise DataError("; ".join(f"missing template for MIDI {p}" for p in missing))
    pitches = list(range(lo, hi + 1))
    jobs = [(p, files[p], args.tau, args.iters, cfg) for p in pitches]

    n_jobs = _jobs(args.jobs)
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]

    per_note = {}
    for pitch, _, cost, iters_run, secs in results:
        print(f"MIDI {pitch:3d}  final KL {cost:.6g}  iterations {iters_run}  {secs:.2f}s")
        per_note[pitch] = {"final_kl": cost, "seconds": secs}

    tensor = np.stack([t for _, t, *_ in results], axis=2)
    lib = TemplateLibrary(
        tensor, midi_base=lo, stft=cfg, iterations=args.iters,
        sources={q: files[p].name for q, p in enumerate(pitches)},
    )
    save_library(lib, args.out)
    total = time.perf_counter() - t_start
    secs = [v["seconds"] for v in per_note.values()]
    print(f"saved {lib.r} templates (tau={lib.tau}) to {args.out}; "
          f"mean {np.mean(secs):.2f}s per template, {total:.2f}s total")
    _write_manifest(
        "train",
        {"tau": args.tau, "iters": args.iters, "midi_range": [lo, hi], "maps": args.maps,
         "intensity": args.intensity, "jobs": n_jobs, **_stft_params(cfg)},
        {"notes": str(args.notes)}, {"library": str(args.out)},
        {"total": total, "per_template_mean": float(np.mean(secs))},
        {"per_note": per_note},
        args.manifest or f"{args.out}.manifest.json",
    )
    return EXIT_OK


def cmd_transcribe(args):
    cfg = _stft_from_args(args)
    t0 = time.perf_counter()
    lib = load_library(args.lib)
    lib.check_compatible(cfg)
    clip = load_audio(args.input, cfg.sample_rate)
    if args.first_seconds is not None:
        if args.first_seconds <= 0:
            raise ValueError("--first-seconds must be positive")
        clip = AudioClip(clip.samples[: int(round(args.first_seconds * cfg.sample_rate))], cfg.sample_rate)
    spec = compute_spectrogram(clip, cfg)
    t1 = time.perf_counter()
    H, trace = cnmf.transcribe_activations(spec.values, lib.tensor,
                                           cnmf.SolverConfig(max_iters=args.iters))
    t2 = time.perf_counter()
    pick = PeakPickConfig(args.delta, args.half_window, spec.hop_seconds)
    events = activations_to_events(H, lib.pitches, pick)
    write_midi(events, args.out)
    outputs = {"midi": str(args.out)}
    if args.csv:
        write_activations_csv(H, args.csv, spec.hop_seconds, lib.midi_base)
        outputs["activations_csv"] = str(args.csv)
    if args.spectrogram_csv:
        write_spectrogram_csv(spec, args.spectrogram_csv)
        outputs["spectrogram_csv"] = str(args.spectrogram_csv)
    t3 = time.perf_counter()
    print(f"{len(events)} notes from {clip.duration:.2f}s of audio; "
          f"final KL {trace.final_cost:.6g}; solve {t2 - t1:.2f}s")
    _write_manifest(
        "transcribe",
        {"delta": args.delta, "iters": args.iters, "half_window": args.half_window,
         "first_seconds": args.first_seconds,
         "warm_start_iters": cnmf.WARM_START_ITERS, "epsilon": cnmf.EPS,
         "tau": lib.tau, "r": lib.r, "midi_base": lib.midi_base, **_stft_params(cfg)},
        {"audio": str(args.input), "library": str(args.lib)}, outputs,
        {"spectrogram": t1 - t0, "activations": t2 - t1, "postprocess": t3 - t2,
         "total": t3 - t0},
        {"final_kl": trace.final_cost, "n_events": len(events), "frames": int(H.shape[1])},
        args.manifest or f"{args.out}.manifest.json",
    )
    return EXIT_OK


def _pair_files(est_dir, ref_dir, est_suffix):
    est = {p.stem: p for p in Path(est_dir).iterdir() if p.suffix.lower() == est_suffix}
    ref = {p.stem: p for p in Path(ref_dir).iterdir() if p.suffix.lower() in (".mid", ".midi")}
    only_est = sorted(set(est) - set(ref))
    only_ref = sorted(set(ref) - set(est))
    if only_est or only_ref:
        raise DataError(
            "unmatched files: "
            + ", ".join([f"{s} (estimate only)" for s in only_est]
                        + [f"{s} (reference only)" for s in only_ref])
        )
    if not est:
        raise DataError(f"no files to evaluate in {est_dir}")
    return [(name, est[name], ref[name]) for name in sorted(est)]


def _grid(start, stop, step):
    """Inclusive of stop, rounded so 0.1 + 0.2 prints as 0.3."""
    if step <= 0:
        raise ValueError("--grid step must be positive")
    return [round(float(v), 6) for v in np.arange(start, stop + step / 2, step)]


def cmd_eval(args):
    t0 = time.perf_counter()
    results = {}
    if args.sweep:
        pairs = _pair_files(args.est, args.ref, ".csv")
        songs = []
        for name, est_path, ref_path in pairs:
            H, hop, base = read_activations_csv(est_path)
            pitches = [base + q for q in range(H.shape[0])]
            songs.append(Song(name, H, pitches, hop, read_midi(ref_path)))
        grid = default_grid() if args.grid is None else _grid(*args.grid)
        res = sweep_thresholds(songs, grid, args.sweep, args.tol, args.first_seconds)
        if args.sweep == "global":
            deltas = [res.best_global] * len(songs)
        else:
            deltas = res.best_per_song
        rows = report_rows(res.songs, res.chosen, deltas)
        rows += summary_rows(res.chosen, res.best_global if args.sweep == "global" else "per-song")
        results.update(best_global=res.best_global, best_per_song=dict(zip(res.songs, deltas)))
        if args.sweep_csv:
            _write_sweep_csv(res, args.sweep_csv)
    else:
        pairs = _pair_files(args.est, args.ref, ".mid")
        names, reports = [], []
        for name, est_path, ref_path in pairs:
            ref = truncate(read_midi(ref_path), args.first_seconds)
            est = truncate(read_midi(est_path), args.first_seconds)
            names.append(name)
            reports.append(score(ref, est, args.tol))
        rows = report_rows(names, reports) + summary_rows(reports)

    print(format_table(rows))
    write_report_csv(rows, args.out)
    summary = {r["song"]: {k: r[k] for k in ("P", "R", "F", "A")} for r in rows[-2:]}
    results["summary"] = summary
    _write_manifest(
        "eval",
        {"tol": args.tol, "first_seconds": args.first_seconds, "sweep": args.sweep,
         "grid": args.grid},
        {"est": str(args.est), "ref": str(args.ref)}, {"report": str(args.out)},
        {"total": time.perf_counter() - t0}, results,
        args.manifest or f"{args.out}.manifest.json",
    )
    return EXIT_OK


def _write_sweep_csv(res, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("delta,song,P,R,F,A,tp,fp,fn\n")
        for delta, row in zip(res.grid, res.reports):
            for name, rep in zip(res.songs, row):
                fh.write(f"{delta:.4f},{name},{rep.precision:.4f},{rep.recall:.4f},"
                         f"{rep.f_measure:.4f},{rep.accuracy:.4f},{rep.tp},{rep.fp},{rep.fn}\n")


def cmd_synthbench(args):
    from . import synthbench

    t0 = time.perf_counter()
    known = [name for name, _ in synthbench.CHECKS]
    unknown = [c for c in args.check or [] if c not in known]
    if unknown:
        raise ValueError(f"unknown check {unknown[0]!r}; choose from: {', '.join(known)}")
    results = synthbench.run(args.seed, args.scale, tamper=args.tamper, only=args.check)
    print(synthbench.format_results(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    _write_manifest(
        "synthbench", {"seed": args.seed, "scale": args.scale, "tamper": args.tamper},
        {}, {}, {"total": time.perf_counter() - t0},
        {r.name: {"passed": r.passed, "measured": r.measured} for r in results},
        args.manifest,
    )
    return EXIT_SUITE if failed else EXIT_OK


# -- parser ----------------------------------------------------------------

def _add_stft_args(p):
    d = StftConfig()
    g = p.add_argument_group("STFT")
    g.add_argument("--sample-rate", type=int, default=d.sample_rate)
    g.add_argument("--window-length", type=int, default=d.window_length)
    g.add_argument("--hop-length", type=int, default=d.hop_length)
    g.add_argument("--fft-size", type=int, default=d.fft_size)


def build_parser():
    parser = _Parser(prog="cnmf-amt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="learn one template per note from isolated recordings")
    p.add_argument("--notes", required=True, type=Path,
                   help="directory of <midi>_<name>.wav files (or MAPS ISOL/NO files with --maps)")
    p.add_argument("--tau", type=int, default=10)
    p.add_argument("--iters", type=int, default=cnmf.TRAIN_CONFIG.max_iters)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--range", type=int, nargs=2, metavar=("LO", "HI"),
                   help="required MIDI range, inclusive (default: lowest to highest found)")
    p.add_argument("--maps", action="store_true", help="parse MAPS isolated-note file names")
    p.add_argument("--intensity", default="M", choices=["P", "M", "F"],
                   help="MAPS intensity to keep (with --maps)")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--manifest", type=Path)
    _add_stft_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transcribe", help="transcribe a WAV file to MIDI")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--lib", required=True, type=Path)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=cnmf.TRANSCRIBE_CONFIG.max_iters)
    p.add_argument("--half-window", type=int, default=10)
    p.add_argument("--first-seconds", type=float, default=None, help="transcribe only the opening seconds")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--csv", type=Path, help="also write activations as CSV")
    p.add_argument("--spectrogram-csv", type=Path, help="also write the spectrogram as CSV")
    p.add_argument("--manifest", type=Path)
    _add_stft_args(p)
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("eval", help="note-wise scores against reference MIDI")
    p.add_argument("--est", required=True, type=Path,
                   help="estimated .mid files, or activation .csv files with --sweep")
    p.add_argument("--ref", required=True, type=Path)
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--first-seconds", type=float, default=None)
    p.add_argument("--sweep", choices=["global", "song"], default=None)
    p.add_argument("--grid", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
    p.add_argument("--sweep-csv", type=Path, help="write every (delta, song) score")
    p.add_argument("--out", type=Path, default=Path("eval_report.csv"))
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synthbench", help="run the synthetic self-verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=1)
    p.add_argument("--check", action="append", metavar="NAME",
                   help="run only the named check (repeatable)")
    p.add_argument("--tamper", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_synthbench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        # bad numeric parameters land here as ValueError from the config types
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc, OSError) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
