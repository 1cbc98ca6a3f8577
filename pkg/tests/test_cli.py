import json
import subprocess
import sys

import numpy as np
import pytest

from cnmf_amt.audio import write_wav
from cnmf_amt.cli import main
from cnmf_amt.midi import NoteEvent, read_midi, write_midi
from cnmf_amt.synth import damped_note, render
from cnmf_amt.templates import load_library

SR = 8000
# 50 ms windows, 20 ms hops at 8 kHz
STFT = ["--sample-rate", str(SR), "--window-length", "400", "--hop-length", "160", "--fft-size", "1024"]
PITCHES = [60, 64, 67]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    notes = root / "notes"
    notes.mkdir()
    for p in PITCHES:
        write_wav(notes / f"{p}_tone.wav", damped_note(p, 1.2, SR), SR)
    lib = root / "lib.tpl"
    assert main(["train", "--notes", str(notes), "--out", str(lib), "--tau", "6",
                 "--iters", "100", "--range", "60", "67"] + STFT) == 2
    for p in range(61, 67):
        if p not in PITCHES:
            write_wav(notes / f"{p}_tone.wav", damped_note(p, 1.2, SR), SR)
    assert main(["train", "--notes", str(notes), "--out", str(lib), "--tau", "6",
                 "--iters", "100"] + STFT) == 0
    return root


def test_missing_pitch_is_reported(tmp_path, capsys):
    notes = tmp_path / "notes"
    notes.mkdir()
    for p in (59, 61):
        write_wav(notes / f"{p}.wav", damped_note(p, 0.5, SR), SR)
    code = main(["train", "--notes", str(notes), "--out", str(tmp_path / "x.tpl")] + STFT)
    assert code == 2
    assert "missing template for MIDI 60" in capsys.readouterr().err
    assert not (tmp_path / "x.tpl").exists()


def test_duplicate_pitch_is_reported(tmp_path, capsys):
    notes = tmp_path / "notes"
    notes.mkdir()
    write_wav(notes / "60_a.wav", damped_note(60, 0.5, SR), SR)
    write_wav(notes / "60_b.wav", damped_note(60, 0.5, SR), SR)
    assert main(["train", "--notes", str(notes), "--out", str(tmp_path / "x.tpl")] + STFT) == 2
    assert "duplicate" in capsys.readouterr().err


def test_train_writes_library_and_manifest(workspace):
    lib = load_library(workspace / "lib.tpl")
    assert lib.pitches == list(range(60, 68))
    assert lib.tensor.shape == (513, 6, 8)
    np.testing.assert_allclose(lib.tensor.sum(axis=(0, 1)), 1.0, rtol=1e-9)
    assert lib.sources[0] == "60_tone.wav"
    manifest = json.loads((workspace / "lib.tpl.manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["parameters"]["tau"] == 6
    assert manifest["parameters"]["hop_length"] == 160
    assert set(manifest["results"]["per_note"]) == {str(p) for p in range(60, 68)}


def test_full_piano_library(tmp_path):
    sr = 22050
    notes = tmp_path / "notes"
    notes.mkdir()
    for p in range(21, 109):
        write_wav(notes / f"{p}.wav", damped_note(p, 0.4, sr), sr)
    out = tmp_path / "piano.tpl"
    args = ["train", "--notes", str(notes), "--out", str(out), "--tau", "3", "--iters", "20",
            "--sample-rate", str(sr), "--window-length", "882", "--hop-length", "441",
            "--fft-size", "1024"]
    assert main(args) == 0
    lib = load_library(out)
    assert lib.r == 88 and lib.midi_base == 21
    assert out.stat().st_size > 64 + 8 * 513 * 3 * 88


def test_maps_names(tmp_path):
    notes = tmp_path / "notes"
    notes.mkdir()
    for p in (60, 61):
        for dyn in "PMF":
            for sustain in (1, 0):
                write_wav(notes / f"MAPS_ISOL_NO_{dyn}_S{sustain}_M{p}_AkPnBcht.wav",
                          damped_note(p, 0.5, SR), SR)
    out = tmp_path / "maps.tpl"
    assert main(["train", "--notes", str(notes), "--out", str(out), "--maps", "--intensity", "F",
                 "--iters", "5", "--tau", "3"] + STFT) == 0
    assert load_library(out).sources == {0: "MAPS_ISOL_NO_F_S0_M60_AkPnBcht.wav",
                                         1: "MAPS_ISOL_NO_F_S0_M61_AkPnBcht.wav"}


def _planted_clip(path):
    events = [NoteEvent(0.5, 60), NoteEvent(1.5, 64), NoteEvent(2.5, 67)]
    write_wav(path, render(events, 4.0, SR), SR)
    return events


def test_overlapping_frames_still_find_each_note(workspace, capsys):
    wav = workspace / "planted.wav"
    planted = _planted_clip(wav)
    out = workspace / "planted.mid"
    csv = workspace / "planted.csv"
    assert main(["transcribe", "--in", str(wav), "--lib", str(workspace / "lib.tpl"),
                 "--out", str(out), "--csv", str(csv), "--delta", "0.1",
                 "--spectrogram-csv", str(workspace / "spec.csv")] + STFT) == 0
    assert (workspace / "spec.csv").read_text().startswith("# n=513 m=201 bin_hz=7.8125 hop_s=0.02")
    events = read_midi(out)
    for ev in planted:
        assert any(e.pitch == ev.pitch and abs(e.onset - ev.onset) <= 0.02 + 1e-9 for e in events)
    assert csv.read_text().startswith("# r=8 m=201 hop_s=0.02 midi_base=60")
    manifest = json.loads((workspace / "planted.mid.manifest.json").read_text())
    assert manifest["parameters"]["delta"] == 0.1
    assert manifest["results"]["n_events"] == len(events)
    assert set(manifest["timings_s"]) >= {"spectrogram", "activations", "total"}


def test_planted_sequence_gives_exactly_the_planted_notes(tmp_path):
    # window == hop and note length == tau frames: the mixture spectrogram is the training blocks placed in time
    stft = ["--sample-rate", str(SR), "--window-length", "160", "--hop-length", "160", "--fft-size", "512"]
    notes = tmp_path / "notes"
    notes.mkdir()
    clips = {p: damped_note(p, 0.2, SR) for p in (60, 61, 62)}
    for p, clip in clips.items():
        write_wav(notes / f"{p}.wav", clip, SR)
    lib = tmp_path / "lib.tpl"
    assert main(["train", "--notes", str(notes), "--out", str(lib), "--tau", "10"] + stft) == 0
    x = np.zeros(4 * SR)
    planted = [(0.5, 60), (1.5, 61), (2.5, 62)]
    for t, p in planted:
        start = int(t * SR)
        x[start:start + len(clips[p])] += clips[p]
    write_wav(tmp_path / "seq.wav", x, SR)
    out = tmp_path / "seq.mid"
    assert main(["transcribe", "--in", str(tmp_path / "seq.wav"), "--lib", str(lib),
                 "--out", str(out), "--delta", "0.05"] + stft) == 0
    events = read_midi(out)
    assert len(events) == 3
    for e, (t, p) in zip(events, planted):
        assert e.pitch == p and abs(e.onset - t) <= 0.02 + 1e-9


def test_transcribe_silence_gives_empty_midi(workspace):
    wav = workspace / "silence.wav"
    write_wav(wav, np.zeros(2 * SR), SR)
    out = workspace / "silence.mid"
    assert main(["transcribe", "--in", str(wav), "--lib", str(workspace / "lib.tpl"),
                 "--out", str(out)] + STFT) == 0
    assert read_midi(out) == []


def test_lower_delta_gives_more_notes(workspace):
    wav = workspace / "planted.wav"
    _planted_clip(wav)
    counts = []
    for delta in ("0", "0.1"):
        out = workspace / f"d{delta}.mid"
        assert main(["transcribe", "--in", str(wav), "--lib", str(workspace / "lib.tpl"),
                     "--out", str(out), "--delta", delta] + STFT) == 0
        counts.append(len(read_midi(out)))
    assert counts[0] > counts[1]


def test_transcribe_first_seconds(workspace):
    wav = workspace / "planted.wav"
    _planted_clip(wav)
    out = workspace / "crop.mid"
    csv = workspace / "crop.csv"
    assert main(["transcribe", "--in", str(wav), "--lib", str(workspace / "lib.tpl"), "--out", str(out),
                 "--csv", str(csv), "--first-seconds", "1.0"] + STFT) == 0
    assert csv.read_text().startswith("# r=8 m=51 ")
    assert all(e.onset < 1.0 for e in read_midi(out))


def test_transcribe_is_deterministic(workspace):
    wav = workspace / "planted.wav"
    _planted_clip(wav)
    blobs = []
    for k in range(2):
        out, csv = workspace / f"det{k}.mid", workspace / f"det{k}.csv"
        assert main(["transcribe", "--in", str(wav), "--lib", str(workspace / "lib.tpl"),
                     "--out", str(out), "--csv", str(csv)] + STFT) == 0
        blobs.append((out.read_bytes(), csv.read_bytes()))
    assert blobs[0] == blobs[1]


def test_transcribe_refuses_mismatched_config(workspace, capsys):
    wav = workspace / "planted.wav"
    _planted_clip(wav)
    args = ["transcribe", "--in", str(wav), "--lib", str(workspace / "lib.tpl"),
            "--out", str(workspace / "bad.mid")] + STFT
    args[args.index("--hop-length") + 1] = "80"
    assert main(args) == 2
    assert "hop" in capsys.readouterr().err


def test_bad_library_file(workspace, tmp_path, capsys):
    junk = tmp_path / "junk.tpl"
    junk.write_bytes(b"hello world" * 10)
    assert main(["transcribe", "--in", str(workspace / "planted.wav"), "--lib", str(junk),
                 "--out", str(tmp_path / "x.mid")] + STFT) == 2
    assert "not a template library" in capsys.readouterr().err


def _eval_dirs(tmp_path, ref_events, est_events):
    est, ref = tmp_path / "est", tmp_path / "ref"
    est.mkdir()
    ref.mkdir()
    write_midi(ref_events, ref / "song.mid")
    write_midi(est_events, est / "song.mid")
    return est, ref


def test_eval_identical_is_perfect(tmp_path):
    ref_events = [NoteEvent(0.5 * k, 60 + k % 5) for k in range(1, 11)]
    est, ref = _eval_dirs(tmp_path, ref_events, ref_events)
    out = tmp_path / "report.csv"
    assert main(["eval", "--est", str(est), "--ref", str(ref), "--out", str(out)]) == 0
    row = out.read_text().splitlines()[1].split(",")
    assert row[0] == "song" and row[4] == "1.0000"


def test_eval_counts(tmp_path):
    ref_events = [NoteEvent(0.5 * k, 60) for k in range(1, 11)]
    est_events = ref_events[:8] + [NoteEvent(10.0, 60), NoteEvent(11.0, 61)]
    est, ref = _eval_dirs(tmp_path, ref_events, est_events)
    out = tmp_path / "report.csv"
    assert main(["eval", "--est", str(est), "--ref", str(ref), "--out", str(out)]) == 0
    header, row = out.read_text().splitlines()[:2]
    assert header == "song,delta,P,R,F,A,tp,fp,fn"
    assert row == "song,,0.8000,0.8000,0.8000,0.6667,8,2,2"
    manifest = json.loads((tmp_path / "report.csv.manifest.json").read_text())
    assert manifest["parameters"]["tol"] == 0.05


def test_eval_tolerance_flag(tmp_path):
    est, ref = _eval_dirs(tmp_path, [NoteEvent(1.0, 60)], [NoteEvent(1.07, 60)])
    out = tmp_path / "r.csv"
    assert main(["eval", "--est", str(est), "--ref", str(ref), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[1].endswith("0,1,1")
    assert main(["eval", "--est", str(est), "--ref", str(ref), "--out", str(out), "--tol", "0.1"]) == 0
    assert out.read_text().splitlines()[1].endswith("1,0,0")


def test_eval_unmatched_files(tmp_path, capsys):
    est, ref = _eval_dirs(tmp_path, [NoteEvent(1.0, 60)], [NoteEvent(1.0, 60)])
    write_midi([], ref / "other.mid")
    assert main(["eval", "--est", str(est), "--ref", str(ref), "--out", str(tmp_path / "r.csv")]) == 2
    assert "other (reference only)" in capsys.readouterr().err


def test_eval_sweep_from_activations(workspace, tmp_path):
    est, ref = tmp_path / "est", tmp_path / "ref"
    est.mkdir()
    ref.mkdir()
    wav = workspace / "planted.wav"
    planted = _planted_clip(wav)
    assert main(["transcribe", "--in", str(wav), "--lib", str(workspace / "lib.tpl"),
                 "--out", str(tmp_path / "x.mid"), "--csv", str(est / "planted.csv")] + STFT) == 0
    write_midi(planted, ref / "planted.mid")
    out = tmp_path / "sweep.csv"
    sweep = tmp_path / "all.csv"
    assert main(["eval", "--est", str(est), "--ref", str(ref), "--out", str(out),
                 "--sweep", "global", "--sweep-csv", str(sweep)]) == 0
    rows = out.read_text().splitlines()
    assert rows[1].split(",")[4] == "1.0000"
    assert len(sweep.read_text().splitlines()) == 1 + 40
    assert main(["eval", "--est", str(est), "--ref", str(ref), "--out", str(out),
                 "--sweep", "song", "--grid", "0.1", "0.3", "0.1"]) == 0
    manifest = json.loads((tmp_path / "sweep.csv.manifest.json").read_text())
    assert manifest["results"]["best_per_song"]["planted"] in (0.1, 0.2, 0.3)


def test_synthbench_tamper_fails(capsys):
    code = main(["synthbench", "--check", "monotone KL descent", "--tamper"])
    assert code == 3
    assert "FAIL" in capsys.readouterr().out


def test_synthbench_passes(tmp_path, capsys):
    manifest = tmp_path / "bench.json"
    assert main(["synthbench", "--manifest", str(manifest)]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 9 and "FAIL" not in out
    assert all(v["passed"] for v in json.loads(manifest.read_text())["results"].values())


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert main(["synthbench", "--check", "nope"]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cnmf_amt", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "transcribe", "eval", "synthbench"):
        assert cmd in proc.stdout
