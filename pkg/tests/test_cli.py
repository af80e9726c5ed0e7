import csv
import json

import numpy as np
import pytest

from voxkit.audio import AudioBuffer, read_wav, write_wav
from voxkit.cli import main as cli_main
from voxkit.degrade import DegradationSpec, DistortionKind
from voxkit.maskgen import MASK_TOKEN
from voxkit import rvq


def run(args):
    return cli_main([str(a) for a in args])


class TestDegradeCommand:
    def test_empty_input_dir(self, tiny_audio_config, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        out = tmp_path / "out"
        rc = run(["degrade", "--config", tiny_audio_config, "--in", empty,
                  "--out", out, "--seed", 0])
        assert rc == 0
        assert (out / "manifest.jsonl").read_text() == ""

    def test_manifest_and_outputs(self, tiny_audio_config, wav_dir, tmp_path):
        out = tmp_path / "out"
        rc = run(["degrade", "--config", tiny_audio_config, "--in", wav_dir,
                  "--out", out, "--seed", 7])
        assert rc == 0
        records = [json.loads(x) for x in
                   (out / "manifest.jsonl").read_text().splitlines()]
        assert len(records) == 3
        for rec in records:
            assert (out / rec["clean_path"]).exists()
            assert (out / rec["distorted_path"]).exists()
            DegradationSpec.from_json(json.dumps(rec["spec"]))
        assert (out / "run_meta.json").exists()

    def test_extraction_always_includes_interferer(self, tiny_audio_config,
                                                   wav_dir, tmp_path):
        out = tmp_path / "out"
        run(["degrade", "--config", tiny_audio_config, "--in", wav_dir,
             "--out", out, "--seed", 7, "--task", "extraction"])
        for line in (out / "manifest.jsonl").read_text().splitlines():
            spec = DegradationSpec.from_json(json.dumps(json.loads(line)["spec"]))
            assert DistortionKind.OTHER_VOICE in spec.kinds()

    def test_same_seed_byte_identical_manifest(self, tiny_audio_config,
                                               wav_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["degrade", "--config", tiny_audio_config, "--in", wav_dir,
             "--out", a, "--seed", 11])
        run(["degrade", "--config", tiny_audio_config, "--in", wav_dir,
             "--out", b, "--seed", 11, "--jobs", 2])
        assert (a / "manifest.jsonl").read_bytes() == \
            (b / "manifest.jsonl").read_bytes()

    def test_missing_input_dir_is_io_error(self, tiny_audio_config, tmp_path):
        rc = run(["degrade", "--config", tiny_audio_config,
                  "--in", tmp_path / "nope", "--out", tmp_path / "o"])
        assert rc == 3


class TestTrainCommand:
    def test_smoke_run_artifacts(self, tiny_audio_run):
        assert (tiny_audio_run / "checkpoint.vox").exists()
        assert (tiny_audio_run / "codebooks.rvq").exists()
        lines = (tiny_audio_run / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == 40
        rec = json.loads(lines[0])
        assert set(rec) == {"step", "l_mask", "l_repa", "l_critic", "lr"}

    def test_invalid_config_key_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"model": {"dimension": 64}}))
        rc = run(["train", "--config", bad, "--out", tmp_path / "o"])
        assert rc == 2
        assert "dimension" in capsys.readouterr().err

    def test_resume_continues_bit_exact(self, tiny_audio_config, tmp_path):
        full = tmp_path / "full"
        rc = run(["train", "--config", tiny_audio_config, "--out", full,
                  "--steps", 12])
        assert rc == 0
        part = tmp_path / "part"
        run(["train", "--config", tiny_audio_config, "--out", part,
             "--steps", 6])
        resumed = tmp_path / "resumed"
        rc = run(["train", "--config", tiny_audio_config, "--out", resumed,
                  "--steps", 12, "--resume", part / "checkpoint.vox"])
        assert rc == 0
        tail = (full / "train_log.jsonl").read_text().splitlines()[6:]
        resumed_lines = (resumed / "train_log.jsonl").read_text().splitlines()
        assert resumed_lines == tail


class TestEnhanceCommand:
    def test_without_prompt_completes(self, tiny_audio_config, tiny_audio_run,
                                       wav_dir, tmp_path):
        out = tmp_path / "enh"
        rc = run(["enhance", "--config", tiny_audio_config,
                  "--checkpoint", tiny_audio_run / "checkpoint.vox",
                  "--in-wav", wav_dir / "utt_0.wav", "--out", out,
                  "--seed", 4, "--trace"])
        assert rc == 0
        data = np.load(out / "enhanced.npz")
        assert (data["grid"] != MASK_TOKEN).all()
        assert data["features"].shape[0] == data["grid"].shape[1]
        assert (out / "sampler_trace.jsonl").exists()

    def test_prompt_prefix_equals_encoded_prompt(self, tiny_audio_config,
                                                 tiny_audio_run, wav_dir,
                                                 tmp_path):
        from voxkit.audio import stft_powerlaw
        out = tmp_path / "enh"
        rc = run(["enhance", "--config", tiny_audio_config,
                  "--checkpoint", tiny_audio_run / "checkpoint.vox",
                  "--in-wav", wav_dir / "utt_0.wav",
                  "--prompt-wav", wav_dir / "utt_1.wav",
                  "--out", out, "--seed", 4])
        assert rc == 0
        data = np.load(out / "enhanced.npz")
        books = rvq.load_codebooks(tiny_audio_run / "codebooks.rvq")
        prompt = read_wav(wav_dir / "utt_1.wav")
        pgrid = rvq.encode(stft_powerlaw(prompt, 256, 128, 0.3).frames, books)
        pf = int(data["prompt_frames"])
        assert pf == pgrid.shape[1]
        assert np.array_equal(data["grid"][:, :pf], pgrid)

    def test_same_seed_identical_output(self, tiny_audio_config,
                                        tiny_audio_run, wav_dir, tmp_path):
        grids = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            run(["enhance", "--config", tiny_audio_config,
                 "--checkpoint", tiny_audio_run / "checkpoint.vox",
                 "--in-wav", wav_dir / "utt_2.wav", "--out", out,
                 "--seed", 9])
            grids.append(np.load(out / "enhanced.npz")["grid"])
        assert np.array_equal(grids[0], grids[1])

    def test_bad_checkpoint_path_is_io_error(self, tiny_audio_config,
                                             wav_dir, tmp_path):
        rc = run(["enhance", "--config", tiny_audio_config,
                  "--checkpoint", tmp_path / "missing.vox",
                  "--in-wav", wav_dir / "utt_0.wav",
                  "--out", tmp_path / "o"])
        assert rc == 3


class TestEvalCommand:
    def test_oracle_rows_all_perfect(self, tiny_audio_config, tiny_audio_run,
                                     tmp_path):
        out = tmp_path / "ev"
        rc = run(["eval", "--config", tiny_audio_config,
                  "--checkpoint", tiny_audio_run / "checkpoint.vox",
                  "--out", out, "--oracle-model"])
        assert rc == 0
        with open(out / "report.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2 * 2 * 2  # s_list x modes x seeds
        assert all(float(r["token_accuracy"]) == 1.0 for r in rows)

    def test_sweep_alias_row_count(self, tiny_audio_config, tiny_audio_run,
                                   tmp_path):
        out = tmp_path / "sw"
        rc = run(["sweep", "--config", tiny_audio_config,
                  "--checkpoint", tiny_audio_run / "checkpoint.vox",
                  "--out", out])
        assert rc == 0
        with open(out / "report.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 8
        assert all(0.0 <= float(r["token_accuracy"]) <= 1.0 for r in rows)
        assert all(float(r["lsd_db"]) >= 0.0 for r in rows)

    def test_emit_critic_map(self, tiny_audio_config, tiny_audio_run, wav_dir,
                             tmp_path):
        out = tmp_path / "map"
        rc = run(["eval", "--config", tiny_audio_config,
                  "--checkpoint", tiny_audio_run / "checkpoint.vox",
                  "--out", out, "--emit-critic-map", wav_dir / "utt_0.wav"])
        assert rc == 0
        lines = (out / "critic_map.csv").read_text().splitlines()
        assert lines[0] == "frame,score"
        scores = [float(x.split(",")[1]) for x in lines[1:]]
        assert all(0.0 <= s <= 1.0 for s in scores)
