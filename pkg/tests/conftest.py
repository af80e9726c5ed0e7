import json

import numpy as np
import pytest

from voxkit.audio import AudioBuffer, write_wav
from voxkit.assets import harmonic_voice
from voxkit.cli import main as cli_main

TINY_AUDIO_CONFIG = {
    "audio": {"sample_rate": 16000, "stft_window": 256, "stft_hop": 128,
              "power_exponent": 0.3},
    "tokenizer": {"layers": 2, "vocab": 32},
    "model": {"dim": 32, "l_enc": 1, "l_dec": 1, "n_heads": 2, "mlp_ratio": 2,
              "vocab": 32, "rvq_layers": 2, "feat_dim": 129,
              "total_steps": 40, "warmup_steps": 8, "batch": 4,
              "seq_frames": 74, "prompt_frames": 12, "p_prompt": 0.5,
              "lr": 1e-3},
    "corpus": {"kind": "tokenized-audio", "size": 10, "duration_s": 0.6,
               "held_out": 4},
    "sampler": {"steps": 4, "mode": "vanilla", "prompt_frames": 8},
    "eval": {"s_list": [2, 4], "modes": ["vanilla", "self_critic"],
             "seeds": [0, 1], "items": 4},
    "seeds": {"degrade": 3, "train": 0, "eval": 1, "corpus": 2},
}


@pytest.fixture(scope="session")
def tiny_audio_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny_audio.json"
    path.write_text(json.dumps(TINY_AUDIO_CONFIG, indent=2))
    return path


@pytest.fixture(scope="session")
def tiny_audio_run(tiny_audio_config, tmp_path_factory):
    """Train the tiny tokenized-audio model once via the CLI; returns the run
    directory holding checkpoint.vox and codebooks.rvq."""
    out = tmp_path_factory.mktemp("train_run")
    rc = cli_main(["train", "--config", str(tiny_audio_config),
                   "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def wav_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("wavs")
    for i in range(3):
        rng = np.random.default_rng(100 + i)
        x = 0.5 * harmonic_voice(9600, 16000, rng)
        write_wav(AudioBuffer(x, 16000), d / f"utt_{i}.wav")
    return d
