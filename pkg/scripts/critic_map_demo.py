#!/usr/bin/env python3
"""Train the tokenized-audio model, corrupt half of a held-out utterance with
noise, and print the critic head's per-frame scores for both halves (the
critic-localization picture).

Usage: python scripts/critic_map_demo.py [--steps 1500]
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from voxkit import rvq
from voxkit.audio import AudioBuffer, stft_powerlaw
from voxkit.corpus import make_toy_corpus
from voxkit.degrade import mix_at_snr
from voxkit.model import TrainConfig, critic_forward, encode_semantic
from voxkit.training import train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--corpus-size", type=int, default=96)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--snr-db", type=float, default=0.0)
    args = ap.parse_args()

    corpus = make_toy_corpus("tokenized-audio", args.corpus_size, args.seed,
                             duration_s=2.0, window=512, hop=256)
    cfg = TrainConfig(dim=96, l_dec=2, feat_dim=corpus.feat_dim,
                      total_steps=args.steps, warmup_steps=150,
                      seq_frames=corpus.frames, prompt_frames=corpus.frames * 3 // 8,
                      seed=args.seed)
    held = corpus.items[-8:]
    corpus.items = corpus.items[:-8]

    t0 = time.time()
    result = train(cfg, corpus, progress=lambda s, tr: print(
        f"step {s}: l_mask={tr.l_mask:.3f} l_critic={tr.l_critic:.3f} "
        f"({time.time() - t0:.0f}s)", flush=True))
    model, fx = result.model, result.fx
    model.eval()

    stft = corpus.stft
    for i, item in enumerate(held[:4]):
        clean = item.meta["clean_audio"]
        half = len(clean) // 2
        rng = np.random.default_rng(1000 + i)
        noise = np.zeros(len(clean))
        noise[half:] = rng.standard_normal(len(clean) - half)
        noised = mix_at_snr(clean, AudioBuffer(noise, clean.sample_rate),
                            args.snr_db)
        spec = stft_powerlaw(noised, stft["window"], stft["hop"],
                             stft["exponent"])
        grid = rvq.encode(spec.frames, corpus.codec)
        cond = encode_semantic(model, spec.frames, 0, fx)
        scores = critic_forward(model, grid, cond).mean(axis=0)
        mid = len(scores) // 2
        print(f"utterance {i}: clean-half score {scores[:mid].mean():.3f}  "
              f"noised-half score {scores[mid:].mean():.3f}")


if __name__ == "__main__":
    main()
