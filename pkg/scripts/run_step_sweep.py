#!/usr/bin/env python3
"""Train the patterned-corpus model and sweep sampler steps x confidence
modes, writing the accuracy-vs-steps CSV (the self-critic benefit curve).

Usage: python scripts/run_step_sweep.py [--steps 2500] [--out sweep.csv]
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from voxkit import evalkit
from voxkit.corpus import make_toy_corpus
from voxkit.evalkit import SweepItem, masked_accuracy_tf
from voxkit.model import ContractAdapter, TrainConfig, encode_semantic
from voxkit.training import train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2500)
    ap.add_argument("--corpus-size", type=int, default=512)
    ap.add_argument("--held-out", type=int, default=16)
    ap.add_argument("--s-list", type=int, nargs="+", default=[4, 8, 16])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--out", default="sweep.csv")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = TrainConfig(total_steps=args.steps, seed=args.seed)
    corpus = make_toy_corpus("patterned", args.corpus_size, args.seed)
    held = corpus.items[-args.held_out:]
    corpus.items = corpus.items[:-args.held_out]

    t0 = time.time()
    result = train(cfg, corpus, progress=lambda s, tr: print(
        f"step {s}: l_mask={tr.l_mask:.3f} l_critic={tr.l_critic:.3f} "
        f"({time.time() - t0:.0f}s)", flush=True))
    model, fx = result.model, result.fx
    model.eval()

    acc = masked_accuracy_tf(model, fx, held, seed=args.seed + 1)
    print(f"held-out masked accuracy: {acc:.4f}")

    items = [SweepItem(truth=it.grid,
                       cond=encode_semantic(model, it.distorted, it.task_id, fx))
             for it in held]
    reports = evalkit.step_sweep(
        ContractAdapter(model), items, args.s_list,
        ["vanilla", "self_critic"], seeds=args.seeds, csv_path=args.out)
    for r in reports:
        print(f"mode={r.mode:12s} S={r.steps:3d} seed={r.seed} "
              f"acc={r.token_accuracy:.4f}")
    by_cell = {}
    for r in reports:
        by_cell.setdefault((r.mode, r.steps), []).append(r.token_accuracy)
    for s in args.s_list:
        v = np.mean(by_cell[("vanilla", s)])
        c = np.mean(by_cell[("self_critic", s)])
        print(f"S={s}: vanilla={v:.4f} self_critic={c:.4f} diff={c - v:+.4f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
