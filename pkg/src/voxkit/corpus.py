"""Synthetic corpora for training and evaluating the toy model.

`patterned`: token grids generated from a per-utterance style latent and a
slowly changing content sequence. Layer 0 depends only on content; deeper
layers depend on (style, content). Condition features reveal the content
clearly but carry only a faint, noisy style cue, so prompts (which expose the
style through clean tokens) add real information.

`tokenized-audio`: synthetic harmonic voices degraded through the distortion
chain, with clean audio RVQ-encoded into the target grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rvq
from .assets import SyntheticAssets, harmonic_voice
from .audio import AudioBuffer, stft_powerlaw
from .degrade import ChainPolicy, DegradationSpec, Task, apply_chain, sample_chain


@dataclass
class CorpusItem:
    grid: np.ndarray           # [layers, frames] clean tokens
    distorted: np.ndarray      # [frames, feat] condition features
    clean_feats: np.ndarray    # [frames, feat] alignment-target features
    task_id: int = 0
    style: int = -1
    meta: dict = field(default_factory=dict)


@dataclass
class ToyCorpus:
    items: list
    kind: str
    feat_dim: int
    vocab: int
    layers: int
    frames: int
    codec: rvq.RvqCodebooks = None
    stft: dict = None

    def split(self, n_held_out: int):
        return self.items[:-n_held_out], self.items[-n_held_out:]


def _item_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


# --- patterned ----------------------------------------------------------------

def _make_patterned(size: int, seed: int, frames: int = 128, vocab: int = 64,
                    layers: int = 4, styles: int = 8, contents: int = 8,
                    feat_dim: int = 16, content_change: float = 0.08,
                    style_cue: float = 0.25, noise_sigma: float = 1.0,
                    token_noise: float = 0.05) -> ToyCorpus:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))

    # style/layer-specific injective content->token maps; layer 0 is shared
    table = np.empty((styles, layers, contents), dtype=np.int64)
    base = rng.choice(vocab, size=contents, replace=False)
    table[:, 0, :] = base
    for s in range(styles):
        for layer in range(1, layers):
            table[s, layer] = rng.choice(vocab, size=contents, replace=False)

    def unit_rows(n):
        e = rng.standard_normal((n, feat_dim))
        return e / np.linalg.norm(e, axis=1, keepdims=True) * np.sqrt(feat_dim)

    e_content = unit_rows(contents)
    e_style = unit_rows(styles)

    items = []
    for i in range(size):
        irng = np.random.default_rng(_item_seed(seed, i))
        style = int(irng.integers(styles))
        content = np.empty(frames, dtype=np.int64)
        content[0] = irng.integers(contents)
        for f in range(1, frames):
            if irng.random() < content_change:
                content[f] = irng.integers(contents)
            else:
                content[f] = content[f - 1]
        grid = table[style][:, content]
        # irreducible corruption keeps masked-token prediction from
        # saturating, so the critic's mask labels stay tied to wrongness
        noise_pos = irng.random(grid.shape) < token_noise
        grid = np.where(noise_pos, irng.integers(0, vocab, grid.shape), grid)
        clean = e_content[content] + e_style[style]
        distorted = (e_content[content] + style_cue * e_style[style]
                     + noise_sigma * irng.standard_normal((frames, feat_dim)))
        items.append(CorpusItem(grid=grid, distorted=distorted,
                                clean_feats=clean, task_id=0, style=style,
                                meta={"content": content,
                                      "noise_pos": noise_pos}))
    return ToyCorpus(items=items, kind="patterned", feat_dim=feat_dim,
                     vocab=vocab, layers=layers, frames=frames)


# --- tokenized audio ----------------------------------------------------------

def _make_tokenized_audio(size: int, seed: int, rate: int = 16000,
                          duration_s: float = 2.0, window: int = 512,
                          hop: int = 256, exponent: float = 0.3,
                          vocab: int = 64, layers: int = 4,
                          extraction_frac: float = 0.25,
                          policy: ChainPolicy = None) -> ToyCorpus:
    if policy is None:
        # desk-scale policy: bandwidths above Nyquist would be no-ops
        policy = ChainPolicy(bandwidths_khz=(2, 4, 8)).for_sample_rate(rate)
    assets = SyntheticAssets()
    n = int(duration_s * rate)

    raw = []
    for i in range(size):
        irng = np.random.default_rng(_item_seed(seed, i))
        clean = AudioBuffer(0.6 * harmonic_voice(n, rate, irng), rate)
        task = Task.EXTRACTION if irng.random() < extraction_frac else Task.ENHANCEMENT
        spec = sample_chain(policy, task, _item_seed(seed, 2 * size + i))
        distorted = apply_chain(clean, spec, assets)
        clean_s = stft_powerlaw(clean, window, hop, exponent)
        dist_s = stft_powerlaw(distorted, window, hop, exponent)
        raw.append((clean, distorted, clean_s, dist_s, task, spec))

    pooled = np.concatenate([r[2].frames for r in raw], axis=0)
    books = rvq.train_rvq(pooled, layers=layers, vocab=vocab,
                          seed=_item_seed(seed, 1))

    items = []
    for clean, distorted, clean_s, dist_s, task, spec in raw:
        grid = rvq.encode(clean_s.frames, books)
        items.append(CorpusItem(
            grid=grid, distorted=dist_s.frames, clean_feats=clean_s.frames,
            task_id=0 if task == Task.ENHANCEMENT else 1,
            meta={"spec": spec, "clean_audio": clean, "distorted_audio": distorted}))
    frames = items[0].grid.shape[1]
    return ToyCorpus(items=items, kind="tokenized-audio",
                     feat_dim=items[0].distorted.shape[1], vocab=vocab,
                     layers=layers, frames=frames, codec=books,
                     stft={"window": window, "hop": hop, "exponent": exponent,
                           "rate": rate})


def make_toy_corpus(kind: str, size: int, seed: int, **overrides) -> ToyCorpus:
    if size < 1:
        raise ValueError("size must be >= 1")
    if kind == "patterned":
        return _make_patterned(size, seed, **overrides)
    if kind == "tokenized-audio":
        return _make_tokenized_audio(size, seed, **overrides)
    raise ValueError(f"unknown corpus kind {kind!r}")
