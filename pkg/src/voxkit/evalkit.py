"""Reference-based metrics computable without pretrained networks, plus the
step-sweep driver that produces accuracy curves across sampler settings.

These stand in for perceptual metrics at desk scale: token accuracy and
log-spectral distance track restoration fidelity, critic ROC-AUC tracks how
well the critic head localizes corrupted content.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats as sstats

from . import maskgen, rvq
from .audio import AudioBuffer, Spectrogram
from .errors import LengthMismatch, ShapeMismatch, SingleClass
from .maskgen import Condition, MaskSchedule, forward_mask


def snr_db(reference: AudioBuffer, test: AudioBuffer) -> float:
    """10 log10(sum ref^2 / sum (test-ref)^2); +inf when the residual is zero."""
    if len(reference) != len(test) or reference.sample_rate != test.sample_rate:
        raise LengthMismatch("signals must share length and rate")
    num = float(np.sum(reference.samples ** 2))
    den = float(np.sum((test.samples - reference.samples) ** 2))
    if den == 0.0:
        return math.inf
    return 10.0 * math.log10(num / den) if num > 0 else -math.inf


def lsd_db(reference: Spectrogram, test: Spectrogram, floor: float = 1e-8) -> float:
    """Mean-over-frames RMS of the per-bin 10*log10 magnitude ratio."""
    if reference.frames.shape != test.frames.shape:
        raise ShapeMismatch(f"{reference.frames.shape} vs {test.frames.shape}")
    a = np.maximum(reference.frames, floor)
    b = np.maximum(test.frames, floor)
    d = 10.0 * np.log10(b / a)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=1))))


class TokenAccuracy(NamedTuple):
    value: float
    n_scored: int


def token_accuracy(pred: np.ndarray, truth: np.ndarray,
                   mask: np.ndarray = None) -> TokenAccuracy:
    """Fraction of equal entries; restricted to `mask` when given. An empty
    scope yields 1.0 with n_scored == 0."""
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    if (np.asarray(pred) == maskgen.MASK_TOKEN).any():
        raise ShapeMismatch("pred contains MASK entries")
    eq = pred == truth
    if mask is not None:
        if mask.shape != pred.shape:
            raise ShapeMismatch(f"mask {mask.shape} vs pred {pred.shape}")
        n = int(mask.sum())
        if n == 0:
            return TokenAccuracy(1.0, 0)
        return TokenAccuracy(float(eq[mask].mean()), n)
    return TokenAccuracy(float(eq.mean()), eq.size)


def critic_auc(scores, labels) -> float:
    """ROC-AUC via the Mann-Whitney rank statistic (midranks on ties)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("need both positive and negative labels")
    ranks = sstats.rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --- sweep driver ---------------------------------------------------------------

@dataclass
class SweepItem:
    truth: np.ndarray
    cond: Condition
    prompt_cond: Condition = None       # condition with silenced prompt prefix
    clean_feats: np.ndarray = None      # spectral frames for LSD, optional


@dataclass
class EvalReport:
    mode: str
    steps: int
    seed: int
    token_accuracy: float
    lsd_db: float = math.nan
    critic_auc: float = math.nan
    per_utterance: list = field(default_factory=list)


CSV_HEADER = ["mode", "steps", "seed", "token_accuracy", "lsd_db", "critic_auc"]


def _cell_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def step_sweep(model, items, s_list, modes, seeds=(0,), temperature: float = 1.0,
               codec: rvq.RvqCodebooks = None, stft_params: dict = None,
               use_prompt: bool = False, prompt_frames: int = 0,
               compute_auc: bool = False, csv_path=None,
               schedule: MaskSchedule = None) -> list:
    """Run the sampler over every (mode, steps, seed) cell and aggregate
    token accuracy (plus LSD / critic AUC when the inputs allow them).

    `model` is either a sampler contract or a callable item -> contract.
    """
    factory = model if callable(model) else (lambda item: model)
    reports = []
    for mode in modes:
        for s in s_list:
            for seed in seeds:
                accs, lsds, aucs, per_utt = [], [], [], []
                for i, item in enumerate(items):
                    contract = factory(item)
                    layers, frames = item.truth.shape
                    pf = prompt_frames if use_prompt else 0
                    prompt = item.truth[:, :pf] if pf else None
                    cond = item.prompt_cond if (pf and item.prompt_cond) else item.cond
                    grid = maskgen.sample(
                        contract, cond, frames=frames, layers=layers, steps=s,
                        mode=mode, prompt=prompt, temperature=temperature,
                        seed=_cell_seed(seed, i), schedule=schedule)
                    acc = token_accuracy(grid[:, pf:], item.truth[:, pf:]).value
                    accs.append(acc)
                    row = {"token_accuracy": acc}
                    if codec is not None and item.clean_feats is not None:
                        rec = rvq.decode(grid, codec)
                        ref = Spectrogram(item.clean_feats, 0, 0, 1.0)
                        hyp = Spectrogram(rec, 0, 0, 1.0)
                        row["lsd_db"] = lsd_db(ref, hyp)
                        lsds.append(row["lsd_db"])
                    if compute_auc and hasattr(contract, "critic_scores"):
                        rng = np.random.default_rng(_cell_seed(seed, 10_000 + i))
                        replaced = rng.random(item.truth.shape) < 0.25
                        noisy = item.truth.copy()
                        vocab = int(item.truth.max()) + 1
                        noisy[replaced] = rng.integers(0, vocab,
                                                       size=int(replaced.sum()))
                        scores = contract.critic_scores(noisy, item.cond)
                        try:
                            row["critic_auc"] = critic_auc(scores, replaced)
                            aucs.append(row["critic_auc"])
                        except SingleClass:
                            pass
                    per_utt.append(row)
                reports.append(EvalReport(
                    mode=mode, steps=s, seed=seed,
                    token_accuracy=float(np.mean(accs)),
                    lsd_db=float(np.mean(lsds)) if lsds else math.nan,
                    critic_auc=float(np.mean(aucs)) if aucs else math.nan,
                    per_utterance=per_utt))
    if csv_path is not None:
        write_reports_csv(reports, csv_path)
    return reports


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow([r.mode, r.steps, r.seed,
                        f"{r.token_accuracy:.6f}",
                        f"{r.lsd_db:.6f}", f"{r.critic_auc:.6f}"])


# --- teacher-forcing evaluation --------------------------------------------------

def masked_accuracy_tf(model, fx, items, seed: int = 0,
                       schedule: MaskSchedule = None) -> float:
    """Held-out masked-token accuracy under the training-time distribution:
    per item, draw t ~ U(0, T], mask, predict argmax at masked positions."""
    from .model import decode_logits, encode_semantic   # lazy: torch boundary

    schedule = schedule or MaskSchedule()
    rng = np.random.default_rng(seed)
    hit, total = 0, 0
    for item in items:
        t = (1.0 - rng.random()) * schedule.horizon
        state = forward_mask(item.grid, t, schedule,
                             seed=int(rng.integers(2 ** 31)))
        cond = encode_semantic(model, item.distorted, item.task_id, fx)
        logits = decode_logits(model, state, cond)
        pred = logits.argmax(axis=-1)
        hit += int((pred[state.mask] == item.grid[state.mask]).sum())
        total += int(state.mask.sum())
    return hit / max(1, total)
