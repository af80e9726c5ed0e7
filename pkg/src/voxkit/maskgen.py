"""Masked generative core: schedule, forward masking, and the reverse sampler.

The sampler is model-agnostic: it talks to any object exposing

    predict_logits(state: MaskState, cond: Condition) -> [layers, frames, vocab]
    critic_scores(grid, cond) -> [layers, frames] in [0, 1]

Grids are int64 arrays [layers, frames]; MASK_TOKEN (-1) marks masked entries.
Two confidence modes are supported: ``vanilla`` scores only tokens filled at
the current step (committed tokens are pinned at confidence 1, so the greedy
loop never revisits them) and ``self_critic`` re-scores every non-prompt
position with the critic head, letting the sampler regret earlier commits.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Protocol

import numpy as np

from .errors import ContractViolation, MaskedInput, OutOfDomain, ShapeMismatch

MASK_TOKEN = -1


@dataclass(frozen=True)
class MaskSchedule:
    """sin-ramp mask schedule on (0, T]: fraction masked at time t."""

    horizon: float = 1.0

    def gamma(self, t: float) -> float:
        if not (0.0 < t <= self.horizon):
            raise OutOfDomain(f"t={t} outside (0, {self.horizon}]")
        return math.sin(math.pi * t / (2.0 * self.horizon))

    def gamma_limit(self, t: float) -> float:
        """gamma extended to t=0 by its continuous limit (0)."""
        if t == 0.0:
            return 0.0
        return self.gamma(t)


def gamma(schedule: MaskSchedule, t: float) -> float:
    return schedule.gamma(t)


@dataclass
class MaskState:
    """Current grid X_t with its mask matrix; prompt prefix is never maskable."""

    grid: np.ndarray
    mask: np.ndarray
    prompt_frames: int = 0

    def __post_init__(self):
        if self.grid.shape != self.mask.shape:
            raise ShapeMismatch(f"grid {self.grid.shape} vs mask {self.mask.shape}")
        if self.prompt_frames and self.mask[:, :self.prompt_frames].any():
            raise ShapeMismatch("prompt frames cannot be masked")

    @property
    def layers(self) -> int:
        return self.grid.shape[0]

    @property
    def frames(self) -> int:
        return self.grid.shape[1]


@dataclass
class Condition:
    """Conditioning bundle: per-frame semantic features plus the task id."""

    semantic: np.ndarray
    task_id: int


class ModelContract(Protocol):
    def predict_logits(self, state: MaskState, cond: Condition) -> np.ndarray: ...

    def critic_scores(self, grid: np.ndarray, cond: Condition) -> np.ndarray: ...


# --- forward process ----------------------------------------------------------

def forward_mask(clean: np.ndarray, t: float, schedule: MaskSchedule,
                 prompt_frames: int = 0, seed: int = 0,
                 granularity: str = "position") -> MaskState:
    """Mask each non-prompt position i.i.d. with probability gamma(t).

    granularity="frame" masks whole frames (all layers at once) instead of
    independent (layer, frame) positions.
    """
    g = schedule.gamma(t)
    layers, frames = clean.shape
    if prompt_frames >= frames:
        raise OutOfDomain(f"prompt_frames {prompt_frames} >= frames {frames}")
    rng = np.random.default_rng(seed)
    if granularity == "position":
        mask = rng.random((layers, frames)) < g
    elif granularity == "frame":
        mask = np.broadcast_to(rng.random(frames) < g, (layers, frames)).copy()
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    mask[:, :prompt_frames] = False
    grid = np.where(mask, MASK_TOKEN, clean)
    return MaskState(grid=grid, mask=mask, prompt_frames=prompt_frames)


class MaskedNll(NamedTuple):
    value: float
    n_masked: int


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def masked_nll(logits: np.ndarray, state: MaskState, target: np.ndarray) -> MaskedNll:
    """Mean negative log-likelihood over masked positions only.

    Empty masks yield value 0.0 with n_masked == 0 so callers can tell the
    degenerate case apart from a perfect fit.
    """
    if logits.shape[:2] != state.grid.shape or target.shape != state.grid.shape:
        raise ShapeMismatch(f"logits {logits.shape} / target {target.shape} "
                            f"vs grid {state.grid.shape}")
    n = int(state.mask.sum())
    if n == 0:
        return MaskedNll(0.0, 0)
    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, target[..., None], axis=-1)[..., 0]
    return MaskedNll(float(-picked[state.mask].mean()), n)


def remask_count(n: int, t: int, s: int, schedule: MaskSchedule) -> int:
    """floor(N * gamma((t-1)/S * T)); zero at t=1 via the gamma(0) limit."""
    if n < 0 or not (1 <= t <= s):
        raise OutOfDomain(f"need 0 <= N and 1 <= t <= S, got N={n} t={t} S={s}")
    frac = (t - 1) / s * schedule.horizon
    return int(math.floor(n * schedule.gamma_limit(frac)))


# --- confidence scoring -------------------------------------------------------

def _softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def vanilla_confidence(logits: np.ndarray, sampled: np.ndarray,
                       state: MaskState) -> np.ndarray:
    """Model probability of the sampled token at positions masked this step;
    exactly 1 at committed and prompt positions."""
    if logits.shape[:2] != sampled.shape or sampled.shape != state.grid.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs sampled {sampled.shape}")
    probs = _softmax(logits)
    conf = np.ones(sampled.shape, dtype=np.float64)
    picked = np.take_along_axis(probs, sampled[..., None], axis=-1)[..., 0]
    conf[state.mask] = picked[state.mask]
    return conf


def self_critic_confidence(model: ModelContract, x_tilde: np.ndarray,
                           cond: Condition, prompt_frames: int = 0) -> np.ndarray:
    """1 - critic score at every non-prompt position (committed ones too,
    enabling regret); +inf sentinel on the prompt prefix."""
    if (x_tilde == MASK_TOKEN).any():
        raise MaskedInput("x_tilde must be fully committed")
    scores = np.asarray(model.critic_scores(x_tilde, cond), dtype=np.float64)
    if scores.shape != x_tilde.shape:
        raise ContractViolation(f"critic shape {scores.shape} != {x_tilde.shape}")
    if not np.all(np.isfinite(scores)) or scores.min() < 0.0 or scores.max() > 1.0:
        raise ContractViolation("critic scores outside [0, 1]")
    conf = 1.0 - scores
    conf[:, :prompt_frames] = np.inf
    return conf


def compose_x_tilde(sampled: np.ndarray, state: MaskState,
                    reference: np.ndarray) -> np.ndarray:
    """sampled where the mask is set, reference elsewhere."""
    if sampled.shape != state.mask.shape or reference.shape != state.mask.shape:
        raise ShapeMismatch(f"sampled {sampled.shape} / reference "
                            f"{reference.shape} vs mask {state.mask.shape}")
    return np.where(state.mask, sampled, reference)


# --- reverse sampler ----------------------------------------------------------

def _sample_categorical(logits: np.ndarray, temperature: float,
                        rng: np.random.Generator) -> np.ndarray:
    if temperature <= 0.0:
        return np.argmax(logits, axis=-1)
    gumbel = rng.gumbel(size=logits.shape)
    return np.argmax(logits / temperature + gumbel, axis=-1)


def _validate_logits(logits: np.ndarray, state: MaskState) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3 or logits.shape[:2] != state.grid.shape:
        raise ContractViolation(f"logits shape {logits.shape} vs grid "
                                f"{state.grid.shape}")
    if not np.all(np.isfinite(logits)):
        raise ContractViolation("model returned non-finite logits")
    return logits


def sample(model: ModelContract, cond: Condition, frames: int, layers: int,
           steps: int, mode: str = "vanilla",
           prompt: Optional[np.ndarray] = None, temperature: float = 1.0,
           seed: int = 0, schedule: Optional[MaskSchedule] = None,
           trace_path=None) -> np.ndarray:
    """Iterative reverse loop from a fully masked grid (prompt prefix aside).

    Per step t = S..1: sample candidate tokens at masked positions, compose
    the full grid, score confidence per mode, then remask the
    floor(N * gamma((t-1)/S * T)) lowest-confidence eligible positions.
    The returned grid contains no MASK and preserves the prompt bit-exactly.
    """
    if steps < 1:
        raise OutOfDomain("steps must be >= 1")
    if mode not in ("vanilla", "self_critic"):
        raise ValueError(f"unknown mode {mode!r}")
    schedule = schedule or MaskSchedule()

    prompt_frames = 0
    grid = np.full((layers, frames), MASK_TOKEN, dtype=np.int64)
    if prompt is not None:
        prompt = np.asarray(prompt, dtype=np.int64)
        if prompt.ndim != 2 or prompt.shape[0] != layers:
            raise ShapeMismatch(f"prompt shape {prompt.shape} vs layers {layers}")
        prompt_frames = prompt.shape[1]
        if prompt_frames >= frames:
            raise OutOfDomain("prompt must be shorter than the full grid")
        if (prompt == MASK_TOKEN).any():
            raise MaskedInput("prompt prefix must be fully committed")
        grid[:, :prompt_frames] = prompt

    n_free = layers * (frames - prompt_frames)
    mask = grid == MASK_TOKEN
    state = MaskState(grid=grid, mask=mask, prompt_frames=prompt_frames)
    rng = np.random.default_rng(seed)
    # remask tie-break: stable (frame, layer) order, lowest first
    order = (np.arange(frames)[None, :] * layers
             + np.arange(layers)[:, None]).astype(np.float64)
    nonprompt = np.ones((layers, frames), dtype=bool)
    nonprompt[:, :prompt_frames] = False
    trace = open(trace_path, "w") if trace_path is not None else None

    try:
        for t in range(steps, 0, -1):
            logits = _validate_logits(model.predict_logits(state, cond), state)
            sampled = _sample_categorical(logits, temperature, rng)
            x_tilde = compose_x_tilde(sampled, state, state.grid)

            if mode == "vanilla":
                conf = vanilla_confidence(logits, sampled, state)
                pool = state.mask
            else:
                conf = self_critic_confidence(model, x_tilde, cond, prompt_frames)
                pool = nonprompt

            k = remask_count(n_free, t, steps, schedule)
            new_mask = np.zeros_like(pool)
            if k > 0:
                flat = np.flatnonzero(pool)
                ranked = flat[np.lexsort((order.ravel()[flat],
                                          conf.ravel()[flat]))]
                chosen = ranked[:k]
                new_mask.ravel()[chosen] = True

            new_grid = np.where(new_mask, MASK_TOKEN, x_tilde)
            if trace is not None:
                finite = conf[nonprompt]
                finite = finite[np.isfinite(finite)]
                digest = hashlib.sha1(
                    np.flatnonzero(new_mask).tobytes()).hexdigest()[:12]
                trace.write(json.dumps({
                    "step": t,
                    "masked_count": int(new_mask.sum()),
                    "mean_confidence": float(finite.mean()) if len(finite) else 1.0,
                    "remasked_positions_hash": digest,
                }) + "\n")
            state = MaskState(grid=new_grid, mask=new_mask,
                              prompt_frames=prompt_frames)
    finally:
        if trace is not None:
            trace.close()

    assert not (state.grid == MASK_TOKEN).any()
    if prompt is not None:
        assert np.array_equal(state.grid[:, :prompt_frames], prompt)
    return state.grid


class OneHotOracle:
    """Contract stub that always predicts a fixed target grid (for tests and
    the CLI oracle flag)."""

    def __init__(self, target: np.ndarray, vocab: int, margin: float = 30.0):
        self.target = np.asarray(target, dtype=np.int64)
        self.vocab = vocab
        self.margin = margin

    def predict_logits(self, state: MaskState, cond: Condition) -> np.ndarray:
        layers, frames = self.target.shape
        logits = np.zeros((layers, frames, self.vocab))
        np.put_along_axis(logits, self.target[..., None], self.margin, axis=-1)
        return logits

    def critic_scores(self, grid: np.ndarray, cond: Condition) -> np.ndarray:
        return np.where(grid == self.target, 0.0, 1.0).astype(np.float64)
