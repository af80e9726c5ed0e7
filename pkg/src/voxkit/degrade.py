"""Distortion operators and seeded composite-chain sampling.

The composite chain applies steps innermost-first in the fixed order
vocal_effect -> (other_voice) -> noise -> reverb -> clip -> bandwidth;
restoration tasks are Enhancement (no interferer) and Extraction (interferer
always present). Per-distortion inclusion probabilities and parameter ranges
default to the training-data recipe.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer, resample
from .errors import (BadBellParams, BadThreshold, DegenerateNoise,
                     MissingAsset, RateMismatch)

log = logging.getLogger("voxkit.degrade")


class DistortionKind(str, Enum):
    NOISE = "noise"
    REVERB = "reverb"
    CLIP = "clip"
    BANDWIDTH = "bandwidth"
    OTHER_VOICE = "other_voice"
    VOCAL_EFFECT = "vocal_effect"
    EQ = "eq"


class Task(str, Enum):
    ENHANCEMENT = "enhancement"
    EXTRACTION = "extraction"


# Innermost-first application orders.
ENHANCEMENT_ORDER = (DistortionKind.VOCAL_EFFECT, DistortionKind.NOISE,
                     DistortionKind.REVERB, DistortionKind.CLIP,
                     DistortionKind.BANDWIDTH)
EXTRACTION_ORDER = (DistortionKind.VOCAL_EFFECT, DistortionKind.OTHER_VOICE,
                    DistortionKind.NOISE, DistortionKind.REVERB,
                    DistortionKind.CLIP, DistortionKind.BANDWIDTH)


@dataclass
class ChainPolicy:
    """Inclusion probabilities and parameter ranges for chain sampling."""

    p_noise: float = 0.9
    p_reverb: float = 0.5
    p_clip: float = 0.25
    p_bandwidth: float = 0.5
    p_other_voice: float = 0.5
    p_vocal_effect: float = 0.5
    snr_db: tuple = (-5.0, 20.0)
    clip_threshold: tuple = (0.06, 0.9)
    bandwidths_khz: tuple = (2, 4, 8, 16, 24, 32)
    voice_snr_db: tuple = (0.0, 10.0)
    eq_bells: tuple = (1, 3)
    eq_gain_db: tuple = (-5.0, 5.0)
    eq_center_hz: tuple = (10.0, 12000.0)
    eq_q: tuple = (0.5, 4.0)

    # Reference bounds the policy may narrow but not widen.
    _BOUNDS = {
        "snr_db": (-5.0, 20.0),
        "clip_threshold": (0.06, 0.9),
        "voice_snr_db": (0.0, 10.0),
        "eq_gain_db": (-5.0, 5.0),
        "eq_center_hz": (10.0, 12000.0),
    }
    _BANDWIDTH_SET = (2, 4, 8, 16, 24, 32)

    def validate(self) -> None:
        for name in ("p_noise", "p_reverb", "p_clip", "p_bandwidth",
                     "p_other_voice", "p_vocal_effect"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        for name, (lo, hi) in self._BOUNDS.items():
            a, b = getattr(self, name)
            if not (lo <= a <= b <= hi):
                raise ValueError(f"{name}={(a, b)} outside [{lo}, {hi}]")
        if not set(self.bandwidths_khz) <= set(self._BANDWIDTH_SET):
            raise ValueError(f"bandwidths {self.bandwidths_khz} not a subset "
                             f"of {self._BANDWIDTH_SET}")
        lo, hi = self.eq_bells
        if not (1 <= lo <= hi <= 3):
            raise ValueError(f"eq_bells={self.eq_bells} outside 1..3")

    def for_sample_rate(self, rate: int) -> "ChainPolicy":
        """Narrow EQ centers below Nyquist for a desk-scale rate."""
        lo, hi = self.eq_center_hz
        cap = 0.45 * rate
        p = ChainPolicy(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        p.eq_center_hz = (lo, min(hi, cap))
        return p


@dataclass
class ChainStep:
    kind: DistortionKind
    params: dict


@dataclass
class DegradationSpec:
    """A concrete sampled chain instance, applied innermost-first."""

    steps: list
    task: Task
    seed: int

    def to_json(self) -> str:
        return json.dumps({
            "task": self.task.value,
            "seed": self.seed,
            "steps": [{"kind": s.kind.value, "params": s.params}
                      for s in self.steps],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DegradationSpec":
        d = json.loads(text)
        steps = [ChainStep(DistortionKind(s["kind"]), s["params"])
                 for s in d["steps"]]
        return cls(steps=steps, task=Task(d["task"]), seed=int(d["seed"]))

    def kinds(self) -> list:
        return [s.kind for s in self.steps]


# --- primitive operators -----------------------------------------------------

def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if len(x) else 0.0


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) == n:
        return x
    if len(x) > n:
        return x[:n]
    reps = int(np.ceil(n / len(x)))
    return np.tile(x, reps)[:n]


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db: float) -> AudioBuffer:
    """Add noise scaled so the mix hits the target SNR (whole-signal RMS).

    The noise is tiled or trimmed to the clean length first. A silent clean
    signal yields alpha = 0 (nothing to set an SNR against).
    """
    if clean.sample_rate != noise.sample_rate:
        raise RateMismatch(f"{clean.sample_rate} != {noise.sample_rate}")
    n = _fit_length(noise.samples, len(clean))
    rms_n = _rms(n)
    if rms_n == 0.0:
        raise DegenerateNoise("noise has zero RMS")
    alpha = _rms(clean.samples) / (rms_n * 10.0 ** (snr_db / 20.0))
    return AudioBuffer(clean.samples + alpha * n, clean.sample_rate)


def convolve_rir(clean: AudioBuffer, rir: AudioBuffer) -> AudioBuffer:
    """Full convolution truncated to input length, renormalized to the
    pre-convolution peak."""
    if clean.sample_rate != rir.sample_rate:
        raise RateMismatch(f"{clean.sample_rate} != {rir.sample_rate}")
    if len(rir) < 1:
        raise ValueError("rir must have at least one tap")
    out = sps.fftconvolve(clean.samples, rir.samples, mode="full")[:len(clean)]
    peak_in = np.max(np.abs(clean.samples)) if len(clean) else 0.0
    peak_out = np.max(np.abs(out)) if len(out) else 0.0
    if peak_in > 0.0 and peak_out > 0.0:
        out = out * (peak_in / peak_out)
    return AudioBuffer(out, clean.sample_rate)


def clip(clean: AudioBuffer, threshold: float, strict: bool = True) -> AudioBuffer:
    """Symmetric hard clipping at +-threshold."""
    if strict and not (0.06 <= threshold <= 0.9):
        raise BadThreshold(f"threshold {threshold} outside [0.06, 0.9]")
    if not strict and not (0.0 < threshold <= 1.0):
        raise BadThreshold(f"threshold {threshold} outside (0, 1]")
    return AudioBuffer(np.clip(clean.samples, -threshold, threshold),
                       clean.sample_rate)


def bandwidth_limit(clean: AudioBuffer, freq_khz: float) -> AudioBuffer:
    """Resample down to freq_khz and back, removing content above freq/2.

    Frequencies above the buffer rate are skipped as no-ops (with a warning)
    so full-band parameter grids stay usable at desk-scale rates.
    """
    freq_hz = int(round(freq_khz * 1000))
    if freq_hz > clean.sample_rate:
        log.warning("bandwidth %s kHz exceeds sample rate %d Hz; skipping",
                    freq_khz, clean.sample_rate)
        return clean.copy()
    if freq_hz == clean.sample_rate:
        return clean.copy()
    down = resample(clean, freq_hz)
    up = resample(down, clean.sample_rate)
    out = np.zeros(len(clean))
    m = min(len(out), len(up))
    out[:m] = up.samples[:m]
    return AudioBuffer(out, clean.sample_rate)


def _peaking_sos(center_hz: float, gain_db: float, q: float, rate: int) -> np.ndarray:
    # RBJ audio-EQ cookbook peaking filter.
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * math.pi * center_hz / rate
    alpha = math.sin(w0) / (2.0 * q)
    b0 = 1 + alpha * a
    b1 = -2 * math.cos(w0)
    b2 = 1 - alpha * a
    a0 = 1 + alpha / a
    a1 = -2 * math.cos(w0)
    a2 = 1 - alpha / a
    return np.array([b0 / a0, b1 / a0, b2 / a0, 1.0, a1 / a0, a2 / a0])


def _validate_bells(bells, rate: int) -> None:
    if not (1 <= len(bells) <= 3):
        raise BadBellParams(f"need 1-3 bells, got {len(bells)}")
    for center, gain, q in bells:
        if not (-5.0 <= gain <= 5.0):
            raise BadBellParams(f"gain {gain} dB outside [-5, 5]")
        if not (10.0 <= center <= 12000.0) or center >= rate / 2:
            raise BadBellParams(f"center {center} Hz outside [10, 12000] "
                                f"or above Nyquist ({rate / 2})")
        if q <= 0:
            raise BadBellParams(f"q must be positive, got {q}")


def apply_eq(clean: AudioBuffer, bells, window_start_s: float = 0.0,
             window_dur_s: float = 1.0, crossfade_s: float = 0.05) -> AudioBuffer:
    """Apply 1-3 peaking-bell gains inside a 1-second window.

    bells: iterable of (center_hz, gain_db, q). The filtered segment is blended
    back with raised-cosine crossfades at the window edges so the splice is
    click-free; everything outside the window is untouched.
    """
    _validate_bells(bells, clean.sample_rate)
    sos = np.stack([_peaking_sos(c, g, q, clean.sample_rate)
                    for c, g, q in bells])
    filtered = sps.sosfilt(sos, clean.samples)

    n = len(clean)
    start = int(round(max(0.0, window_start_s) * clean.sample_rate))
    stop = min(n, start + int(round(window_dur_s * clean.sample_rate)))
    if start >= stop:
        return clean.copy()

    fade = int(round(crossfade_s * clean.sample_rate))
    fade = min(fade, (stop - start) // 2)
    w = np.zeros(n)
    w[start:stop] = 1.0
    if fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(fade) + 0.5) / fade)
        w[start:start + fade] = ramp
        w[stop - fade:stop] = ramp[::-1]
    return AudioBuffer((1.0 - w) * clean.samples + w * filtered,
                       clean.sample_rate)


def vocal_effect(clean: AudioBuffer, rir: AudioBuffer, bells,
                 window_start_s: float = 0.0) -> AudioBuffer:
    """Live-performance vocal chain: peaking EQ followed by reverb."""
    return convolve_rir(apply_eq(clean, bells, window_start_s=window_start_s), rir)


def synth_rir(rt60_s: float, length_s: float, rate: int, seed: int) -> AudioBuffer:
    """Exponentially decaying white noise with the requested RT60, unit peak."""
    if rt60_s <= 0:
        raise ValueError("rt60_s must be positive")
    n = max(1, int(round(length_s * rate)))
    rng = np.random.default_rng(seed)
    t = np.arange(n) / rate
    tail = np.exp(-t * math.log(1000.0) / rt60_s) * rng.standard_normal(n)
    peak = np.max(np.abs(tail))
    if peak > 0:
        tail = tail / peak
    return AudioBuffer(tail, rate)


# --- chain sampling and application -------------------------------------------

def _draw_bells(rng: np.random.Generator, policy: ChainPolicy) -> list:
    n_bells = int(rng.integers(policy.eq_bells[0], policy.eq_bells[1] + 1))
    return [[float(rng.uniform(*policy.eq_center_hz)),
             float(rng.uniform(*policy.eq_gain_db)),
             float(rng.uniform(*policy.eq_q))] for _ in range(n_bells)]


def sample_chain(policy: ChainPolicy, task: Task, seed: int) -> DegradationSpec:
    """Sample a chain instance: independent per-distortion inclusion with the
    policy probabilities, uniform parameters from the policy ranges, fixed
    ordering. Extraction chains always carry the interferer step."""
    policy.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = EXTRACTION_ORDER if task == Task.EXTRACTION else ENHANCEMENT_ORDER
    steps = []
    for kind in order:
        if kind == DistortionKind.VOCAL_EFFECT:
            if rng.random() < policy.p_vocal_effect:
                steps.append(ChainStep(kind, {
                    "bells": _draw_bells(rng, policy),
                    "window_start_frac": float(rng.random()),
                }))
        elif kind == DistortionKind.OTHER_VOICE:
            # Defines the extraction task, so it is always present there.
            steps.append(ChainStep(kind, {
                "snr_db": float(rng.uniform(*policy.voice_snr_db))}))
        elif kind == DistortionKind.NOISE:
            if rng.random() < policy.p_noise:
                steps.append(ChainStep(kind, {
                    "snr_db": float(rng.uniform(*policy.snr_db))}))
        elif kind == DistortionKind.REVERB:
            if rng.random() < policy.p_reverb:
                steps.append(ChainStep(kind, {}))
        elif kind == DistortionKind.CLIP:
            if rng.random() < policy.p_clip:
                steps.append(ChainStep(kind, {
                    "threshold": float(rng.uniform(*policy.clip_threshold))}))
        elif kind == DistortionKind.BANDWIDTH:
            if rng.random() < policy.p_bandwidth:
                steps.append(ChainStep(kind, {
                    "freq_khz": int(rng.choice(policy.bandwidths_khz))}))
    return DegradationSpec(steps=steps, task=task, seed=seed)


def _step_seed(spec_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([spec_seed, index]).generate_state(1)[0])


def apply_chain(clean: AudioBuffer, spec: DegradationSpec, assets) -> AudioBuffer:
    """Apply a sampled chain innermost-first; pure in (clean, spec, assets)."""
    out = clean.copy()
    rate = clean.sample_rate
    for i, step in enumerate(spec.steps):
        seed = _step_seed(spec.seed, i)
        p = step.params
        if step.kind == DistortionKind.VOCAL_EFFECT:
            dur_left = max(0.0, len(out) / rate - 1.0)
            start = p["window_start_frac"] * dur_left
            rir = _require(assets, "rir", rate=rate, seed=seed)
            out = vocal_effect(out, rir, [tuple(b) for b in p["bells"]],
                               window_start_s=start)
        elif step.kind == DistortionKind.OTHER_VOICE:
            voice = _require(assets, "interferer", n=len(out), rate=rate, seed=seed)
            out = mix_at_snr(out, voice, p["snr_db"])
        elif step.kind == DistortionKind.NOISE:
            noise = _require(assets, "noise", n=len(out), rate=rate, seed=seed)
            out = mix_at_snr(out, noise, p["snr_db"])
        elif step.kind == DistortionKind.REVERB:
            rir = _require(assets, "rir", rate=rate, seed=seed)
            out = convolve_rir(out, rir)
        elif step.kind == DistortionKind.CLIP:
            out = clip(out, p["threshold"])
        elif step.kind == DistortionKind.BANDWIDTH:
            out = bandwidth_limit(out, p["freq_khz"])
        else:
            raise MissingAsset(f"no handler for step kind {step.kind}")
    return out


def _require(assets, method: str, **kw) -> AudioBuffer:
    fn = getattr(assets, method, None)
    if fn is None:
        raise MissingAsset(f"asset provider lacks {method}()")
    buf = fn(**kw)
    if buf is None:
        raise MissingAsset(f"asset provider returned no {method}")
    return buf
