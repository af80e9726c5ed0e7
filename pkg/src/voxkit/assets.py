"""Noise/RIR/interferer providers for the degradation chain.

SyntheticAssets generates everything procedurally (white/pink noise,
exponential-decay RIRs, harmonic pseudo-voices) so chains run with no external
corpora; DirectoryAssets serves real files when they exist. Both are
deterministic per request seed and safe for concurrent reads.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import AudioBuffer, read_wav, resample
from .degrade import synth_rir
from .errors import MissingAsset


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """1/f-shaped noise via spectral shaping of white noise."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n)
    f[0] = f[1] if n > 1 else 1.0
    shaped = np.fft.irfft(spec / np.sqrt(f), n=n)
    return shaped / max(np.max(np.abs(shaped)), 1e-12)


def harmonic_voice(n: int, rate: int, rng: np.random.Generator,
                   f0_range=(110.0, 300.0), n_harmonics: int = 8) -> np.ndarray:
    """Synthetic voice-like signal: vibrato harmonic stack with a syllable
    envelope. Stands in for a second speaker."""
    t = np.arange(n) / rate
    f0 = rng.uniform(*f0_range)
    vibrato = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / rate
    x = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        x += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    syllable = np.abs(np.sin(2 * np.pi * rng.uniform(2.0, 4.0) * t +
                             rng.uniform(0, np.pi))) ** 1.5 + 0.05
    x *= syllable
    return x / max(np.max(np.abs(x)), 1e-12)


class SyntheticAssets:
    """Procedural asset provider; every call is pure in (args, seed)."""

    def __init__(self, rt60_range=(0.15, 0.8), rir_length_s: float = 0.4,
                 pink_prob: float = 0.5):
        self.rt60_range = rt60_range
        self.rir_length_s = rir_length_s
        self.pink_prob = pink_prob

    def noise(self, n: int, rate: int, seed: int) -> AudioBuffer:
        rng = np.random.default_rng(seed)
        if rng.random() < self.pink_prob:
            x = pink_noise(n, rng)
        else:
            white = rng.standard_normal(n)
            x = white / max(np.max(np.abs(white)), 1e-12)
        return AudioBuffer(x, rate)

    def rir(self, rate: int, seed: int) -> AudioBuffer:
        rng = np.random.default_rng(seed)
        rt60 = float(rng.uniform(*self.rt60_range))
        return synth_rir(rt60, self.rir_length_s, rate, seed=int(rng.integers(2**31)))

    def interferer(self, n: int, rate: int, seed: int) -> AudioBuffer:
        rng = np.random.default_rng(seed)
        return AudioBuffer(harmonic_voice(n, rate, rng), rate)


class DirectoryAssets:
    """Serves WAV assets from directories, resampled to the request rate.

    Any missing directory falls back to the synthetic provider, so partial
    corpora (say, real noise but no RIRs) still work.
    """

    def __init__(self, noise_dir=None, rir_dir=None, voice_dir=None):
        self._dirs = {"noise": self._scan(noise_dir),
                      "rir": self._scan(rir_dir),
                      "interferer": self._scan(voice_dir)}
        self._fallback = SyntheticAssets()

    @staticmethod
    def _scan(d):
        if d is None:
            return None
        files = sorted(Path(d).glob("*.wav"))
        if not files:
            raise MissingAsset(f"no .wav files under {d}")
        return files

    def _pick(self, category: str, rate: int, seed: int):
        files = self._dirs[category]
        if files is None:
            return None
        rng = np.random.default_rng(seed)
        buf = read_wav(files[int(rng.integers(len(files)))])
        if buf.sample_rate != rate:
            buf = resample(buf, rate)
        return buf

    def noise(self, n: int, rate: int, seed: int) -> AudioBuffer:
        buf = self._pick("noise", rate, seed)
        return buf if buf is not None else self._fallback.noise(n, rate, seed)

    def rir(self, rate: int, seed: int) -> AudioBuffer:
        buf = self._pick("rir", rate, seed)
        return buf if buf is not None else self._fallback.rir(rate, seed)

    def interferer(self, n: int, rate: int, seed: int) -> AudioBuffer:
        buf = self._pick("interferer", rate, seed)
        return buf if buf is not None else self._fallback.interferer(n, rate, seed)
