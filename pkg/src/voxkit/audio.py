"""Audio containers, WAV file I/O, band-limited resampling, compressed STFT.

Only RIFF/WAVE with PCM16 or IEEE float32 payloads is supported; everything
downstream works on mono float64 buffers in [-1, 1].
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import BadFraming, IoFailure, MalformedWav, UnsupportedEncoding

# Kaiser beta for ~90 dB stopband; taps per polyphase branch. The cutoff sits
# below the target Nyquist so the transition band ends at it.
_KAISER_BETA = 9.0
_HALF_TAPS = 32
_CUTOFF_MARGIN = 0.94


@dataclass
class AudioBuffer:
    """Mono sample sequence with its sample rate.

    samples: float64 array, finite, nominally in [-1, 1]
    sample_rate: Hz, > 0
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono 1-D sample arrays")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioBuffer samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        self.sample_rate = int(self.sample_rate)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def copy(self) -> "AudioBuffer":
        return AudioBuffer(self.samples.copy(), self.sample_rate)


@dataclass
class Spectrogram:
    """Power-law compressed magnitude STFT.

    frames: [n_frames, n_bins] non-negative float64
    """

    frames: np.ndarray
    hop: int
    window: int
    power_exponent: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError("Spectrogram frames must be 2-D [frames, bins]")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]


# --- WAV I/O -----------------------------------------------------------------

_WAVE_PCM = 1
_WAVE_FLOAT = 3


def read_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file (PCM16 or float32), downmixing stereo to mono.

    Raises MalformedWav on structural problems and UnsupportedEncoding for
    payload formats other than PCM16/float32.
    """
    try:
        raw = open(path, "rb").read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e

    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWav(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise MalformedWav(f"{path}: chunk {cid!r} truncated")
        if cid == b"fmt ":
            if size < 16:
                raise MalformedWav(f"{path}: fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise MalformedWav(f"{path}: missing fmt/data chunk")

    tag, channels, rate, _byte_rate, _block, bits = fmt
    if channels < 1 or rate <= 0:
        raise MalformedWav(f"{path}: invalid fmt fields")

    if tag == _WAVE_PCM and bits == 16:
        samples = np.frombuffer(data[: len(data) - len(data) % (2 * channels)],
                                dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _WAVE_FLOAT and bits == 32:
        samples = np.frombuffer(data[: len(data) - len(data) % (4 * channels)],
                                dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncoding(
            f"{path}: format tag {tag} with {bits} bits not supported")

    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise MalformedWav(f"{path}: non-finite sample values")
    return AudioBuffer(samples, rate)


def write_wav(buffer: AudioBuffer, path, encoding: str = "float32") -> None:
    """Write a mono WAV file; float32 round-trips bit-exactly."""
    if encoding == "float32":
        payload = buffer.samples.astype("<f4").tobytes()
        tag, bits = _WAVE_FLOAT, 32
    elif encoding == "pcm16":
        q = np.clip(np.round(buffer.samples * 32768.0), -32768, 32767)
        payload = q.astype("<i2").tobytes()
        tag, bits = _WAVE_PCM, 16
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, 1, buffer.sample_rate,
        buffer.sample_rate * block, block, bits,
        b"data", len(payload),
    )
    try:
        with open(path, "wb") as f:
            f.write(header + payload)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# --- resampling --------------------------------------------------------------

def _sinc_taps(up: int, down: int) -> np.ndarray:
    m = max(up, down)
    ntaps = 2 * (_HALF_TAPS * m) + 1
    return sps.firwin(ntaps, _CUTOFF_MARGIN / m, window=("kaiser", _KAISER_BETA))


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling (windowed-sinc anti-alias filter).

    Identity when rates match. Output duration matches the input within one
    output sample.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == buffer.sample_rate:
        return buffer.copy()
    g = math.gcd(int(target_rate), buffer.sample_rate)
    up, down = target_rate // g, buffer.sample_rate // g
    out = sps.resample_poly(buffer.samples, up, down, window=_sinc_taps(up, down))
    return AudioBuffer(out, target_rate)


# --- STFT front end ----------------------------------------------------------

def stft_powerlaw(buffer: AudioBuffer, window: int = 1024, hop: int = 256,
                  exponent: float = 0.3) -> Spectrogram:
    """Power-law compressed magnitude STFT with a periodic Hann window.

    Frame count is ceil((L - window)/hop) + 1; the tail frame is zero-padded.
    """
    n = len(buffer.samples)
    if not (0 < hop <= window <= n):
        raise BadFraming(
            f"need 0 < hop <= window <= length, got hop={hop} window={window} len={n}")
    if not (0.0 < exponent <= 1.0):
        raise ValueError("exponent must be in (0, 1]")

    n_frames = math.ceil((n - window) / hop) + 1
    padded = np.zeros((n_frames - 1) * hop + window)
    padded[:n] = buffer.samples
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    win = sps.get_window("hann", window, fftbins=True)
    mag = np.abs(np.fft.rfft(padded[idx] * win, axis=1))
    return Spectrogram(mag ** exponent, hop=hop, window=window,
                       power_exponent=exponent)
