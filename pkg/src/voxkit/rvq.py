"""Toy residual vector quantizer over spectrogram frames.

Token grids are plain int64 arrays shaped [layers, frames]; the value -1 is
reserved for the MASK sentinel and never appears in codec output.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, InsufficientData, MaskedInput

_MAGIC = b"VOXRVQ\x00\x01"
_VERSION = 1


@dataclass
class RvqCodebooks:
    """Per-layer codebooks plus feature normalization stats.

    codebooks: [layers, vocab, dim] float32
    mean/scale: [dim] float32, identity (0/1) unless training normalized
    """

    codebooks: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    @property
    def layers(self) -> int:
        return self.codebooks.shape[0]

    @property
    def vocab(self) -> int:
        return self.codebooks.shape[1]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[2]


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = x[rng.integers(len(x))]
            continue
        probs = d2 / total
        centers[j] = x[rng.choice(len(x), p=probs)]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _assign(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin breaks ties toward the lowest index
    d2 = (np.sum(x * x, axis=1)[:, None] - 2.0 * x @ centers.T
          + np.sum(centers * centers, axis=1)[None, :])
    return np.argmin(d2, axis=1)


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int = 50) -> np.ndarray:
    centers = _kmeans_pp_init(x, k, rng)
    assign = None
    for _ in range(max_iter):
        new_assign = _assign(x, centers)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its center
                far = np.argmax(np.sum((x - centers[assign]) ** 2, axis=1))
                centers[j] = x[far]
    return centers


def _deduplicate(centers: np.ndarray) -> np.ndarray:
    # degenerate residual layers can collapse clusters; nudge exact duplicates
    seen = {}
    for j in range(len(centers)):
        key = centers[j].tobytes()
        while key in seen:
            centers[j, 0] += 1e-6 * (j + 1)
            key = centers[j].tobytes()
        seen[key] = j
    return centers


def train_rvq(frames: np.ndarray, layers: int, vocab: int, seed: int,
              normalize: bool = False) -> RvqCodebooks:
    """Fit per-layer k-means codebooks on successive residuals.

    Deterministic per seed (k-means++ init, iteration cap 50). Requires at
    least `vocab` distinct frames.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatch("frames must be 2-D [n_frames, dim]")
    if len(np.unique(x, axis=0)) < vocab:
        raise InsufficientData(f"need >= {vocab} distinct frames")

    if normalize:
        mean = x.mean(axis=0)
        scale = np.maximum(x.std(axis=0), 1e-8)
    else:
        mean = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
    z = (x - mean) / scale

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    books = np.empty((layers, vocab, x.shape[1]), dtype=np.float64)
    residual = z
    for layer in range(layers):
        centers = _deduplicate(_kmeans(residual, vocab, rng))
        books[layer] = centers
        residual = residual - centers[_assign(residual, centers)]
    return RvqCodebooks(codebooks=books.astype(np.float32),
                        mean=mean.astype(np.float32),
                        scale=scale.astype(np.float32))


def encode(frames: np.ndarray, books: RvqCodebooks) -> np.ndarray:
    """Greedy per-layer nearest-codeword encoding of the running residual."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != books.dim:
        raise DimMismatch(f"frames dim {x.shape} vs codebook dim {books.dim}")
    residual = (x - books.mean.astype(np.float64)) / books.scale.astype(np.float64)
    grid = np.empty((books.layers, len(x)), dtype=np.int64)
    for layer in range(books.layers):
        centers = books.codebooks[layer].astype(np.float64)
        idx = _assign(residual, centers)
        grid[layer] = idx
        residual = residual - centers[idx]
    return grid


def decode(grid: np.ndarray, books: RvqCodebooks) -> np.ndarray:
    """Sum the selected codewords per frame; leading-layer subsets allowed."""
    g = np.asarray(grid)
    if g.ndim != 2 or g.shape[0] > books.layers:
        raise DimMismatch(f"grid shape {g.shape} vs {books.layers} layers")
    if (g < 0).any():
        raise MaskedInput("grid contains MASK entries")
    if (g >= books.vocab).any():
        raise DimMismatch("token id outside codebook vocab")
    out = np.zeros((g.shape[1], books.dim), dtype=np.float64)
    for layer in range(g.shape[0]):
        out += books.codebooks[layer].astype(np.float64)[g[layer]]
    return out * books.scale.astype(np.float64) + books.mean.astype(np.float64)


def reconstruction_mse(frames: np.ndarray, books: RvqCodebooks,
                       n_layers: int) -> float:
    grid = encode(frames, books)
    rec = decode(grid[:n_layers], books)
    return float(np.mean((rec - np.asarray(frames, dtype=np.float64)) ** 2))


def save_codebooks(books: RvqCodebooks, path) -> None:
    """Versioned binary: magic, version, layers, vocab, dim, float32 LE
    codewords (row-major), then mean and scale vectors."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIII", _VERSION, books.layers, books.vocab,
                            books.dim))
        f.write(books.codebooks.astype("<f4").tobytes())
        f.write(books.mean.astype("<f4").tobytes())
        f.write(books.scale.astype("<f4").tobytes())


def load_codebooks(path) -> RvqCodebooks:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a voxkit codebook file")
    version, layers, vocab, dim = struct.unpack("<IIII", raw[8:24])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported codebook version {version}")
    off = 24
    n = layers * vocab * dim
    books = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(
        layers, vocab, dim).copy()
    off += 4 * n
    mean = np.frombuffer(raw, dtype="<f4", count=dim, offset=off).copy()
    off += 4 * dim
    scale = np.frombuffer(raw, dtype="<f4", count=dim, offset=off).copy()
    return RvqCodebooks(codebooks=books, mean=mean, scale=scale)
