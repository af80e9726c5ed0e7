"""Tiny encoder-decoder transformer over RVQ token grids.

Two stages share one trunk: the encoder turns the distorted spectrogram (plus
a task token) into per-frame semantic features; the decoder attends over
[task, semantic, token-latent] and either projects to per-layer token logits
or, through the critic head, to per-position realness scores. A frozen random
projection stands in for the pretrained semantic feature extractor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import Spectrogram
from .errors import MaskedInput, ShapeMismatch
from .maskgen import MASK_TOKEN, Condition, MaskState


@dataclass
class TrainConfig:
    dim: int = 128
    l_enc: int = 2
    l_dec: int = 3
    n_heads: int = 4
    mlp_ratio: int = 4
    vocab: int = 64
    rvq_layers: int = 4
    feat_dim: int = 16
    lr: float = 1e-4
    warmup_steps: int = 400
    total_steps: int = 5000
    batch: int = 8
    seq_frames: int = 128
    p_prompt: float = 0.5
    prompt_frames: int = 48
    seed: int = 0
    fx_seed: int = 7
    threads: int = 1
    log_interval: int = 1
    checkpoint_interval: int = 1000

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


class FeatureExtractor:
    """Frozen seeded random projection + tanh, standing in for a pretrained
    semantic encoder. Deterministic per (feat_dim, out_dim, seed)."""

    def __init__(self, feat_dim: int, out_dim: int, seed: int):
        g = torch.Generator().manual_seed(seed)
        self.weight = torch.randn(feat_dim, out_dim, generator=g) / math.sqrt(feat_dim)
        self.feat_dim = feat_dim
        self.out_dim = out_dim
        self.seed = seed

    def __call__(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.shape[-1] != self.feat_dim:
            raise ShapeMismatch(f"frames dim {frames.shape[-1]} != {self.feat_dim}")
        return torch.tanh(frames @ self.weight.to(frames.dtype))


def _rope_angles(positions: torch.Tensor, head_dim: int,
                 dtype: torch.dtype) -> tuple:
    half = head_dim // 2
    freqs = 10000.0 ** (-torch.arange(half, dtype=dtype) / half)
    ang = positions[:, None].to(dtype) * freqs[None, :]
    return torch.cos(ang), torch.sin(ang)


def _apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    # x: [B, heads, T, head_dim]; rotate interleaved pairs
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        assert dim % n_heads == 0 and (dim // n_heads) % 2 == 0
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        qkv = self.qkv(x).view(b, t, 3, self.n_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        pos = torch.arange(t, device=x.device)
        cos, sin = _rope_angles(pos, self.head_dim, x.dtype)
        q = _apply_rope(q, cos, sin)
        k = _apply_rope(k, cos, sin)
        out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(1, 2).reshape(b, t, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, n_heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim), nn.GELU(),
            nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class ToyModel(nn.Module):
    """Encoder/decoder trunk with per-layer token embeddings, per-layer logits
    heads, a critic head, and the representation-alignment projector."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        self.spec_proj = nn.Linear(cfg.feat_dim, d)
        self.task_emb = nn.Embedding(2, d)
        self.token_emb = nn.ModuleList(
            [nn.Embedding(cfg.vocab + 1, d) for _ in range(cfg.rvq_layers)])
        self.enc_blocks = nn.ModuleList(
            [Block(d, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.l_enc)])
        self.enc_norm = nn.LayerNorm(d)
        self.dec_blocks = nn.ModuleList(
            [Block(d, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.l_dec)])
        self.dec_norm = nn.LayerNorm(d)
        self.heads = nn.ModuleList(
            [nn.Linear(d, cfg.vocab) for _ in range(cfg.rvq_layers)])
        self.critic_head = nn.Linear(d, cfg.rvq_layers)
        self.repa_mlp = nn.Sequential(
            nn.Linear(d, d), nn.GELU(), nn.Linear(d, d), nn.GELU(),
            nn.Linear(d, d))

    # --- encoder stage --------------------------------------------------------

    def encode(self, spec_frames: torch.Tensor, task_ids: torch.Tensor) -> torch.Tensor:
        """[B, T, feat] + task id -> h_enc [B, T, dim]."""
        x = self.spec_proj(spec_frames)
        task = self.task_emb(task_ids)[:, None, :]
        seq = torch.cat([task, x], dim=1)
        for blk in self.enc_blocks:
            seq = blk(seq)
        return self.enc_norm(seq)[:, 1:, :]

    # --- decoder stage --------------------------------------------------------

    def token_latent(self, grids: torch.Tensor) -> torch.Tensor:
        """Sum per-layer embeddings; MASK_TOKEN uses the extra embedding row."""
        tok = torch.where(grids < 0, torch.full_like(grids, self.cfg.vocab), grids)
        latent = self.token_emb[0](tok[:, 0])
        for layer in range(1, self.cfg.rvq_layers):
            latent = latent + self.token_emb[layer](tok[:, layer])
        return latent

    def trunk(self, grids: torch.Tensor, semantic: torch.Tensor,
              task_ids: torch.Tensor) -> torch.Tensor:
        """Decoder over [task | semantic | token latent]; returns the token
        segment outputs [B, T, dim]."""
        t = semantic.shape[1]
        latent = self.token_latent(grids)
        task = self.task_emb(task_ids)[:, None, :]
        seq = torch.cat([task, semantic, latent], dim=1)
        for blk in self.dec_blocks:
            seq = blk(seq)
        return self.dec_norm(seq)[:, 1 + t:, :]

    def logits(self, dec_out: torch.Tensor) -> torch.Tensor:
        """[B, T, dim] -> [B, rvq_layers, T, vocab]."""
        return torch.stack([head(dec_out) for head in self.heads], dim=1)

    def critic(self, dec_out: torch.Tensor) -> torch.Tensor:
        """[B, T, dim] -> sigmoid scores [B, rvq_layers, T]."""
        return torch.sigmoid(self.critic_head(dec_out)).transpose(1, 2)


def build_model(cfg: TrainConfig, dtype: torch.dtype = torch.float32) -> ToyModel:
    """Deterministic model construction from cfg.seed."""
    torch.manual_seed(cfg.seed)
    model = ToyModel(cfg)
    if dtype != torch.float32:
        model = model.to(dtype)
    return model


# --- numpy-boundary operations ------------------------------------------------

def interp_frames(frames: np.ndarray, target_frames: int) -> np.ndarray:
    """Linear interpolation along the time axis to target_frames rows."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[0]
    if n == target_frames:
        return frames
    if n == 1:
        return np.repeat(frames, target_frames, axis=0)
    src = np.linspace(0.0, 1.0, n)
    dst = np.linspace(0.0, 1.0, target_frames)
    out = np.empty((target_frames, frames.shape[1]))
    for j in range(frames.shape[1]):
        out[:, j] = np.interp(dst, src, frames[:, j])
    return out


def encode_semantic(model: ToyModel, distorted_spec, task_id: int,
                    fx: FeatureExtractor, target_frames: int = None) -> Condition:
    """Run the encoder on the distorted spectrogram and add the frozen-feature
    projection: the conditioning bundle for the sampler."""
    frames = distorted_spec.frames if isinstance(distorted_spec, Spectrogram) \
        else np.asarray(distorted_spec)
    if target_frames is not None and frames.shape[0] != target_frames:
        frames = interp_frames(frames, target_frames)
    with torch.no_grad():
        ft = torch.as_tensor(frames, dtype=torch.float32)[None]
        task = torch.tensor([task_id], dtype=torch.int64)
        h_enc = model.encode(ft, task)
        semantic = h_enc + fx(ft)
    return Condition(semantic=semantic[0].numpy().astype(np.float64),
                     task_id=task_id)


def repa_loss(model: ToyModel, h_enc: torch.Tensor,
              clean_features: torch.Tensor) -> torch.Tensor:
    """MSE between the projected encoder output and the clean-feature target,
    averaged over frames and feature dims."""
    if h_enc.shape != clean_features.shape:
        raise ShapeMismatch(f"h_enc {tuple(h_enc.shape)} vs target "
                            f"{tuple(clean_features.shape)}")
    return F.mse_loss(model.repa_mlp(h_enc), clean_features)


def critic_loss(scores: torch.Tensor, mask: torch.Tensor,
                valid: torch.Tensor = None) -> torch.Tensor:
    """Mean binary cross-entropy of critic scores against the mask matrix,
    restricted to `valid` (non-prompt) positions when given."""
    if scores.shape != mask.shape:
        raise ShapeMismatch(f"scores {tuple(scores.shape)} vs mask "
                            f"{tuple(mask.shape)}")
    target = mask.to(scores.dtype)
    s = scores.clamp(1e-12, 1.0 - 1e-12)
    bce = -(target * torch.log(s) + (1.0 - target) * torch.log(1.0 - s))
    if valid is None:
        return bce.mean()
    v = valid.to(scores.dtype)
    return (bce * v).sum() / v.sum().clamp(min=1.0)


def decode_logits(model: ToyModel, state: MaskState, cond: Condition) -> np.ndarray:
    """Per-layer logits for a single grid/condition pair (sampler boundary)."""
    if cond.semantic.shape[0] != state.frames:
        raise ShapeMismatch(f"condition frames {cond.semantic.shape[0]} vs "
                            f"grid frames {state.frames}")
    with torch.no_grad():
        grid = torch.as_tensor(state.grid, dtype=torch.int64)[None]
        sem = torch.as_tensor(cond.semantic, dtype=torch.float32)[None]
        task = torch.tensor([cond.task_id], dtype=torch.int64)
        out = model.logits(model.trunk(grid, sem, task))
    return out[0].numpy().astype(np.float64)


def critic_forward(model: ToyModel, x_tilde: np.ndarray, cond: Condition) -> np.ndarray:
    """Critic-head scores in [0, 1] for a fully committed grid."""
    if (np.asarray(x_tilde) == MASK_TOKEN).any():
        raise MaskedInput("x_tilde contains MASK entries")
    if cond.semantic.shape[0] != x_tilde.shape[1]:
        raise ShapeMismatch(f"condition frames {cond.semantic.shape[0]} vs "
                            f"grid frames {x_tilde.shape[1]}")
    with torch.no_grad():
        grid = torch.as_tensor(x_tilde, dtype=torch.int64)[None]
        sem = torch.as_tensor(cond.semantic, dtype=torch.float32)[None]
        task = torch.tensor([cond.task_id], dtype=torch.int64)
        scores = model.critic(model.trunk(grid, sem, task))
    return scores[0].numpy().astype(np.float64)


class ContractAdapter:
    """Exposes a ToyModel as the sampler's model contract."""

    def __init__(self, model: ToyModel):
        self.model = model

    def predict_logits(self, state: MaskState, cond: Condition) -> np.ndarray:
        return decode_logits(self.model, state, cond)

    def critic_scores(self, grid: np.ndarray, cond: Condition) -> np.ndarray:
        return critic_forward(self.model, grid, cond)
