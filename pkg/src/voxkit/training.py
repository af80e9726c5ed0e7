"""Training loop for the toy model: masked-token NLL + representation
alignment + critic BCE, Adam with linear warmup then linear decay to zero.

All per-step randomness (batch choice, diffusion times, prompt coins, masks,
candidate sampling) comes from generators derived from (seed, step), which
makes runs bit-reproducible and checkpoint resumes exact.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .corpus import ToyCorpus
from .errors import NonFiniteLoss
from .model import (FeatureExtractor, ToyModel, TrainConfig, build_model,
                    critic_loss, repa_loss)

_CKPT_MAGIC = b"VOXCKPT\x01"
_CKPT_VERSION = 1


class LossTriple(NamedTuple):
    l_mask: float
    l_repa: float
    l_critic: float
    total: float
    lr: float


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Linear warmup to cfg.lr, then linear decay reaching 0 at total_steps."""
    if step <= cfg.warmup_steps:
        return cfg.lr * step / max(1, cfg.warmup_steps)
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    return cfg.lr * max(0.0, (cfg.total_steps - step) / span)


def _step_generator(seed: int, step: int) -> torch.Generator:
    mix = int(np.random.SeedSequence([seed, step]).generate_state(1)[0])
    return torch.Generator().manual_seed(mix)


def _gather_batch(corpus: ToyCorpus, idx, device=None) -> dict:
    items = [corpus.items[i] for i in idx]
    return {
        "grid": torch.as_tensor(np.stack([it.grid for it in items])),
        "distorted": torch.as_tensor(
            np.stack([it.distorted for it in items]), dtype=torch.float32),
        "clean_feats": torch.as_tensor(
            np.stack([it.clean_feats for it in items]), dtype=torch.float32),
        "task": torch.as_tensor(np.array([it.task_id for it in items])),
    }


def compute_losses(model: ToyModel, fx: FeatureExtractor, batch: dict,
                   cfg: TrainConfig, gen: torch.Generator) -> tuple:
    """Forward pass producing (l_mask, l_repa, l_critic) tensors.

    Per sample: t ~ U(0, 1], Bernoulli(gamma(t)) position masking, optional
    prompt retention (prefix protected, distorted features silenced), then a
    second trunk pass on the candidate-composited grid for the critic.
    """
    grid = batch["grid"]
    dist = batch["distorted"].clone()
    clean_feats = batch["clean_feats"]
    task = batch["task"]
    b, n_layers, t_frames = grid.shape
    dtype = next(model.parameters()).dtype
    dist = dist.to(dtype)
    clean_feats = clean_feats.to(dtype)

    t = 1.0 - torch.rand(b, generator=gen, dtype=torch.float64)  # (0, 1]
    gamma = torch.sin(math.pi * t / 2.0)
    mask = (torch.rand((b, n_layers, t_frames), generator=gen, dtype=torch.float64)
            < gamma[:, None, None])

    prompted = torch.rand(b, generator=gen, dtype=torch.float64) < cfg.p_prompt
    pf = min(cfg.prompt_frames, t_frames - 1)
    prompt_cols = torch.zeros(b, t_frames, dtype=torch.bool)
    prompt_cols[prompted, :pf] = True
    mask = mask & ~prompt_cols[:, None, :]
    dist[prompted, :pf, :] = 0.0  # prompt region of the distortion is silenced

    masked_grid = torch.where(mask, torch.full_like(grid, -1), grid)

    h_enc = model.encode(dist, task)
    semantic = h_enc + fx(dist)
    dec = model.trunk(masked_grid, semantic, task)
    logits = model.logits(dec)

    n_masked = int(mask.sum())
    if n_masked > 0:
        l_mask = torch.nn.functional.cross_entropy(
            logits.permute(0, 3, 1, 2), grid, reduction="none")[mask].mean()
    else:
        l_mask = logits.sum() * 0.0

    # alignment loss, skipping silenced prompt frames
    proj = model.repa_mlp(h_enc)
    target = fx(clean_feats)
    frame_valid = (~prompt_cols).to(dtype)[:, :, None]
    l_repa = (((proj - target) ** 2) * frame_valid).sum() / \
        (frame_valid.sum() * model.cfg.dim)

    # candidate grid for the critic: sampled at masked, truth elsewhere
    with torch.no_grad():
        probs = logits.detach().reshape(-1, cfg.vocab).softmax(dim=-1)
        invalid = ~torch.isfinite(probs).all(dim=-1)
        if invalid.any():
            # let the NonFiniteLoss check report the blow-up, not multinomial
            probs = probs.clone()
            probs[invalid] = 1.0 / cfg.vocab
        sampled = torch.multinomial(probs, 1,
                                    generator=gen).view(b, n_layers, t_frames)
    x_tilde = torch.where(mask, sampled, grid)

    scores = model.critic(model.trunk(x_tilde, semantic, task))
    valid = ~prompt_cols[:, None, :].expand_as(mask)
    l_critic = critic_loss(scores, mask, valid)
    aux = {"mask": mask, "prompt_cols": prompt_cols, "x_tilde": x_tilde,
           "scores": scores, "t": t}
    return l_mask, l_repa, l_critic, aux


def train_step(model: ToyModel, optimizer: torch.optim.Optimizer,
               fx: FeatureExtractor, corpus: ToyCorpus, cfg: TrainConfig,
               step: int) -> LossTriple:
    gen = _step_generator(cfg.seed, step)
    idx = torch.randint(len(corpus.items), (cfg.batch,), generator=gen).tolist()
    batch = _gather_batch(corpus, idx)

    l_mask, l_repa, l_critic, _ = compute_losses(model, fx, batch, cfg, gen)
    total = l_mask + l_repa + l_critic
    if not torch.isfinite(total):
        raise NonFiniteLoss(
            f"step {step}: l_mask={l_mask.detach()} l_repa={l_repa.detach()} "
            f"l_critic={l_critic.detach()}")

    lr = lr_at(cfg, step)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return LossTriple(l_mask.item(), l_repa.item(), l_critic.item(),
                      total.item(), lr)


@dataclass
class TrainResult:
    model: ToyModel
    fx: FeatureExtractor
    cfg: TrainConfig
    losses: list
    step: int


def make_optimizer(model: ToyModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr,
                            betas=(0.9, 0.999), eps=1e-8)


def train(cfg: TrainConfig, corpus: ToyCorpus, log_path=None,
          checkpoint_path=None, resume_from=None, steps: int = None,
          progress=None) -> TrainResult:
    """Run (or resume) training for `steps` steps (default cfg.total_steps)."""
    if cfg.threads:
        torch.set_num_threads(cfg.threads)
    if corpus.feat_dim != cfg.feat_dim:
        raise ValueError(f"cfg.feat_dim={cfg.feat_dim} but corpus features "
                         f"are {corpus.feat_dim}-dim")
    model = build_model(cfg)
    fx = FeatureExtractor(corpus.feat_dim, cfg.dim, cfg.fx_seed)
    optimizer = make_optimizer(model, cfg)
    start = 0
    if resume_from is not None:
        meta = load_checkpoint(resume_from, model, optimizer)
        start = meta["step"]

    total = steps if steps is not None else cfg.total_steps
    losses = []
    log = open(log_path, "a") if log_path else None
    try:
        for step in range(start + 1, total + 1):
            triple = train_step(model, optimizer, fx, corpus, cfg, step)
            losses.append(triple)
            if log and step % cfg.log_interval == 0:
                log.write(json.dumps({
                    "step": step, "l_mask": triple.l_mask,
                    "l_repa": triple.l_repa, "l_critic": triple.l_critic,
                    "lr": triple.lr}) + "\n")
            if progress and step % 200 == 0:
                progress(step, triple)
            if checkpoint_path and (step % cfg.checkpoint_interval == 0
                                    or step == total):
                save_checkpoint(checkpoint_path, model, optimizer, cfg, step)
    finally:
        if log:
            log.close()
    return TrainResult(model=model, fx=fx, cfg=cfg, losses=losses, step=total)


# --- checkpoint format ---------------------------------------------------------
# magic | version u32 | config-JSON (u32 length prefix) | n_blobs u32 |
# per blob: name (u32 length prefix, utf-8) | ndim u32 | dims u64* | f32 LE data

def _named_state(model: ToyModel, optimizer: torch.optim.Optimizer) -> dict:
    blobs = {name: p.detach().to(torch.float32)
             for name, p in model.state_dict().items()}
    names = [n for n, _ in model.named_parameters()]
    state = optimizer.state_dict()["state"]
    for i, name in enumerate(names):
        if i in state:
            blobs[f"adam.{name}.exp_avg"] = state[i]["exp_avg"].to(torch.float32)
            blobs[f"adam.{name}.exp_avg_sq"] = state[i]["exp_avg_sq"].to(torch.float32)
            blobs[f"adam.{name}.step"] = torch.as_tensor(
                state[i]["step"], dtype=torch.float32).reshape(1)
    return blobs


def save_checkpoint(path, model: ToyModel, optimizer: torch.optim.Optimizer,
                    cfg: TrainConfig, step: int) -> None:
    blobs = _named_state(model, optimizer)
    meta = json.dumps({"config": cfg.to_dict(), "step": step},
                      sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(blobs)))
        for name, tensor in blobs.items():
            data = tensor.numpy().astype("<f4")
            enc = name.encode()
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<Q", d))
            f.write(data.tobytes())


def read_checkpoint(path) -> tuple:
    """Returns (meta dict, name -> float32 ndarray)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a voxkit checkpoint")
    (version,) = struct.unpack("<I", raw[8:12])
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack("<I", raw[12:16])
    meta = json.loads(raw[16:16 + mlen].decode())
    off = 16 + mlen
    (n_blobs,) = struct.unpack("<I", raw[off:off + 4])
    off += 4
    blobs = {}
    for _ in range(n_blobs):
        (nlen,) = struct.unpack("<I", raw[off:off + 4])
        off += 4
        name = raw[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack("<I", raw[off:off + 4])
        off += 4
        shape = struct.unpack(f"<{ndim}Q", raw[off:off + 8 * ndim])
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(raw, dtype="<f4", count=count,
                                    offset=off).reshape(shape).copy()
        off += 4 * count
    return meta, blobs


def load_checkpoint(path, model: ToyModel,
                    optimizer: torch.optim.Optimizer = None) -> dict:
    meta, blobs = read_checkpoint(path)
    state = {k: torch.as_tensor(v) for k, v in blobs.items()
             if not k.startswith("adam.")}
    model.load_state_dict(state)
    if optimizer is not None:
        # prime Adam slots, then overwrite them with the saved moments
        names = [n for n, _ in model.named_parameters()]
        opt_state = optimizer.state_dict()
        for i, name in enumerate(names):
            key = f"adam.{name}.exp_avg"
            if key not in blobs:
                continue
            opt_state["state"][i] = {
                "step": torch.as_tensor(float(blobs[f"adam.{name}.step"][0])),
                "exp_avg": torch.as_tensor(blobs[key]),
                "exp_avg_sq": torch.as_tensor(blobs[f"adam.{name}.exp_avg_sq"]),
            }
        optimizer.load_state_dict(opt_state)
    return meta


def load_model(path) -> tuple:
    """Rebuild (model, fx, cfg, step) from a checkpoint file."""
    meta, blobs = read_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    model = build_model(cfg)
    model.load_state_dict({k: torch.as_tensor(v) for k, v in blobs.items()
                           if not k.startswith("adam.")})
    model.eval()
    fx = FeatureExtractor(cfg.feat_dim, cfg.dim, cfg.fx_seed)
    return model, fx, cfg, meta["step"]
