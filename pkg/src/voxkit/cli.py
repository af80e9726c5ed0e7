"""voxkit command line: degrade | train | enhance | eval | sweep.

Every command reads one JSON config, is reproducible from (config, seed), and
echoes the effective config into its run directory. Exit codes: 0 ok,
2 config error, 3 I/O error, 4 non-finite loss, 5 model contract violation.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, evalkit, maskgen, rvq
from .assets import DirectoryAssets, SyntheticAssets
from .audio import AudioBuffer, read_wav, resample, stft_powerlaw, write_wav
from .config import RunConfig
from .corpus import make_toy_corpus
from .degrade import Task, apply_chain, sample_chain
from .errors import (ConfigError, ContractViolation, IoFailure, NonFiniteLoss,
                     VoxkitError)
from .evalkit import SweepItem
from .maskgen import MaskSchedule, OneHotOracle
from .model import ContractAdapter, critic_forward, encode_semantic
from .training import load_model, train

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NONFINITE = 4
EXIT_CONTRACT = 5

log = logging.getLogger("voxkit")


def _setup_logging():
    level = os.environ.get("VOXKIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _echo_meta(out_dir: Path, cfg: RunConfig, args: argparse.Namespace):
    meta = {"version": __version__, "command": args.command,
            "seed": args.seed, "config": cfg.to_dict()}
    _atomic_write(out_dir / "run_meta.json",
                  json.dumps(meta, sort_keys=True, indent=2).encode())


def _file_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(name.encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return int(np.random.SeedSequence([seed] + words).generate_state(1)[0])


# --- degrade -------------------------------------------------------------------

def cmd_degrade(cfg: RunConfig, args) -> int:
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    if not in_dir.is_dir():
        raise IoFailure(f"input directory {in_dir} does not exist")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "clean").mkdir(exist_ok=True)
    (out_dir / "distorted").mkdir(exist_ok=True)

    seed = args.seed if args.seed is not None else cfg.seeds.degrade
    task = Task(args.task)
    rate = cfg.audio.sample_rate
    policy = cfg.degradation.to_policy(rate)
    deg = cfg.degradation
    if deg.noise_dir or deg.rir_dir or deg.voice_dir:
        assets = DirectoryAssets(deg.noise_dir, deg.rir_dir, deg.voice_dir)
    else:
        assets = SyntheticAssets()

    files = sorted(in_dir.glob("*.wav"))

    def process(path: Path) -> dict:
        fseed = _file_seed(seed, path.name)
        buf = read_wav(path)
        if buf.sample_rate != rate:
            buf = resample(buf, rate)
        spec = sample_chain(policy, task, fseed)
        distorted = apply_chain(buf, spec, assets)
        clean_out = out_dir / "clean" / path.name
        dist_out = out_dir / "distorted" / path.name
        write_wav(buf, clean_out)
        write_wav(distorted, dist_out)
        return {"clean_path": str(clean_out.relative_to(out_dir)),
                "distorted_path": str(dist_out.relative_to(out_dir)),
                "task": task.value, "spec": json.loads(spec.to_json())}

    if args.jobs > 1 and len(files) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(process, files))
    else:
        records = [process(p) for p in files]

    manifest = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    _atomic_write(out_dir / "manifest.jsonl", manifest.encode())
    _echo_meta(out_dir, cfg, args)
    print(f"degraded {len(records)} file(s) -> {out_dir / 'manifest.jsonl'}")
    return 0


# --- train ----------------------------------------------------------------------

def _build_corpus(cfg: RunConfig, seed: int):
    overrides = cfg.corpus.overrides(cfg.model, cfg.audio, cfg.tokenizer)
    return make_toy_corpus(cfg.corpus.kind, cfg.corpus.size, seed, **overrides)


def cmd_train(cfg: RunConfig, args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.seeds.train
    model_cfg = cfg.model
    model_cfg.seed = seed

    corpus = _build_corpus(cfg, cfg.seeds.corpus)
    if corpus.feat_dim != model_cfg.feat_dim:
        raise ConfigError(f"model.feat_dim={model_cfg.feat_dim} but corpus "
                          f"produces {corpus.feat_dim}-dim features")
    if corpus.codec is not None:
        rvq.save_codebooks(corpus.codec, out_dir / "codebooks.rvq")

    steps = args.steps if args.steps is not None else model_cfg.total_steps
    result = train(model_cfg, corpus,
                   log_path=out_dir / "train_log.jsonl",
                   checkpoint_path=out_dir / "checkpoint.vox",
                   resume_from=args.resume, steps=steps,
                   progress=lambda s, tr: log.info(
                       "step %d loss %.4f", s, tr.total))
    _echo_meta(out_dir, cfg, args)
    print(f"trained to step {result.step}; checkpoint at "
          f"{out_dir / 'checkpoint.vox'}")
    return 0


# --- enhance ---------------------------------------------------------------------

def cmd_enhance(cfg: RunConfig, args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, fx, model_cfg, _ = load_model(args.checkpoint)
    if cfg.tokenizer.codebook_path:
        books = rvq.load_codebooks(cfg.tokenizer.codebook_path)
    else:
        candidate = Path(args.checkpoint).parent / "codebooks.rvq"
        if not candidate.exists():
            raise ConfigError("enhance needs tokenizer.codebook_path (no "
                              "codebooks found next to the checkpoint)")
        books = rvq.load_codebooks(candidate)

    rate = cfg.audio.sample_rate
    buf = read_wav(args.in_wav)
    if buf.sample_rate != rate:
        buf = resample(buf, rate)
    spec = stft_powerlaw(buf, cfg.audio.stft_window, cfg.audio.stft_hop,
                         cfg.audio.power_exponent)
    if spec.n_bins != model_cfg.feat_dim:
        raise ConfigError(f"STFT produces {spec.n_bins} bins but the model "
                          f"expects {model_cfg.feat_dim}")

    dist_frames = spec.frames
    prompt_grid = None
    pf = 0
    if args.prompt_wav:
        pbuf = read_wav(args.prompt_wav)
        if pbuf.sample_rate != rate:
            pbuf = resample(pbuf, rate)
        pspec = stft_powerlaw(pbuf, cfg.audio.stft_window, cfg.audio.stft_hop,
                              cfg.audio.power_exponent)
        prompt_grid = rvq.encode(pspec.frames, books)
        pf = prompt_grid.shape[1]
        # the prompt span of the conditioning input is silence
        dist_frames = np.concatenate(
            [np.zeros((pf, spec.n_bins)), dist_frames], axis=0)

    seed = args.seed if args.seed is not None else cfg.seeds.eval
    task_id = 0 if args.task == "enhancement" else 1
    cond = encode_semantic(model, dist_frames, task_id, fx)
    adapter = ContractAdapter(model)
    steps = args.steps if args.steps is not None else cfg.sampler.steps
    grid = maskgen.sample(
        adapter, cond, frames=dist_frames.shape[0], layers=books.layers,
        steps=steps, mode=args.mode or cfg.sampler.mode, prompt=prompt_grid,
        temperature=cfg.sampler.temperature, seed=seed,
        schedule=MaskSchedule(cfg.sampler.schedule_horizon),
        trace_path=(out_dir / "sampler_trace.jsonl") if args.trace else None)

    recon = rvq.decode(grid, books)
    np.savez(out_dir / "enhanced.npz", features=recon, grid=grid,
             prompt_frames=pf, stft_window=cfg.audio.stft_window,
             stft_hop=cfg.audio.stft_hop,
             power_exponent=cfg.audio.power_exponent)
    _echo_meta(out_dir, cfg, args)
    print(f"wrote feature-domain reconstruction to {out_dir / 'enhanced.npz'}")
    return 0


# --- eval / sweep -----------------------------------------------------------------

def _sweep_items(cfg: RunConfig, corpus, model, fx, use_prompt: bool,
                 prompt_frames: int):
    held = corpus.items[-cfg.eval.items:]
    items = []
    for it in held:
        cond = encode_semantic(model, it.distorted, it.task_id, fx)
        pcond = None
        if use_prompt and prompt_frames:
            silenced = it.distorted.copy()
            silenced[:prompt_frames] = 0.0
            pcond = encode_semantic(model, silenced, it.task_id, fx)
        items.append(SweepItem(truth=it.grid, cond=cond, prompt_cond=pcond,
                               clean_feats=it.clean_feats))
    return items


def cmd_eval(cfg: RunConfig, args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, fx, model_cfg, _ = load_model(args.checkpoint)
    corpus = _build_corpus(cfg, cfg.seeds.corpus)

    if args.emit_critic_map:
        _emit_critic_map(cfg, args, model, fx, corpus, out_dir)

    use_prompt = cfg.eval.use_prompt
    pf = cfg.sampler.prompt_frames or model_cfg.prompt_frames
    items = _sweep_items(cfg, corpus, model, fx, use_prompt, pf)
    if args.oracle_model:
        vocab = model_cfg.vocab
        contract = lambda item: OneHotOracle(item.truth, vocab)  # noqa: E731
    else:
        contract = ContractAdapter(model)

    seed = args.seed if args.seed is not None else cfg.seeds.eval
    seeds = [seed + s for s in cfg.eval.seeds]
    reports = evalkit.step_sweep(
        contract, items, cfg.eval.s_list, cfg.eval.modes, seeds=seeds,
        temperature=cfg.sampler.temperature,
        codec=corpus.codec, use_prompt=use_prompt, prompt_frames=pf,
        compute_auc=cfg.eval.compute_critic_auc,
        csv_path=out_dir / "report.csv",
        schedule=MaskSchedule(cfg.sampler.schedule_horizon))
    _echo_meta(out_dir, cfg, args)
    print(f"wrote {len(reports)} rows to {out_dir / 'report.csv'}")
    return 0


def _emit_critic_map(cfg: RunConfig, args, model, fx, corpus, out_dir: Path):
    if corpus.codec is None:
        raise ConfigError("--emit-critic-map needs a tokenized-audio corpus "
                          "(no codec available)")
    buf = read_wav(args.emit_critic_map)
    if buf.sample_rate != cfg.audio.sample_rate:
        buf = resample(buf, cfg.audio.sample_rate)
    spec = stft_powerlaw(buf, cfg.audio.stft_window, cfg.audio.stft_hop,
                         cfg.audio.power_exponent)
    grid = rvq.encode(spec.frames, corpus.codec)
    cond = encode_semantic(model, spec.frames, 0, fx)
    scores = critic_forward(model, grid, cond)
    per_frame = scores.mean(axis=0)
    lines = ["frame,score"] + [f"{i},{s:.6f}" for i, s in enumerate(per_frame)]
    _atomic_write(out_dir / "critic_map.csv", ("\n".join(lines) + "\n").encode())
    print(f"wrote critic map to {out_dir / 'critic_map.csv'}")


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxkit", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)

    d = sub.add_parser("degrade", help="apply sampled distortion chains")
    common(d)
    d.add_argument("--in", dest="in_dir", required=True)
    d.add_argument("--out", dest="out_dir", required=True)
    d.add_argument("--task", choices=["enhancement", "extraction"],
                   default="enhancement")

    t = sub.add_parser("train", help="train the toy model on a toy corpus")
    common(t)
    t.add_argument("--out", dest="out_dir", required=True)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--resume", default=None)

    e = sub.add_parser("enhance", help="restore one utterance")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--in-wav", required=True)
    e.add_argument("--out", dest="out_dir", required=True)
    e.add_argument("--prompt-wav", default=None)
    e.add_argument("--mode", choices=["vanilla", "self_critic"], default=None)
    e.add_argument("--steps", type=int, default=None)
    e.add_argument("--task", choices=["enhancement", "extraction"],
                   default="enhancement")
    e.add_argument("--trace", action="store_true")

    for name in ("eval", "sweep"):
        v = sub.add_parser(name, help="sampler sweep -> CSV report")
        common(v)
        v.add_argument("--checkpoint", required=True)
        v.add_argument("--out", dest="out_dir", required=True)
        v.add_argument("--oracle-model", action="store_true")
        v.add_argument("--emit-critic-map", default=None,
                       help="WAV whose per-frame critic scores are written")
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.command == "degrade":
            return cmd_degrade(cfg, args)
        if args.command == "train":
            return cmd_train(cfg, args)
        if args.command == "enhance":
            return cmd_enhance(cfg, args)
        return cmd_eval(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoFailure, FileNotFoundError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteLoss as e:
        print(f"non-finite loss: {e}", file=sys.stderr)
        return EXIT_NONFINITE
    except ContractViolation as e:
        print(f"contract violation: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except VoxkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
