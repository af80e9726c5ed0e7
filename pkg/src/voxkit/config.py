"""Run configuration: one JSON document with strict section/key validation.

Unknown keys are rejected anywhere in the tree, and degradation ranges are
checked against the training-recipe bounds.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .degrade import ChainPolicy
from .errors import ConfigError
from .model import TrainConfig


def _from_dict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{where}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}' in '{where}'")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"bad values in '{where}': {e}") from e


@dataclass
class AudioConfig:
    sample_rate: int = 16000
    stft_window: int = 512
    stft_hop: int = 256
    power_exponent: float = 0.3


@dataclass
class DegradationConfig:
    p_noise: float = 0.9
    p_reverb: float = 0.5
    p_clip: float = 0.25
    p_bandwidth: float = 0.5
    p_other_voice: float = 0.5
    p_vocal_effect: float = 0.5
    snr_db: list = field(default_factory=lambda: [-5.0, 20.0])
    clip_threshold: list = field(default_factory=lambda: [0.06, 0.9])
    bandwidths_khz: list = field(default_factory=lambda: [2, 4, 8, 16, 24, 32])
    voice_snr_db: list = field(default_factory=lambda: [0.0, 10.0])
    eq_gain_db: list = field(default_factory=lambda: [-5.0, 5.0])
    eq_center_hz: list = field(default_factory=lambda: [10.0, 12000.0])
    noise_dir: str = None
    rir_dir: str = None
    voice_dir: str = None

    def to_policy(self, sample_rate: int) -> ChainPolicy:
        policy = ChainPolicy(
            p_noise=self.p_noise, p_reverb=self.p_reverb, p_clip=self.p_clip,
            p_bandwidth=self.p_bandwidth, p_other_voice=self.p_other_voice,
            p_vocal_effect=self.p_vocal_effect,
            snr_db=tuple(self.snr_db),
            clip_threshold=tuple(self.clip_threshold),
            bandwidths_khz=tuple(self.bandwidths_khz),
            voice_snr_db=tuple(self.voice_snr_db),
            eq_gain_db=tuple(self.eq_gain_db),
            eq_center_hz=tuple(self.eq_center_hz),
        ).for_sample_rate(sample_rate)
        try:
            policy.validate()
        except ValueError as e:
            raise ConfigError(f"degradation: {e}") from e
        return policy


@dataclass
class TokenizerConfig:
    layers: int = 4
    vocab: int = 64
    codebook_path: str = None
    normalize: bool = False


@dataclass
class CorpusConfig:
    kind: str = "patterned"
    size: int = 512
    styles: int = 8
    contents: int = 8
    style_cue: float = 0.25
    noise_sigma: float = 1.0
    content_change: float = 0.08
    token_noise: float = 0.05
    duration_s: float = 2.0
    extraction_frac: float = 0.25
    held_out: int = 32

    def overrides(self, model_cfg: TrainConfig, audio: AudioConfig,
                  tok: TokenizerConfig) -> dict:
        if self.kind == "patterned":
            return dict(frames=model_cfg.seq_frames, vocab=model_cfg.vocab,
                        layers=model_cfg.rvq_layers, styles=self.styles,
                        contents=self.contents, feat_dim=model_cfg.feat_dim,
                        content_change=self.content_change,
                        style_cue=self.style_cue, noise_sigma=self.noise_sigma,
                        token_noise=self.token_noise)
        return dict(rate=audio.sample_rate, duration_s=self.duration_s,
                    window=audio.stft_window, hop=audio.stft_hop,
                    exponent=audio.power_exponent, vocab=tok.vocab,
                    layers=tok.layers, extraction_frac=self.extraction_frac)


@dataclass
class SamplerSection:
    steps: int = 8
    mode: str = "self_critic"
    temperature: float = 1.0
    prompt_frames: int = 0
    schedule_horizon: float = 1.0

    def validate(self):
        if self.mode not in ("vanilla", "self_critic"):
            raise ConfigError(f"sampler: unknown mode '{self.mode}'")
        if self.steps < 1:
            raise ConfigError("sampler: steps must be >= 1")


@dataclass
class EvalSection:
    s_list: list = field(default_factory=lambda: [4, 8, 16])
    modes: list = field(default_factory=lambda: ["vanilla", "self_critic"])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    items: int = 16
    compute_critic_auc: bool = False
    use_prompt: bool = False


@dataclass
class SeedsSection:
    degrade: int = 0
    train: int = 0
    eval: int = 0
    corpus: int = 0


@dataclass
class RunConfig:
    audio: AudioConfig = field(default_factory=AudioConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    model: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)

    _SECTIONS = {
        "audio": AudioConfig, "degradation": DegradationConfig,
        "tokenizer": TokenizerConfig, "model": TrainConfig,
        "corpus": CorpusConfig, "sampler": SamplerSection,
        "eval": EvalSection, "seeds": SeedsSection,
    }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        unknown = set(doc) - set(cls._SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section '{sorted(unknown)[0]}'")
        kwargs = {}
        for name, section_cls in cls._SECTIONS.items():
            if name in doc:
                if section_cls is TrainConfig:
                    try:
                        kwargs[name] = TrainConfig.from_dict(doc[name])
                    except (TypeError, ValueError) as e:
                        raise ConfigError(f"model: {e}") from e
                else:
                    kwargs[name] = _from_dict(section_cls, doc[name], name)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        return cls.from_dict(doc)

    def validate(self):
        self.sampler.validate()
        self.degradation.to_policy(self.audio.sample_rate)
        if self.corpus.kind not in ("patterned", "tokenized-audio"):
            raise ConfigError(f"corpus: unknown kind '{self.corpus.kind}'")

    def to_dict(self) -> dict:
        return {
            "audio": asdict(self.audio),
            "degradation": asdict(self.degradation),
            "tokenizer": asdict(self.tokenizer),
            "model": self.model.to_dict(),
            "corpus": asdict(self.corpus),
            "sampler": asdict(self.sampler),
            "eval": asdict(self.eval),
            "seeds": asdict(self.seeds),
        }
