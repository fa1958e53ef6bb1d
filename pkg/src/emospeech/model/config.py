"""Architecture hyperparameters and ablation presets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..errors import ConfigError

ABLATIONS = {
    1: dict(use_cln=False, use_cca=False, use_jcu=False),  # FastSpeech2 + EMP
    2: dict(use_cln=True, use_cca=False, use_jcu=False),  # + CLN
    3: dict(use_cln=True, use_cca=True, use_jcu=False),  # + CCA
    4: dict(use_cln=True, use_cca=True, use_jcu=True),  # + JCU
}


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 32
    hidden: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 2
    ffn_filter: int = 128
    ffn_kernels: tuple[int, int] = (9, 1)
    ffn_dropout: float = 0.1
    spk_emb_dim: int = 32
    emo_emb_dim: int = 32
    n_speakers: int = 4
    n_emotions: int = 5
    predictor_filter: int = 64
    predictor_kernel: int = 3
    predictor_dropout: float = 0.5
    k_egemaps: int = 2
    mel_channels: int = 16
    ln_eps: float = 1e-5
    use_cln: bool = True
    use_cca: bool = True
    use_jcu: bool = True
    cln_everywhere: bool = False
    # JCU discriminator
    disc_channels: tuple[int, ...] = (64, 128, 256)
    disc_kernel: int = 5
    disc_stride: int = 2
    disc_head_channels: int = 64
    disc_cond_dim: int = 64
    disc_min_frames: int = 8
    disc_slope: float = 0.2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        counts = (
            "vocab_size", "hidden", "n_enc_layers", "n_dec_layers", "n_heads", "ffn_filter", "spk_emb_dim",
            "emo_emb_dim", "n_speakers", "n_emotions", "predictor_filter", "predictor_kernel", "k_egemaps",
            "mel_channels",
        )
        for key in counts:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}", key)
        if self.spk_emb_dim + self.emo_emb_dim != self.hidden:
            raise ConfigError(
                f"spk_emb_dim + emo_emb_dim must equal hidden ({self.spk_emb_dim} + {self.emo_emb_dim} != {self.hidden})",
                "hidden",
            )
        if self.hidden % self.n_heads:
            raise ConfigError(f"hidden {self.hidden} is not divisible by n_heads {self.n_heads}", "n_heads")
        for k in (*self.ffn_kernels, self.predictor_kernel):
            if k % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd, got {k}", "ffn_kernels")
        if not 0.0 <= self.ffn_dropout < 1.0 or not 0.0 <= self.predictor_dropout < 1.0:
            raise ConfigError("dropout rates must lie in [0, 1)", "predictor_dropout")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def ablation(self, ablation_id: int) -> "ModelConfig":
        if ablation_id not in ABLATIONS:
            raise ConfigError(f"ablation id must be one of {sorted(ABLATIONS)}, got {ablation_id}", "ablation")
        return self.replace(**ABLATIONS[ablation_id])

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads

    @classmethod
    def toy(cls, **changes) -> "ModelConfig":
        return cls(**changes)

    @classmethod
    def paper(cls, **changes) -> "ModelConfig":
        base = dict(
            vocab_size=361,
            hidden=512,
            n_enc_layers=6,
            n_dec_layers=6,
            n_heads=2,
            ffn_filter=512,
            spk_emb_dim=256,
            emo_emb_dim=256,
            n_speakers=10,
            n_emotions=5,
            predictor_filter=256,
            k_egemaps=2,
            mel_channels=80,
        )
        base.update(changes)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known}
        return cls(**kwargs)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    component: str
    init: str = "xavier"  # xavier | zeros | ones

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


def _linear(name, n_in, n_out, component, init_w="xavier", init_b="zeros"):
    return [ParamSpec(f"{name}.w", (n_in, n_out), component, init_w), ParamSpec(f"{name}.b", (n_out,), component, init_b)]


def _conv(name, c_in, c_out, k, component):
    return [ParamSpec(f"{name}.w", (c_out, c_in, k), component), ParamSpec(f"{name}.b", (c_out,), component, "zeros")]


def _layer_norm(name, dim, component):
    return [ParamSpec(f"{name}.gamma", (dim,), component, "ones"), ParamSpec(f"{name}.beta", (dim,), component, "zeros")]


def _norm(name, cfg: ModelConfig, conditional: bool, component: str):
    if not conditional:
        return _layer_norm(name, cfg.hidden, component)
    # scale map starts at 1 and bias map at 0, so CLN equals plain LN at init
    return (
        _linear(f"{name}.scale", cfg.hidden, cfg.hidden, "cln", init_w="zeros", init_b="ones")
        + _linear(f"{name}.bias", cfg.hidden, cfg.hidden, "cln", init_w="zeros", init_b="zeros")
    )


def _fft_block(prefix, cfg: ModelConfig, component):
    h = cfg.hidden
    specs = []
    for proj in ("q", "k", "v", "o"):
        specs += _linear(f"{prefix}.attn.{proj}", h, h, component)
    specs += _norm(f"{prefix}.attn_norm", cfg, cfg.use_cln and cfg.cln_everywhere, component)
    k1, k2 = cfg.ffn_kernels
    specs += _conv(f"{prefix}.ffn.conv1", h, cfg.ffn_filter, k1, component)
    specs += _conv(f"{prefix}.ffn.conv2", cfg.ffn_filter, h, k2, component)
    specs += _norm(f"{prefix}.ffn_norm", cfg, cfg.use_cln, component)
    return specs


def _predictor(prefix, cfg: ModelConfig, n_out):
    f, k = cfg.predictor_filter, cfg.predictor_kernel
    return (
        _conv(f"{prefix}.conv1", cfg.hidden, f, k, "predictors")
        + _layer_norm(f"{prefix}.norm1", f, "predictors")
        + _conv(f"{prefix}.conv2", f, f, k, "predictors")
        + _layer_norm(f"{prefix}.norm2", f, "predictors")
        + _linear(f"{prefix}.out", f, n_out, "predictors")
    )


def generator_param_specs(cfg: ModelConfig) -> list[ParamSpec]:
    """Every generator parameter in a fixed, documented order."""
    specs = [
        ParamSpec("emb.token", (cfg.vocab_size, cfg.hidden), "embeddings"),
        ParamSpec("emb.speaker", (cfg.n_speakers, cfg.spk_emb_dim), "embeddings"),
        ParamSpec("emb.emotion", (cfg.n_emotions, cfg.emo_emb_dim), "embeddings"),
    ]
    for i in range(cfg.n_enc_layers):
        specs += _fft_block(f"enc.{i}", cfg, "encoder")
    specs += _predictor("va.duration", cfg, 1)
    specs += _predictor("va.pitch", cfg, 1)
    specs += _predictor("va.energy", cfg, 1)
    specs += _predictor("va.egemaps", cfg, cfg.k_egemaps)
    specs += _linear("va.pitch_proj", 1, cfg.hidden, "predictors")
    specs += _linear("va.energy_proj", 1, cfg.hidden, "predictors")
    for i in range(cfg.n_dec_layers):
        specs += _fft_block(f"dec.{i}", cfg, "decoder")
    specs += _linear("mel_head", cfg.hidden, cfg.mel_channels, "mel_head")
    return specs


def discriminator_param_specs(cfg: ModelConfig) -> list[ParamSpec]:
    specs = []
    c_in = cfg.mel_channels
    for i, c_out in enumerate(cfg.disc_channels):
        specs += _conv(f"disc.shared.{i}", c_in, c_out, cfg.disc_kernel, "discriminator")
        c_in = c_out
    hc = cfg.disc_head_channels
    specs += _conv("disc.uncond.0", c_in, hc, 3, "discriminator")
    specs += _conv("disc.uncond.1", hc, 1, 3, "discriminator")
    specs += _linear("disc.cond_proj", cfg.hidden, cfg.disc_cond_dim, "discriminator")
    specs += _conv("disc.cond.0", c_in + cfg.disc_cond_dim, hc, 3, "discriminator")
    specs += _conv("disc.cond.1", hc, 1, 3, "discriminator")
    return specs
