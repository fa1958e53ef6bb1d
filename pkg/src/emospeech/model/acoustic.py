"""EmoSpeech generator: parameter store, forward pass and parameter census."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..core import ops
from ..core.tensor import Tensor, exp, reshape
from ..errors import ContractError
from . import layers
from .config import ModelConfig, ParamSpec, discriminator_param_specs, generator_param_specs


def init_params(specs: Sequence[ParamSpec], seed: int) -> "OrderedDict[str, Tensor]":
    """Uniform Glorot init for matrices and kernels, constants for the rest."""
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, Tensor] = OrderedDict()
    for spec in specs:
        if spec.init == "zeros":
            data = np.zeros(spec.shape)
        elif spec.init == "ones":
            data = np.ones(spec.shape)
        else:
            if len(spec.shape) == 3:
                c_out, c_in, k = spec.shape
                fan_in, fan_out = c_in * k, c_out * k
            else:
                fan_in, fan_out = spec.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, size=spec.shape)
        params[spec.name] = Tensor(data, requires_grad=True, name=spec.name)
    return params


class ParameterStore:
    """Named parameters with component tags, in a fixed order."""

    def __init__(self, config: ModelConfig, specs: Sequence[ParamSpec], seed: int = 0, arrays=None):
        self.config = config
        self.specs = list(specs)
        if arrays is None:
            self.params = init_params(self.specs, seed)
        else:
            self.params = OrderedDict()
            for spec in self.specs:
                data = np.array(arrays[spec.name], dtype=np.float64)
                if data.shape != spec.shape:
                    raise ContractError(f"parameter {spec.name}: expected shape {spec.shape}, got {data.shape}")
                self.params[spec.name] = Tensor(data, requires_grad=True, name=spec.name)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def components(self) -> dict[str, str]:
        return {s.name: s.component for s in self.specs}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.params.items())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]


@dataclass
class VarianceOutputs:
    log_durations: Tensor
    pitch: Tensor
    energy: Tensor
    egemaps: Tensor
    durations: np.ndarray  # frame counts actually used for upsampling
    upsampled_len: int


@dataclass
class GeneratorOutput:
    mel: Tensor
    variances: VarianceOutputs
    dumps: list[layers.AttentionDump] = field(default_factory=list)
    c: Tensor | None = None


def durations_from_log(log_durations: np.ndarray) -> np.ndarray:
    """Inverse of the log(d + 1) duration target, rounded and clamped at 0."""
    return np.maximum(np.round(np.exp(log_durations) - 1.0), 0).astype(np.int64)


class AcousticModel(ParameterStore):
    def __init__(self, config: ModelConfig, seed: int = 0, arrays=None):
        super().__init__(config, generator_param_specs(config), seed, arrays)

    def conditioning(self, speaker_id: int, emotion_id: int) -> Tensor:
        return layers.conditioning_vector(speaker_id, emotion_id, self.params["emb.speaker"], self.params["emb.emotion"])

    def encode(self, tokens, c: Tensor, ctx: layers.RunContext, dumps: list | None = None) -> Tensor:
        cfg = self.config
        tokens = np.asarray(tokens, dtype=np.int64)
        n = tokens.shape[0]
        if n == 0:
            raise ContractError("forward: empty token sequence")
        h = layers.embed(self.params["emb.token"], tokens, "token") + ops.sinusoidal_positions(n, cfg.hidden)
        return self._stack(h, c, "enc", cfg.n_enc_layers, ctx, dumps)

    def decode(self, h: Tensor, c: Tensor, ctx: layers.RunContext, dumps: list | None = None) -> Tensor:
        cfg = self.config
        h = h + ops.sinusoidal_positions(h.shape[0], cfg.hidden)
        h = self._stack(h, c, "dec", cfg.n_dec_layers, ctx, dumps)
        return layers.linear(h, self.params["mel_head.w"], self.params["mel_head.b"])

    def _stack(self, h, c, location, n_layers, ctx, dumps):
        cfg = self.config
        for i in range(n_layers):
            trace = layers.BlockTrace()
            h = layers.fft_block(
                h, c, self.params, f"{location}.{i}", cfg.n_heads, cfg.use_cca,
                dropout=cfg.ffn_dropout, ctx=ctx, eps=cfg.ln_eps, trace=trace,
            )
            if dumps is not None and trace.cca_weights is not None:
                w = trace.cca_weights.data
                for head in range(w.shape[1]):
                    dumps.append(layers.AttentionDump(
                        "encoder" if location == "enc" else "decoder", i, head, w[:, head].copy()))
        return h

    def predict_variances(self, h: Tensor, ctx: layers.RunContext, mask=None):
        cfg = self.config
        kw = dict(mask=mask, dropout=cfg.predictor_dropout, ctx=ctx, eps=cfg.ln_eps)
        log_d = layers.variance_predictor(h, self.params, "va.duration", **kw)
        pitch = layers.variance_predictor(h, self.params, "va.pitch", **kw)
        energy = layers.variance_predictor(h, self.params, "va.energy", **kw)
        egemaps = layers.egemaps_predict(h, self.params, "va.egemaps", **kw)
        return log_d, pitch, energy, egemaps

    def forward(
        self,
        tokens,
        speaker_id: int,
        emotion_id: int,
        teacher: dict | None = None,
        ctx: layers.RunContext | None = None,
        utterance_id: str = "",
    ) -> GeneratorOutput:
        """Generate a mel spectrogram for one utterance.

        ``teacher`` may hold ground-truth ``durations``, ``pitch`` and
        ``energy`` (token-level arrays); any that are given replace the
        predicted values downstream of the predictors.
        """
        cfg = self.config
        ctx = ctx or layers.RunContext()
        dumps: list[layers.AttentionDump] = []
        c = self.conditioning(speaker_id, emotion_id)
        h = self.encode(tokens, c, ctx, dumps)
        n = h.shape[0]
        if not cfg.use_cca:
            # naive conditioning: c broadcast over tokens before the adaptor
            h = h + reshape(c, (1, cfg.hidden))
        log_d, pitch, energy, egemaps = self.predict_variances(h, ctx)

        teacher = teacher or {}
        p_in = Tensor(np.asarray(teacher["pitch"], dtype=np.float64)) if "pitch" in teacher else pitch
        e_in = Tensor(np.asarray(teacher["energy"], dtype=np.float64)) if "energy" in teacher else energy
        h = h + layers.linear(reshape(p_in, (n, 1)), self.params["va.pitch_proj.w"], self.params["va.pitch_proj.b"])
        h = h + layers.linear(reshape(e_in, (n, 1)), self.params["va.energy_proj.w"], self.params["va.energy_proj.b"])
        if "durations" in teacher:
            durations = np.asarray(teacher["durations"], dtype=np.int64)
        else:
            durations = durations_from_log(log_d.data)
        up = layers.length_regulate(h, durations)
        mel = self.decode(up, c, ctx, dumps)

        for dump in dumps:
            dump.utterance_id = utterance_id
            dump.speaker_id = int(speaker_id)
            dump.emotion_id = int(emotion_id)
        variances = VarianceOutputs(log_d, pitch, energy, egemaps, durations, int(durations.sum()))
        return GeneratorOutput(mel, variances, dumps, c)

    __call__ = forward


class Discriminator(ParameterStore):
    def __init__(self, config: ModelConfig, seed: int = 0, arrays=None):
        super().__init__(config, discriminator_param_specs(config), seed, arrays)


def count_parameters(model_or_config, include_discriminator: bool | None = None) -> dict:
    """Trainable-parameter census by component.

    Accepts a model (counts its actual tensors) or a config (counts from the
    shape table without allocating). Discriminator parameters are reported
    apart from the generator total.
    """
    if isinstance(model_or_config, ParameterStore):
        cfg = model_or_config.config
        gen = [(s.component, s.size) for s in model_or_config.specs]
    else:
        cfg = model_or_config
        gen = [(s.component, s.size) for s in generator_param_specs(cfg)]
    breakdown: dict[str, int] = {}
    for comp, size in gen:
        breakdown[comp] = breakdown.get(comp, 0) + size
    report = {"components": breakdown, "generator_total": sum(breakdown.values())}
    if include_discriminator is None:
        include_discriminator = cfg.use_jcu
    report["discriminator_total"] = (
        sum(s.size for s in discriminator_param_specs(cfg)) if include_discriminator else 0
    )
    report["total"] = report["generator_total"] + report["discriminator_total"]
    return report


def all_parameters(*stores: Iterable[ParameterStore]) -> list[Tensor]:
    return [p for s in stores for p in s.parameters()]
