"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Keys are the fields of
``ModelConfig`` and ``TrainConfig`` plus the run/corpus keys below; tuples
are comma-separated. Required keys: ``vocab_size``, ``hidden``,
``mel_channels``. ``spk_emb_dim``/``emo_emb_dim`` default to ``hidden / 2``.

Run keys:
    steps             training steps (default 500)
    ablation          1..4, overrides use_cln/use_cca/use_jcu
Corpus keys (speaker/emotion/vocab/mel/k sizes come from the model):
    corpus_utterances, corpus_min_tokens, corpus_max_tokens,
    corpus_max_duration, corpus_seed
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError
from ..model.config import ModelConfig
from ..training.corpus import CorpusSpec
from ..training.trainer import TrainConfig

REQUIRED = ("vocab_size", "hidden", "mel_channels")
RUN_KEYS = {"steps": 500, "ablation": None}
CORPUS_KEYS = {
    "corpus_utterances": ("n_utterances", 8),
    "corpus_min_tokens": ("min_tokens", 4),
    "corpus_max_tokens": ("max_tokens", 10),
    "corpus_max_duration": ("max_duration", 6),
    "corpus_seed": (None, 0),
}


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    corpus: CorpusSpec
    corpus_seed: int
    steps: int
    ablation: int | None = None

    def to_text(self) -> str:
        lines = []
        for key, value in self.model.to_dict().items():
            lines.append(f"{key} = {_format(value)}")
        for key, value in self.train.to_dict().items():
            lines.append(f"{key} = {_format(value)}")
        lines.append(f"steps = {self.steps}")
        if self.ablation is not None:
            lines.append(f"ablation = {self.ablation}")
        for key, (field_name, _) in CORPUS_KEYS.items():
            value = self.corpus_seed if field_name is None else getattr(self.corpus, field_name)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {kind.__name__}", key) from None
    return raw


def _field_kinds(cls) -> dict:
    kinds = {}
    for f in dataclasses.fields(cls):
        default = f.default
        kinds[f.name] = tuple if isinstance(default, tuple) else type(default)
    return kinds


def parse_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", key)
        values[key] = value
    return values


def resolve(values: dict[str, str], seed: int | None = None) -> RunConfig:
    model_kinds = _field_kinds(ModelConfig)
    train_kinds = _field_kinds(TrainConfig)
    unknown = set(values) - set(model_kinds) - set(train_kinds) - set(RUN_KEYS) - set(CORPUS_KEYS)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {key!r}", key)
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required config key {key!r}", key)

    model_kw = {k: _parse_value(k, v, model_kinds[k]) for k, v in values.items() if k in model_kinds}
    half = model_kw["hidden"] // 2
    model_kw.setdefault("spk_emb_dim", half)
    model_kw.setdefault("emo_emb_dim", model_kw["hidden"] - model_kw["spk_emb_dim"])
    ablation = _parse_value("ablation", values["ablation"], int) if "ablation" in values else None
    model = ModelConfig(**model_kw)
    if ablation is not None:
        model = model.ablation(ablation)

    train_kw = {k: _parse_value(k, v, train_kinds[k]) for k, v in values.items() if k in train_kinds}
    if seed is not None:
        train_kw["seed"] = seed
    train = TrainConfig(**train_kw)
    steps = _parse_value("steps", values["steps"], int) if "steps" in values else RUN_KEYS["steps"]
    if steps < 0:
        raise ConfigError("steps must be >= 0", "steps")

    corpus_kw = {}
    corpus_seed = CORPUS_KEYS["corpus_seed"][1]
    for key, (field_name, default) in CORPUS_KEYS.items():
        value = _parse_value(key, values[key], int) if key in values else default
        if field_name is None:
            corpus_seed = value
        else:
            corpus_kw[field_name] = value
    corpus = CorpusSpec(
        vocab_size=model.vocab_size, n_speakers=model.n_speakers, n_emotions=model.n_emotions,
        mel_channels=model.mel_channels, k_egemaps=model.k_egemaps, **corpus_kw,
    )
    return RunConfig(model, train, corpus, corpus_seed, steps, ablation)


def load(path, seed: int | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return resolve(parse_text(text), seed)


TOY_CONFIG_TEXT = """\
# desk-scale defaults
vocab_size = 32
hidden = 64
n_enc_layers = 2
n_dec_layers = 2
n_heads = 2
mel_channels = 16
k_egemaps = 2
"""


def toy(seed: int | None = None) -> RunConfig:
    return resolve(parse_text(TOY_CONFIG_TEXT), seed)
