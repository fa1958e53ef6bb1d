"""Synthetic emotional-speech corpus with analytic targets.

Each token id owns a smooth spectral template. Emotions apply a gain profile
over normalized sentence position (flat, rising, falling, peaked, dipped, ...)
and shift durations, pitch and energy; speakers add a fixed channel offset.
The eGeMAPS targets are percentiles of the frame-level pitch track.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..io import load_container, save_container

PROFILE_KINDS = ("flat", "rising", "falling", "peaked", "dipped")
EGEMAPS_PERCENTILES = (80.0, 50.0, 20.0, 65.0, 35.0, 95.0, 5.0)


@dataclass(frozen=True)
class CorpusSpec:
    n_utterances: int = 8
    vocab_size: int = 32
    min_tokens: int = 4
    max_tokens: int = 10
    n_speakers: int = 4
    n_emotions: int = 5
    mel_channels: int = 16
    k_egemaps: int = 2
    max_duration: int = 6

    def __post_init__(self):
        if self.n_utterances < 1:
            raise ConfigError("corpus needs at least one utterance", "n_utterances")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2 (id 0 is padding)", "vocab_size")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError(f"token range [{self.min_tokens}, {self.max_tokens}] is empty", "min_tokens")
        for key in ("n_speakers", "n_emotions", "mel_channels", "k_egemaps"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1", key)
        if self.k_egemaps > len(EGEMAPS_PERCENTILES):
            raise ConfigError(f"k_egemaps must be <= {len(EGEMAPS_PERCENTILES)}", "k_egemaps")
        if self.max_duration < 1:
            raise ConfigError("max_duration must be >= 1", "max_duration")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Utterance:
    utterance_id: str
    tokens: np.ndarray
    speaker_id: int
    emotion_id: int
    durations: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    egemaps: np.ndarray
    mel: np.ndarray

    @property
    def n_tokens(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.mel.shape[0])


def gain_profile(emotion_id: int, x: np.ndarray, amplitude: float = 0.6) -> np.ndarray:
    """Gain over normalized position ``x`` in [0, 1]; distinct per emotion."""
    kind = PROFILE_KINDS[emotion_id % len(PROFILE_KINDS)]
    amp = amplitude * (1 + emotion_id // len(PROFILE_KINDS))
    if kind == "flat":
        return np.zeros_like(x)
    if kind == "rising":
        return amp * (x - 0.5)
    if kind == "falling":
        return amp * (0.5 - x)
    if kind == "peaked":
        return amp * (0.25 - 2.0 * (x - 0.5) ** 2)
    return amp * (2.0 * (x - 0.5) ** 2 - 0.25)


def normalized_positions(m: int) -> np.ndarray:
    return np.full(1, 0.5) if m == 1 else np.arange(m) / (m - 1)


@dataclass
class CorpusTables:
    templates: np.ndarray  # (vocab, C)
    speaker_offsets: np.ndarray  # (speakers, C)
    base_duration: np.ndarray  # (vocab,)
    base_pitch: np.ndarray
    base_energy: np.ndarray
    emotion_rate: np.ndarray  # (emotions,)
    emotion_pitch: np.ndarray
    emotion_energy: np.ndarray
    pitch_channels: np.ndarray  # (C,)


def make_tables(spec: CorpusSpec, rng: np.random.Generator) -> CorpusTables:
    C = spec.mel_channels
    ch = np.linspace(0.0, 1.0, C)
    centers = rng.uniform(0.0, 1.0, size=(spec.vocab_size, 2))
    widths = rng.uniform(0.08, 0.25, size=(spec.vocab_size, 2))
    amps = rng.uniform(0.5, 1.5, size=(spec.vocab_size, 2))
    templates = np.sum(amps[:, :, None] * np.exp(-0.5 * ((ch[None, None, :] - centers[:, :, None]) / widths[:, :, None]) ** 2), axis=1)
    slopes = rng.normal(0.0, 0.3, size=(spec.n_speakers, 1))
    levels = rng.normal(0.0, 0.3, size=(spec.n_speakers, 1))
    speaker_offsets = levels + slopes * (ch[None, :] - 0.5)
    E = spec.n_emotions
    return CorpusTables(
        templates=templates,
        speaker_offsets=speaker_offsets,
        base_duration=rng.integers(1, spec.max_duration + 1, size=spec.vocab_size).astype(np.float64),
        base_pitch=rng.normal(0.0, 1.0, size=spec.vocab_size),
        base_energy=rng.normal(0.0, 1.0, size=spec.vocab_size),
        emotion_rate=np.linspace(0.7, 1.3, E) if E > 1 else np.ones(1),
        emotion_pitch=np.linspace(-1.0, 1.0, E) if E > 1 else np.zeros(1),
        emotion_energy=rng.normal(0.0, 0.5, size=E),
        pitch_channels=0.2 * np.cos(np.pi * ch),
    )


def render_utterance(spec: CorpusSpec, tables: CorpusTables, utterance_id: str, tokens, speaker_id: int, emotion_id: int) -> Utterance:
    """Unnormalized targets for one (tokens, speaker, emotion) triple."""
    tokens = np.asarray(tokens, dtype=np.int64)
    n = tokens.shape[0]
    tok_pos = normalized_positions(n)
    d = np.maximum(1, np.round(tables.base_duration[tokens] * tables.emotion_rate[emotion_id])).astype(np.int64)
    d = np.minimum(d, spec.max_duration)
    profile = gain_profile(emotion_id, tok_pos)
    pitch = tables.base_pitch[tokens] + tables.emotion_pitch[emotion_id] + 2.0 * profile
    energy = tables.base_energy[tokens] + tables.emotion_energy[emotion_id] + profile

    frame_tok = np.repeat(np.arange(n), d)
    m = frame_tok.shape[0]
    gain = gain_profile(emotion_id, normalized_positions(m))
    mel = (
        tables.templates[tokens[frame_tok]] * (1.0 + gain[:, None])
        + tables.speaker_offsets[speaker_id][None, :]
        + pitch[frame_tok][:, None] * tables.pitch_channels[None, :]
    )
    track = pitch[frame_tok]
    egemaps = np.percentile(track, EGEMAPS_PERCENTILES[: spec.k_egemaps])
    return Utterance(utterance_id, tokens, int(speaker_id), int(emotion_id), d, pitch, energy,
                     np.asarray(egemaps, dtype=np.float64), mel)


def _zscore(values: np.ndarray, axis=None):
    mean = values.mean(axis=axis)
    std = values.std(axis=axis)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def generate_corpus(spec: CorpusSpec, seed: int) -> list[Utterance]:
    """Deterministic corpus for ``(spec, seed)`` with normalized targets."""
    rng = np.random.default_rng(seed)
    tables = make_tables(spec, rng)
    raw = []
    for i in range(spec.n_utterances):
        n = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        tokens = rng.integers(1, spec.vocab_size, size=n)
        emotion = i % spec.n_emotions
        speaker = (i // spec.n_emotions) % spec.n_speakers
        raw.append(render_utterance(spec, tables, f"utt{i:04d}", tokens, speaker, emotion))

    p_mean, p_std = _zscore(np.concatenate([u.pitch for u in raw]))
    e_mean, e_std = _zscore(np.concatenate([u.energy for u in raw]))
    g_mean, g_std = _zscore(np.stack([u.egemaps for u in raw]), axis=0)
    m_mean, m_std = _zscore(np.concatenate([u.mel.reshape(-1) for u in raw]))
    for u in raw:
        u.pitch = (u.pitch - p_mean) / p_std
        u.energy = (u.energy - e_mean) / e_std
        u.egemaps = (u.egemaps - g_mean) / g_std
        u.mel = (u.mel - m_mean) / m_std
    return raw


_UTT_FIELDS = ("tokens", "durations", "pitch", "energy", "egemaps", "mel")


def save_corpus(prefix, corpus: list[Utterance], spec: CorpusSpec | None = None, seed: int | None = None):
    entries = []
    for u in corpus:
        for name in _UTT_FIELDS:
            entries.append((f"{u.utterance_id}/{name}", getattr(u, name), "corpus"))
    meta = {
        "spec": spec.to_dict() if spec is not None else None,
        "seed": seed,
        "utterances": [[u.utterance_id, u.speaker_id, u.emotion_id] for u in corpus],
    }
    return save_container(prefix, entries, meta)


def load_corpus(prefix) -> list[Utterance]:
    arrays, _, meta = load_container(prefix)
    corpus = []
    for uid, spk, emo in meta["utterances"]:
        fields = {name: arrays[f"{uid}/{name}"] for name in _UTT_FIELDS}
        fields["tokens"] = fields["tokens"].astype(np.int64)
        fields["durations"] = fields["durations"].astype(np.int64)
        corpus.append(Utterance(uid, speaker_id=int(spk), emotion_id=int(emo), **fields))
    return corpus
