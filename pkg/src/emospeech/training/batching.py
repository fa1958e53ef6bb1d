from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError
from .corpus import Utterance


@dataclass
class Batch:
    utterance_ids: list[str]
    tokens: np.ndarray  # (B, N) int, 0 = padding
    token_mask: np.ndarray  # (B, N) bool
    mel: np.ndarray  # (B, M, C)
    frame_mask: np.ndarray  # (B, M) bool
    durations: np.ndarray  # (B, N) int
    pitch: np.ndarray  # (B, N)
    energy: np.ndarray  # (B, N)
    egemaps: np.ndarray  # (B, k)
    speaker_ids: np.ndarray
    emotion_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.utterance_ids)

    def n_tokens(self, b: int) -> int:
        return int(self.token_mask[b].sum())

    def n_frames(self, b: int) -> int:
        return int(self.frame_mask[b].sum())

    def teacher(self, b: int) -> dict:
        n = self.n_tokens(b)
        return {"durations": self.durations[b, :n], "pitch": self.pitch[b, :n], "energy": self.energy[b, :n]}


def collate(utterances: Sequence[Utterance]) -> Batch:
    """Pad to the longest utterance; padded cells are zero and masked out."""
    B = len(utterances)
    N = max(u.n_tokens for u in utterances)
    M = max(u.n_frames for u in utterances)
    C = utterances[0].mel.shape[1]
    k = utterances[0].egemaps.shape[0]
    batch = Batch(
        utterance_ids=[u.utterance_id for u in utterances],
        tokens=np.zeros((B, N), dtype=np.int64),
        token_mask=np.zeros((B, N), dtype=bool),
        mel=np.zeros((B, M, C)),
        frame_mask=np.zeros((B, M), dtype=bool),
        durations=np.zeros((B, N), dtype=np.int64),
        pitch=np.zeros((B, N)),
        energy=np.zeros((B, N)),
        egemaps=np.zeros((B, k)),
        speaker_ids=np.array([u.speaker_id for u in utterances], dtype=np.int64),
        emotion_ids=np.array([u.emotion_id for u in utterances], dtype=np.int64),
    )
    for b, u in enumerate(utterances):
        n, m = u.n_tokens, u.n_frames
        batch.tokens[b, :n] = u.tokens
        batch.token_mask[b, :n] = True
        batch.mel[b, :m] = u.mel
        batch.frame_mask[b, :m] = True
        batch.durations[b, :n] = u.durations
        batch.pitch[b, :n] = u.pitch
        batch.energy[b, :n] = u.energy
        batch.egemaps[b] = u.egemaps
    return batch


def make_batches(corpus: Sequence[Utterance], batch_size: int, seed: int) -> list[Batch]:
    """One epoch: seeded shuffle, then consecutive chunks of ``batch_size``."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}", "batch_size")
    order = np.random.default_rng(seed).permutation(len(corpus))
    return [collate([corpus[i] for i in order[s:s + batch_size]]) for s in range(0, len(order), batch_size)]
