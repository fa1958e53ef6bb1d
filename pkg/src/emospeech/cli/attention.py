"""CCA weight dumps and their aggregation over normalized sentence position."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..core.tensor import no_grad
from ..errors import ContractError
from ..model.acoustic import AcousticModel
from ..model.layers import AttentionDump, RunContext
from ..training.corpus import Utterance

DUMP_HEADER = ("utterance_id", "emotion_id", "speaker_id", "layer", "head", "position", "n", "weight")
AGG_HEADER = ("emotion_id", "bucket", "start", "end", "count", "mean_weight")


class DumpFormatError(ContractError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def encoder_dumps(model: AcousticModel, utterance: Utterance, emotion_id: int | None = None) -> list[AttentionDump]:
    """Encoder CCA weights for one utterance (inference mode, no duration rounding involved)."""
    emotion = utterance.emotion_id if emotion_id is None else emotion_id
    dumps: list[AttentionDump] = []
    with no_grad():
        c = model.conditioning(utterance.speaker_id, emotion)
        model.encode(utterance.tokens, c, ctx=RunContext(training=False), dumps=dumps)
    for d in dumps:
        d.utterance_id = utterance.utterance_id
        d.speaker_id = utterance.speaker_id
        d.emotion_id = emotion
    return dumps


def write_dump(path, model: AcousticModel, corpus: Sequence[Utterance]) -> int:
    """One row per (utterance, layer, head, position); returns the row count."""
    if not model.config.use_cca:
        raise ContractError("model has no conditional cross-attention (use_cca is off)")
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DUMP_HEADER)
        for u in corpus:
            for d in encoder_dumps(model, u):
                n = d.weights.shape[0]
                for pos, w in enumerate(d.weights):
                    writer.writerow((d.utterance_id, d.emotion_id, d.speaker_id, d.layer, d.head, pos, n, repr(float(w))))
                    rows += 1
    return rows


@dataclass
class DumpRecord:
    utterance_id: str
    emotion_id: int
    speaker_id: int
    layer: int
    head: int
    position: int
    n: int
    weight: float


def read_dump(path) -> list[DumpRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DUMP_HEADER:
            raise DumpFormatError(f"expected header {','.join(DUMP_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(DUMP_HEADER):
                raise DumpFormatError(f"expected {len(DUMP_HEADER)} fields, got {len(row)}", lineno)
            try:
                rec = DumpRecord(row[0], *(int(v) for v in row[1:7]), float(row[7]))
            except ValueError as exc:
                raise DumpFormatError(str(exc), lineno) from None
            if rec.n < 1 or not 0 <= rec.position < rec.n or not np.isfinite(rec.weight):
                raise DumpFormatError(f"position {rec.position} / n {rec.n} / weight {rec.weight} out of range", lineno)
            records.append(rec)
    return records


@dataclass
class AggregatedAttention:
    emotion_id: int
    n_buckets: int
    bucket_means: np.ndarray
    bucket_counts: np.ndarray
    layer: int | None = None
    head: int | None = None
    edges: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.edges is None:
            self.edges = np.arange(self.n_buckets + 1) / self.n_buckets

    @property
    def total_weight(self) -> float:
        filled = self.bucket_counts > 0
        return float(np.sum(self.bucket_means[filled] * self.bucket_counts[filled]))


def normalized_position(position: int, n: int) -> float:
    return 0.5 if n == 1 else position / (n - 1)


def bucket_index(x: float, n_buckets: int) -> int:
    return min(int(x * n_buckets), n_buckets - 1)


def aggregate(records: Iterable[DumpRecord], n_buckets: int = 20, layer: int | None = None,
              head: int | None = None) -> dict[int, AggregatedAttention]:
    """Mean weight per (emotion, position bucket), pooled over utterances, layers and heads."""
    if n_buckets < 1:
        raise ContractError(f"n_buckets must be >= 1, got {n_buckets}")
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, np.ndarray] = {}
    for r in records:
        if (layer is not None and r.layer != layer) or (head is not None and r.head != head):
            continue
        if r.emotion_id not in sums:
            sums[r.emotion_id] = np.zeros(n_buckets)
            counts[r.emotion_id] = np.zeros(n_buckets, dtype=np.int64)
        b = bucket_index(normalized_position(r.position, r.n), n_buckets)
        sums[r.emotion_id][b] += r.weight
        counts[r.emotion_id][b] += 1
    out = {}
    for emo in sorted(sums):
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(counts[emo] > 0, sums[emo] / np.maximum(counts[emo], 1), np.nan)
        out[emo] = AggregatedAttention(emo, n_buckets, means, counts[emo], layer, head)
    return out


def write_aggregate(target, table: dict[int, AggregatedAttention]) -> None:
    """Write the table as CSV to a path or an open text stream."""
    if hasattr(target, "write"):
        _write_aggregate_rows(target, table)
        return
    with open(target, "w", newline="") as fh:
        _write_aggregate_rows(fh, table)


def _write_aggregate_rows(fh, table: dict[int, AggregatedAttention]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(AGG_HEADER)
    for emo, agg in table.items():
        for b in range(agg.n_buckets):
            writer.writerow((emo, b, repr(float(agg.edges[b])), repr(float(agg.edges[b + 1])),
                             int(agg.bucket_counts[b]), repr(float(agg.bucket_means[b]))))
