"""Single-utterance inference latency of ablation #1 against #3."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core.tensor import no_grad
from ..errors import ConfigError
from ..model.acoustic import AcousticModel
from ..model.config import ModelConfig
from ..model.layers import RunContext
from ..training.corpus import Utterance

MIN_REPEATS = 5


@dataclass
class LatencyStats:
    median: float
    iqr: float
    mad: float
    n: int

    @classmethod
    def of(cls, samples: Sequence[float]) -> "LatencyStats":
        s = np.asarray(samples, dtype=np.float64)
        q1, med, q3 = np.percentile(s, [25, 50, 75])
        return cls(float(med), float(q3 - q1), float(np.median(np.abs(s - med))), int(s.size))


@dataclass
class BenchReport:
    baseline: LatencyStats  # ablation 1
    variant: LatencyStats  # ablation 3

    @property
    def ratio(self) -> float:
        return self.variant.median / self.baseline.median

    def lines(self) -> list[str]:
        out = ["ablation\tmedian_s\tiqr_s\tmad_s\tsamples"]
        for tag, st in (("1", self.baseline), ("3", self.variant)):
            out.append(f"{tag}\t{st.median:.6e}\t{st.iqr:.6e}\t{st.mad:.6e}\t{st.n}")
        out.append(f"ratio_3_over_1\t{self.ratio:.4f}")
        return out


def _infer(model: AcousticModel, u: Utterance) -> float:
    start = time.perf_counter()
    model.forward(u.tokens, u.speaker_id, u.emotion_id, teacher={"durations": u.durations},
                  ctx=RunContext(training=False))
    return time.perf_counter() - start


def bench(config: ModelConfig, corpus: Sequence[Utterance], repeats: int, seed: int = 0,
          warmup: int = 1) -> BenchReport:
    """Time inference for both ablations on every utterance, ``repeats`` times.

    Both models share the dimensions of ``config`` and are timed in
    alternating order inside one loop, so drift in machine load hits both
    equally. Ground-truth durations fix the frame count, which would
    otherwise depend on each model's untrained duration predictor.
    """
    if repeats < MIN_REPEATS:
        raise ConfigError(f"bench needs repeats >= {MIN_REPEATS}, got {repeats}", "repeats")
    if not corpus:
        raise ConfigError("bench needs a non-empty corpus", "corpus")
    models = [AcousticModel(config.ablation(1), seed=seed), AcousticModel(config.ablation(3), seed=seed)]
    samples: list[list[float]] = [[], []]
    with no_grad():
        for _ in range(warmup):
            for u in corpus:
                for m in models:
                    _infer(m, u)
        for r in range(repeats):
            for i, u in enumerate(corpus):
                order = (0, 1) if (r + i) % 2 == 0 else (1, 0)
                for k in order:
                    samples[k].append(_infer(models[k], u))
    return BenchReport(LatencyStats.of(samples[0]), LatencyStats.of(samples[1]))
