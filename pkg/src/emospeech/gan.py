"""JCU discriminator and the training objective.

Reductions: every expectation is a mean over score-map (or feature-map)
elements within an utterance, then a mean over the utterances of a batch.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import ops
from .core.tensor import Tensor, absolute, concat, leaky_relu, reshape
from .errors import ContractError, DimensionError
from .model.acoustic import Discriminator
from .model.layers import linear

FM_SKIP_BELOW = 1e-8


@dataclass
class DiscriminatorOutput:
    uncond_score: Tensor
    cond_score: Tensor
    feature_maps: list[Tensor] = field(default_factory=list)


@dataclass
class LossReport:
    l_rec: float = 0.0
    l_rec_mel: float = 0.0
    l_rec_d: float = 0.0
    l_rec_p: float = 0.0
    l_rec_e: float = 0.0
    l_rec_egemaps: float = 0.0
    l_adv_d: float = 0.0
    l_adv_g: float = 0.0
    l_fm: float = 0.0
    alpha_fm: float = 0.0
    l_total: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    def check_finite(self) -> None:
        for key, value in asdict(self).items():
            if not math.isfinite(value):
                raise ContractError(f"non-finite loss component {key} = {value}")


def score_length(m: int, cfg) -> int:
    """Frames in the score maps for an ``m``-frame mel (after min-length padding)."""
    m = max(m, cfg.disc_min_frames)
    pad = (cfg.disc_kernel - 1) // 2
    for _ in cfg.disc_channels:
        m = (m + 2 * pad - cfg.disc_kernel) // cfg.disc_stride + 1
    return m


def jcu_discriminator(mel: Tensor, c: Tensor, disc: Discriminator | Mapping[str, Tensor], cfg=None) -> DiscriminatorOutput:
    """Joint conditional/unconditional scoring of an (m, mel_channels) spectrogram.

    The unconditional head sees only the shared conv features of the mel;
    the conditional head additionally sees a projection of ``c`` broadcast
    over frames.
    """
    if isinstance(disc, Discriminator):
        cfg, P = disc.config, disc.params
    else:
        P = disc
    if mel.ndim != 2 or mel.shape[1] != cfg.mel_channels:
        raise DimensionError(f"jcu_discriminator: mel shape {mel.shape}, expected (m, {cfg.mel_channels})")
    m = mel.shape[0]
    x = mel
    if m < cfg.disc_min_frames:
        x = concat([mel, Tensor(np.zeros((cfg.disc_min_frames - m, cfg.mel_channels)))], axis=0)
    pad = (cfg.disc_kernel - 1) // 2
    feats = []
    for i in range(len(cfg.disc_channels)):
        x = leaky_relu(ops.conv1d(x, P[f"disc.shared.{i}.w"], P[f"disc.shared.{i}.b"], cfg.disc_stride, pad),
                       cfg.disc_slope)
        feats.append(x)

    u = leaky_relu(ops.conv1d(x, P["disc.uncond.0.w"], P["disc.uncond.0.b"]), cfg.disc_slope)
    feats.append(u)
    uncond = reshape(ops.conv1d(u, P["disc.uncond.1.w"], P["disc.uncond.1.b"]), (u.shape[0],))

    n_frames = x.shape[0]
    cproj = linear(reshape(c, (1, c.shape[0])), P["disc.cond_proj.w"], P["disc.cond_proj.b"])
    cb = ops.matmul(Tensor(np.ones((n_frames, 1))), cproj)
    v = leaky_relu(ops.conv1d(concat([x, cb], axis=1), P["disc.cond.0.w"], P["disc.cond.0.b"]), cfg.disc_slope)
    feats.append(v)
    cond = reshape(ops.conv1d(v, P["disc.cond.1.w"], P["disc.cond.1.b"]), (v.shape[0],))
    return DiscriminatorOutput(uncond, cond, feats)


def _batch_mean(terms: Sequence[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def _as_list(outputs) -> list[DiscriminatorOutput]:
    return [outputs] if isinstance(outputs, DiscriminatorOutput) else list(outputs)


def loss_adv_d(d_real, d_fake) -> Tensor:
    """Least-squares discriminator objective over both branches."""
    d_real, d_fake = _as_list(d_real), _as_list(d_fake)
    terms = []
    for r, f in zip(d_real, d_fake, strict=True):
        fake = (f.uncond_score**2).mean() + (f.cond_score**2).mean()
        real = ((r.uncond_score - 1.0) ** 2).mean() + ((r.cond_score - 1.0) ** 2).mean()
        terms.append(0.5 * fake + 0.5 * real)
    return _batch_mean(terms)


def loss_adv_g(d_fake) -> Tensor:
    """Least-squares generator objective: push both branch scores to 1."""
    terms = [
        0.5 * (((f.uncond_score - 1.0) ** 2).mean() + ((f.cond_score - 1.0) ** 2).mean())
        for f in _as_list(d_fake)
    ]
    return _batch_mean(terms)


def _fm_single(real: Sequence[Tensor], fake: Sequence[Tensor]) -> Tensor:
    if len(real) != len(fake):
        raise DimensionError(f"feature matching: {len(real)} real vs {len(fake)} fake layers")
    per_layer = []
    for r, f in zip(real, fake):
        if r.shape != f.shape:
            raise DimensionError(f"feature matching: layer shapes {r.shape} vs {f.shape}")
        per_layer.append(absolute(f - r.detach()).mean())
    return _batch_mean(per_layer)


def loss_feature_matching(real_feats, fake_feats) -> Tensor:
    """Mean over layers of the per-layer mean absolute difference.

    Accepts one utterance's feature lists or a batch (list of lists); the
    real side is always detached.
    """
    if real_feats and isinstance(real_feats[0], Tensor):
        return _fm_single(real_feats, fake_feats)
    return _batch_mean([_fm_single(r, f) for r, f in zip(real_feats, fake_feats, strict=True)])


def total_generator_loss(l_rec: Tensor, l_adv_g: Tensor, l_fm: Tensor) -> tuple[Tensor, float]:
    """Generator objective with the feature-matching weight held constant.

    The weight is the current ratio L_rec / L_fm taken from values only, so
    no gradient flows through it. Negligible L_fm skips the term.
    """
    vals = [float(np.asarray(t.data).reshape(-1)[0]) for t in (l_rec, l_adv_g, l_fm)]
    if not all(math.isfinite(v) for v in vals):
        raise ContractError(f"total_generator_loss: non-finite input {vals}")
    rec, _, fm = vals
    if fm < FM_SKIP_BELOW:
        return l_rec + l_adv_g, 0.0
    alpha = rec / fm
    return l_rec + l_adv_g + alpha * l_fm, alpha


def duration_target(durations) -> np.ndarray:
    """Log-domain duration target, offset by one so zero-frame tokens are finite."""
    return np.log(np.asarray(durations, dtype=np.float64) + 1.0)


def loss_reconstruction(outputs: Sequence, batch) -> dict[str, Tensor]:
    """Masked reconstruction terms over a batch.

    ``outputs[b]`` is the teacher-forced generator output for row ``b`` of
    ``batch``. Only the first ``n_tokens(b)`` / ``n_frames(b)`` cells of each
    row are read, so padded cells never reach a loss. Mel uses mean absolute
    error; log-duration, pitch, energy and eGeMAPS use mean squared error.
    """
    if len(outputs) != len(batch):
        raise DimensionError(f"loss_reconstruction: {len(outputs)} outputs for a batch of {len(batch)}")
    sums: dict[str, Tensor] = {}
    counts = {"mel": 0, "d": 0, "p": 0, "e": 0, "egemaps": 0}

    def acc(key, value):
        sums[key] = value if key not in sums else sums[key] + value

    for b, out in enumerate(outputs):
        n, m = batch.n_tokens(b), batch.n_frames(b)
        var = out.variances
        target_mel = batch.mel[b, :m]
        if out.mel.shape != target_mel.shape:
            raise DimensionError(f"loss_reconstruction: mel {out.mel.shape} vs target {target_mel.shape}")
        if var.log_durations.shape != (n,) or var.egemaps.shape != batch.egemaps[b].shape:
            raise DimensionError("loss_reconstruction: variance prediction shapes do not match targets")
        acc("mel", absolute(out.mel - target_mel).sum())
        acc("d", ((var.log_durations - duration_target(batch.durations[b, :n])) ** 2).sum())
        acc("p", ((var.pitch - batch.pitch[b, :n]) ** 2).sum())
        acc("e", ((var.energy - batch.energy[b, :n]) ** 2).sum())
        acc("egemaps", ((var.egemaps - batch.egemaps[b]) ** 2).sum())
        counts["mel"] += m * target_mel.shape[1]
        counts["d"] += n
        counts["p"] += n
        counts["e"] += n
        counts["egemaps"] += batch.egemaps.shape[1]
    terms = {key: sums[key] * (1.0 / counts[key]) for key in counts}
    terms["total"] = terms["mel"] + terms["d"] + terms["p"] + terms["e"] + terms["egemaps"]
    return terms
