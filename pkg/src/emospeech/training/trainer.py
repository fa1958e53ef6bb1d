"""Joint generator/discriminator training, evaluation and checkpoints."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import gan, io
from ..core.optim import AdamState, adam_step, clip_grad_norm, noam_lr
from ..core.tensor import Tensor, no_grad
from ..errors import ConfigError, ContractError
from ..model.acoustic import AcousticModel, Discriminator, durations_from_log
from ..model.config import ModelConfig
from ..model.layers import RunContext
from .batching import Batch, collate, make_batches
from .corpus import Utterance

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint"
METRICS_NAME = "metrics.jsonl"
SUMMARY_NAME = "summary.json"


class TrainingError(ContractError):
    """Training produced a non-finite value or broke gradient isolation."""


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 8
    warmup_steps: int = 400
    g_beta1: float = 0.9
    g_beta2: float = 0.98
    g_eps: float = 1e-9
    grad_clip: float = 1.0
    d_lr: float = 1e-4
    d_beta1: float = 0.5
    d_beta2: float = 0.9
    d_eps: float = 1e-8
    checkpoint_every: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainState:
    model: AcousticModel
    disc: Discriminator | None
    g_opt: AdamState
    d_opt: AdamState | None
    step: int = 0


@dataclass
class TrainResult:
    state: TrainState
    metrics: list[dict] = field(default_factory=list)
    final_eval: dict | None = None


def new_state(model_config: ModelConfig, train_config: TrainConfig) -> TrainState:
    model = AcousticModel(model_config, seed=train_config.seed)
    g_opt = AdamState.zeros_like(model.parameters(), beta1=train_config.g_beta1, beta2=train_config.g_beta2,
                                 eps=train_config.g_eps)
    state = TrainState(model, None, g_opt, None, 0)
    if model_config.use_jcu:
        attach_discriminator(state, train_config)
    return state


def attach_discriminator(state: TrainState, train_config: TrainConfig) -> None:
    disc = Discriminator(state.model.config, seed=train_config.seed + 1)
    state.disc = disc
    state.d_opt = AdamState.zeros_like(disc.parameters(), lr=train_config.d_lr, beta1=train_config.d_beta1,
                                       beta2=train_config.d_beta2, eps=train_config.d_eps)


def generator_outputs(model: AcousticModel, batch: Batch, ctx: RunContext | None = None) -> list:
    """Teacher-forced forward of every utterance in ``batch`` (unpadded)."""
    outs = []
    for b in range(len(batch)):
        n = batch.n_tokens(b)
        run = dataclasses.replace(ctx, utterance=b) if ctx is not None else RunContext()
        outs.append(model.forward(batch.tokens[b, :n], int(batch.speaker_ids[b]), int(batch.emotion_ids[b]),
                                  teacher=batch.teacher(b), ctx=run, utterance_id=batch.utterance_ids[b]))
    return outs


def _grads_all_none(params: Sequence[Tensor]) -> bool:
    return all(p.grad is None or not np.any(p.grad) for p in params)


def _check_finite(report: gan.LossReport, step: int) -> None:
    for key, value in report.as_dict().items():
        if not math.isfinite(value):
            raise TrainingError(f"step {step}: non-finite loss component {key} = {value}")


def train_step(state: TrainState, batch: Batch, model_config: ModelConfig, train_config: TrainConfig) -> dict:
    """One joint step: generator forward, D update on detached fakes, G update."""
    state.step += 1
    step = state.step
    model, disc = state.model, state.disc
    g_params = model.parameters()
    model.zero_grad()
    ctx = RunContext(training=True, seed=train_config.seed, step=step)
    outs = generator_outputs(model, batch, ctx)
    rec = gan.loss_reconstruction(outs, batch)
    report = gan.LossReport(
        l_rec=float(rec["total"].data), l_rec_mel=float(rec["mel"].data), l_rec_d=float(rec["d"].data),
        l_rec_p=float(rec["p"].data), l_rec_e=float(rec["e"].data), l_rec_egemaps=float(rec["egemaps"].data),
    )
    _check_finite(report, step)

    g_loss = rec["total"]
    if model_config.use_jcu:
        if disc is None:
            raise TrainingError("use_jcu is set but no discriminator is attached")
        d_params = disc.parameters()
        real_mels = [Tensor(batch.mel[b, :batch.n_frames(b)]) for b in range(len(batch))]
        c_const = [o.c.detach() for o in outs]

        # discriminator step on detached fakes
        disc.zero_grad()
        disc.set_requires_grad(True)
        d_real = [gan.jcu_discriminator(x, c, disc) for x, c in zip(real_mels, c_const)]
        d_fake = [gan.jcu_discriminator(o.mel.detach(), c, disc) for o, c in zip(outs, c_const)]
        l_adv_d = gan.loss_adv_d(d_real, d_fake)
        report.l_adv_d = float(l_adv_d.data)
        _check_finite(report, step)
        l_adv_d.backward()
        if not _grads_all_none(g_params):
            raise TrainingError(f"step {step}: discriminator loss reached generator parameters")
        adam_step(d_params, [p.grad for p in d_params], state.d_opt)
        disc.zero_grad()

        # generator step; D stays frozen through the backward, which reads requires_grad
        disc.set_requires_grad(False)
        with no_grad():
            real_feats = [gan.jcu_discriminator(x, c, disc).feature_maps for x, c in zip(real_mels, c_const)]
        d_fake_g = [gan.jcu_discriminator(o.mel, o.c, disc) for o in outs]
        l_adv_g = gan.loss_adv_g(d_fake_g)
        l_fm = gan.loss_feature_matching(real_feats, [d.feature_maps for d in d_fake_g])
        g_loss, alpha = gan.total_generator_loss(rec["total"], l_adv_g, l_fm)
        report.l_adv_g = float(l_adv_g.data)
        report.l_fm = float(l_fm.data)
        report.alpha_fm = alpha
    report.l_total = report.l_rec + report.l_adv_d + report.l_adv_g + report.alpha_fm * report.l_fm
    _check_finite(report, step)

    try:
        g_loss.backward()
    finally:
        if disc is not None:
            disc.set_requires_grad(True)
    if disc is not None and not _grads_all_none(disc.parameters()):
        raise TrainingError(f"step {step}: generator loss reached discriminator parameters")
    grads = [p.grad for p in g_params]
    grad_norm = clip_grad_norm(grads, train_config.grad_clip) if train_config.grad_clip > 0 else float("nan")
    lr = noam_lr(step, model_config.hidden, train_config.warmup_steps)
    adam_step(g_params, grads, state.g_opt, lr=lr)
    model.zero_grad()
    return {"step": step, **report.as_dict(), "lr_g": lr, "grad_norm": grad_norm}


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def train(
    model_config: ModelConfig,
    corpus: Sequence[Utterance],
    steps: int,
    train_config: TrainConfig | None = None,
    state: TrainState | None = None,
    out_dir=None,
) -> TrainResult:
    """Run ``steps`` joint steps; optionally resume from ``state``.

    Writes ``metrics.jsonl`` (one line per step), a checkpoint and
    ``summary.json`` to ``out_dir`` when given.
    """
    train_config = train_config or TrainConfig()
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}", "steps")
    if state is None:
        state = new_state(model_config, train_config)
    elif model_config.use_jcu and state.disc is None:
        attach_discriminator(state, train_config)
    out = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out / METRICS_NAME, "a" if state.step else "w")

    metrics: list[dict] = []
    per_epoch = math.ceil(len(corpus) / train_config.batch_size)
    batches: list[Batch] = []
    try:
        for _ in range(steps):
            epoch, pos = divmod(state.step, per_epoch)
            if pos == 0 or not batches:
                batches = make_batches(corpus, train_config.batch_size, _epoch_seed(train_config.seed, epoch))
            record = train_step(state, batches[pos], model_config, train_config)
            metrics.append(record)
            if metrics_file is not None:
                metrics_file.write(json.dumps(record) + "\n")
            if out is not None and train_config.checkpoint_every and state.step % train_config.checkpoint_every == 0:
                save_checkpoint(out / CHECKPOINT_NAME, state, model_config, train_config)
    finally:
        if metrics_file is not None:
            metrics_file.close()

    final_eval = evaluate(state.model, corpus)
    if out is not None:
        save_checkpoint(out / CHECKPOINT_NAME, state, model_config, train_config)
        (out / SUMMARY_NAME).write_text(json.dumps({"steps": state.step, "final_eval": final_eval}, indent=1) + "\n")
    return TrainResult(state, metrics, final_eval)


def evaluate(model: AcousticModel, corpus: Sequence[Utterance]) -> dict:
    """Teacher-forced reconstruction report per emotion and overall (eval mode).

    Each utterance is scored on its own; per-emotion figures are means over
    that emotion's utterances and ``overall`` is the mean over all of them.
    Inference-mode lengths compare predicted and true total frame counts.
    """
    keys = ("total", "mel", "d", "p", "e", "egemaps")
    per_utt = []
    with no_grad():
        for u in corpus:
            batch = collate([u])
            out = generator_outputs(model, batch)[0]
            rec = gan.loss_reconstruction([out], batch)
            pred_len = int(durations_from_log(out.variances.log_durations.data).sum())
            per_utt.append((u.emotion_id, {k: float(rec[k].data) for k in keys}, pred_len, int(u.durations.sum())))

    def summarize(rows):
        summary = {f"l_rec_{k}" if k != "total" else "l_rec": float(np.mean([r[1][k] for r in rows])) for k in keys}
        summary["count"] = len(rows)
        pred = np.array([r[2] for r in rows], dtype=np.float64)
        true = np.array([r[3] for r in rows], dtype=np.float64)
        summary["pred_frames_mean"] = float(pred.mean())
        summary["true_frames_mean"] = float(true.mean())
        summary["frames_abs_error_mean"] = float(np.abs(pred - true).mean())
        return summary

    report = {"overall": summarize(per_utt), "per_emotion": {}}
    for emo in sorted({r[0] for r in per_utt}):
        report["per_emotion"][str(emo)] = summarize([r for r in per_utt if r[0] == emo])
    return report


# -- checkpoints ----------------------------------------------------------------
def save_checkpoint(prefix, state: TrainState, model_config: ModelConfig, train_config: TrainConfig):
    entries = [(k, v, c) for (k, v), c in zip(state.model.state_arrays().items(), (s.component for s in state.model.specs))]
    if state.disc is not None:
        entries += [(k, v, "discriminator") for k, v in state.disc.state_arrays().items()]
    for tag, opt, store in (("g_opt", state.g_opt, state.model), ("d_opt", state.d_opt, state.disc)):
        if opt is None:
            continue
        for name, m, v in zip(store.params, opt.first_moment, opt.second_moment):
            entries.append((f"{tag}.m.{name}", m, "optimizer"))
            entries.append((f"{tag}.v.{name}", v, "optimizer"))
    meta = {
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict(),
        "step": state.step,
        "g_opt": _opt_meta(state.g_opt),
        "d_opt": _opt_meta(state.d_opt),
    }
    return io.save_container(prefix, entries, meta)


def _opt_meta(opt: AdamState | None):
    if opt is None:
        return None
    return {"step_count": opt.step_count, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps}


def load_checkpoint(prefix) -> tuple[TrainState, ModelConfig, TrainConfig]:
    arrays, _, meta = io.load_container(prefix)
    model_config = ModelConfig.from_dict(meta["model_config"])
    train_config = TrainConfig.from_dict(meta["train_config"])
    model = AcousticModel(model_config, arrays=arrays)
    disc = None
    if any(k.startswith("disc.") for k in arrays):
        disc = Discriminator(model_config, arrays=arrays)

    def restore(tag, store):
        info = meta.get(tag)
        if info is None or store is None:
            return None
        names = list(store.params)
        return AdamState(
            first_moment=[arrays[f"{tag}.m.{n}"].copy() for n in names],
            second_moment=[arrays[f"{tag}.v.{n}"].copy() for n in names],
            **info,
        )

    state = TrainState(model, disc, restore("g_opt", model), restore("d_opt", disc), int(meta["step"]))
    return state, model_config, train_config
