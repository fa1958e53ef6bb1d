"""Finite-difference checks for every sublayer class and the full losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import gan
from ..core.gradcheck import finite_diff_check
from ..core.tensor import Tensor, concat
from ..model import layers
from ..model.acoustic import AcousticModel, Discriminator
from ..model.config import ModelConfig
from ..training.batching import collate
from ..training.corpus import CorpusSpec, generate_corpus
from ..training.trainer import generator_outputs

SUBLAYER_TOL = 1e-6
FULL_LOSS_TOL = 1e-4
# a failing target is re-run at the smaller step: an L1 or ReLU kink inside
# the +-eps stencil spoils one step size, a wrong gradient spoils both
RETRY_EPS = 1e-6


@dataclass
class Target:
    name: str
    params: list[Tensor]
    loss_fn: Callable[[], Tensor]
    tolerance: float
    numeric_fn: Callable[[], Tensor] | None = None
    max_coords: int | None = 12


@dataclass
class TargetResult:
    name: str
    max_rel_error: float
    tolerance: float
    n_checked: int
    eps: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _jitter(store, rng, scale=0.05):
    """Move every parameter off its structured init (ones, zeros) to generic values."""
    for p in store.parameters():
        p.data += scale * rng.standard_normal(p.shape)


def _projected(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    weights = rng.standard_normal(out.shape)
    return lambda t: (t * weights).sum()


def _leaf(rng, shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def build_targets(cfg: ModelConfig, seed: int = 0, n_tokens: int = 4) -> list[Target]:
    cfg = cfg.replace(use_cln=True, use_cca=True)
    rng = np.random.default_rng(seed)
    model = AcousticModel(cfg, seed=seed)
    disc = Discriminator(cfg, seed=seed + 1)
    _jitter(model, rng)
    _jitter(disc, rng)
    P = model.params
    H = cfg.hidden
    x = _leaf(rng, (n_tokens, H))
    c = _leaf(rng, (H,))
    targets = []

    def sublayer(name, fn, params, tol=SUBLAYER_TOL):
        proj = _projected(fn(), rng)
        targets.append(Target(name, params, lambda: proj(fn()), tol))

    cln = [P[f"enc.0.ffn_norm.{k}"] for k in ("scale.w", "scale.b", "bias.w", "bias.b")]
    sublayer("cln", lambda: layers.conditional_layer_norm(x, c, *cln, eps=cfg.ln_eps), [x, c, *cln])

    # Biases whose gradient is identically zero (a shift shared by every
    # softmax logit) have no meaningful relative error and are left out.
    attn_keys = [f"enc.0.attn.{p}.{wb}" for p in "qkvo" for wb in "wb"]
    sublayer("self_attention", lambda: layers.self_attention(x, P, "enc.0.attn", cfg.n_heads)[0],
             [x] + [P[k] for k in attn_keys if k != "enc.0.attn.k.b"])

    def cca():
        proj = layers.projections(P, "enc.0.attn")
        out, _ = layers.conditional_cross_attention(x, c, proj, cfg.n_heads)
        return out

    sublayer("cca", cca, [x, c] + [P[k] for k in attn_keys[:6] if k != "enc.0.attn.q.b"])

    ffn_keys = ["enc.0.ffn.conv1.w", "enc.0.ffn.conv1.b", "enc.0.ffn.conv2.w", "enc.0.ffn.conv2.b"]
    sublayer("ffn", lambda: layers.feed_forward(x, P, "enc.0.ffn"), [x] + [P[k] for k in ffn_keys])

    pred_params = [p for k, p in P.items() if k.startswith(("va.duration.", "va.pitch.", "va.energy."))]

    def predictors():
        outs = [layers.variance_predictor(x, P, f"va.{name}", eps=cfg.ln_eps) for name in ("duration", "pitch", "energy")]
        return concat(outs, axis=0)

    sublayer("predictors", predictors, [x] + pred_params)

    emp_params = [p for k, p in P.items() if k.startswith("va.egemaps.")]
    sublayer("emp", lambda: layers.egemaps_predict(x, P, "va.egemaps", eps=cfg.ln_eps), [x] + emp_params)

    mel = _leaf(rng, (12, cfg.mel_channels))

    def jcu():
        out = gan.jcu_discriminator(mel, c, disc)
        return concat([out.uncond_score, out.cond_score], axis=0)

    sublayer("jcu", jcu, [mel, c] + disc.parameters())

    # full losses on a two-utterance batch
    spec = CorpusSpec(n_utterances=2, vocab_size=cfg.vocab_size, min_tokens=2, max_tokens=3,
                      n_speakers=cfg.n_speakers, n_emotions=cfg.n_emotions, mel_channels=cfg.mel_channels,
                      k_egemaps=cfg.k_egemaps, max_duration=3)
    batch = collate(generate_corpus(spec, seed))
    g_params = model.parameters()

    def rec_loss():
        return gan.loss_reconstruction(generator_outputs(model, batch), batch)["total"]

    targets.append(Target("generator_loss", g_params, rec_loss, FULL_LOSS_TOL, max_coords=3))

    real = [Tensor(batch.mel[b, :batch.n_frames(b)]) for b in range(len(batch))]
    frozen_outs = generator_outputs(model, batch)
    fakes = [o.mel.detach() for o in frozen_outs]
    conds = [o.c.detach() for o in frozen_outs]

    def d_loss():
        d_real = [gan.jcu_discriminator(r, cc, disc) for r, cc in zip(real, conds)]
        d_fake = [gan.jcu_discriminator(f, cc, disc) for f, cc in zip(fakes, conds)]
        return gan.loss_adv_d(d_real, d_fake)

    targets.append(Target("discriminator_loss", disc.parameters(), d_loss, FULL_LOSS_TOL, max_coords=4))

    # alpha-weighted generator total: analytic through total_generator_loss,
    # numeric with alpha pinned at its baseline value
    head_params = [P["mel_head.w"], P["mel_head.b"]] + [
        p for k, p in P.items() if k.startswith(f"dec.{cfg.n_dec_layers - 1}.ffn")]

    def g_terms():
        outs = generator_outputs(model, batch)
        rec = gan.loss_reconstruction(outs, batch)["total"]
        d_fake = [gan.jcu_discriminator(o.mel, o.c, disc) for o in outs]
        with_real = [gan.jcu_discriminator(r, o.c.detach(), disc).feature_maps for r, o in zip(real, outs)]
        fm = gan.loss_feature_matching(with_real, [d.feature_maps for d in d_fake])
        return rec, gan.loss_adv_g(d_fake), fm

    def g_total_live():
        disc.set_requires_grad(False)
        return gan.total_generator_loss(*g_terms())[0]

    alpha0 = {}

    def g_total_pinned():
        disc.set_requires_grad(False)
        rec, adv, fm = g_terms()
        if "alpha" not in alpha0:
            alpha0["alpha"] = gan.total_generator_loss(rec, adv, fm)[1]
        return rec + adv + alpha0["alpha"] * fm

    g_total_pinned()
    targets.append(Target("alpha_fm_total", head_params, g_total_live, SUBLAYER_TOL, numeric_fn=g_total_pinned,
                          max_coords=6))
    return targets


def run_target(target: Target, corrupt: bool = False, eps: float = 1e-5, seed: int = 0) -> TargetResult:
    best = None
    for step in (eps, RETRY_EPS) if eps != RETRY_EPS else (eps,):
        result = finite_diff_check(
            target.loss_fn, target.params, eps=step, max_coords=target.max_coords, seed=seed,
            corrupt=(0, None) if corrupt else None, numeric_fn=target.numeric_fn,
        )
        current = TargetResult(target.name, result.max_rel_error, target.tolerance, result.n_checked, step)
        if best is None or current.max_rel_error < best.max_rel_error:
            best = current
        if best.passed:
            break
    return best


def run_suite(cfg: ModelConfig, seed: int = 0, inject_fault: str | None = None, only=None) -> list[TargetResult]:
    results = []
    for target in build_targets(cfg, seed):
        if only and target.name not in only:
            continue
        results.append(run_target(target, corrupt=(target.name == inject_fault), seed=seed))
    return results
