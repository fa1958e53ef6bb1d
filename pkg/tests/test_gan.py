import numpy as np
import pytest

from emospeech import gan
from emospeech.core import Tensor, finite_diff_check
from emospeech.errors import ContractError, DimensionError
from emospeech.model import AcousticModel, Discriminator
from emospeech.training import collate, generate_corpus
from emospeech.training.corpus import CorpusSpec
from emospeech.training.trainer import generator_outputs


def scores(uncond, cond):
    return gan.DiscriminatorOutput(Tensor(np.asarray(uncond, float)), Tensor(np.asarray(cond, float)), [])


def full(value, n=6):
    return scores(np.full(n, value), np.full(n, value))


# -- discriminator ------------------------------------------------------------------
def test_unconditional_branch_ignores_c(small_config, rng):
    disc = Discriminator(small_config, seed=0)
    mel = Tensor(rng.standard_normal((20, small_config.mel_channels)))
    a = gan.jcu_discriminator(mel, Tensor(rng.standard_normal(8)), disc)
    b = gan.jcu_discriminator(mel, Tensor(rng.standard_normal(8)), disc)
    assert a.uncond_score.data.tobytes() == b.uncond_score.data.tobytes()
    assert np.max(np.abs(a.cond_score.data - b.cond_score.data)) > 0


def test_score_length_for_64_frames(toy_config, rng):
    disc = Discriminator(toy_config, seed=0)
    out = gan.jcu_discriminator(Tensor(rng.standard_normal((64, 16))), Tensor(rng.standard_normal(64)), disc)
    # three stride-2 convs with same padding: 64 -> 32 -> 16 -> 8
    assert out.uncond_score.shape == out.cond_score.shape == (8,)
    assert gan.score_length(64, toy_config) == 8


def test_short_input_is_padded_to_minimum(small_config, rng):
    disc = Discriminator(small_config, seed=0)
    out = gan.jcu_discriminator(Tensor(rng.standard_normal((3, 5))), Tensor(rng.standard_normal(8)), disc)
    assert out.uncond_score.shape == (gan.score_length(3, small_config),)
    assert gan.score_length(3, small_config) == gan.score_length(small_config.disc_min_frames, small_config)


def test_feature_map_count_is_fixed(small_config, rng):
    disc = Discriminator(small_config, seed=0)
    for m in (8, 17, 40):
        out = gan.jcu_discriminator(Tensor(rng.standard_normal((m, 5))), Tensor(rng.standard_normal(8)), disc)
        assert len(out.feature_maps) == 5


def test_channel_mismatch(small_config, rng):
    disc = Discriminator(small_config, seed=0)
    with pytest.raises(DimensionError):
        gan.jcu_discriminator(Tensor(rng.standard_normal((10, 7))), Tensor(rng.standard_normal(8)), disc)


def test_discriminator_gradcheck(small_config, rng):
    disc = Discriminator(small_config, seed=0)
    mel, c = Tensor(rng.standard_normal((12, 5)), requires_grad=True), Tensor(rng.standard_normal(8), requires_grad=True)
    w1, w2 = rng.uniform(0.5, 1.5, 2), rng.uniform(0.5, 1.5, 2)

    def loss():
        out = gan.jcu_discriminator(mel, c, disc)
        return (out.uncond_score * w1).sum() + (out.cond_score * w2).sum()

    assert finite_diff_check(loss, [mel, c], max_coords=None).max_rel_error < 1e-6


# -- LSGAN ----------------------------------------------------------------------------
def test_adv_d_closed_forms():
    assert float(gan.loss_adv_d(full(1.0), full(0.0)).data) == 0.0
    assert abs(float(gan.loss_adv_d(full(0.5), full(0.5)).data) - 0.5) < 1e-12


def test_adv_g_closed_forms():
    assert float(gan.loss_adv_g(full(1.0)).data) == 0.0
    assert abs(float(gan.loss_adv_g(full(0.0)).data) - 1.0) < 1e-12


def test_adversarial_losses_against_formula(rng):
    real = [scores(rng.standard_normal(4), rng.standard_normal(4)) for _ in range(3)]
    fake = [scores(rng.standard_normal(5), rng.standard_normal(5)) for _ in range(3)]
    d_terms, g_terms = [], []
    for r, f in zip(real, fake):
        fu, fc, ru, rc = f.uncond_score.data, f.cond_score.data, r.uncond_score.data, r.cond_score.data
        d_terms.append(0.5 * (np.mean(fu**2) + np.mean(fc**2)) + 0.5 * (np.mean((ru - 1) ** 2) + np.mean((rc - 1) ** 2)))
        g_terms.append(0.5 * (np.mean((fu - 1) ** 2) + np.mean((fc - 1) ** 2)))
    assert abs(float(gan.loss_adv_d(real, fake).data) - np.mean(d_terms)) < 1e-12
    assert abs(float(gan.loss_adv_g(fake).data) - np.mean(g_terms)) < 1e-12


def test_adversarial_losses_nonnegative(rng):
    for _ in range(20):
        r = scores(rng.standard_normal(3), rng.standard_normal(3))
        f = scores(rng.standard_normal(3), rng.standard_normal(3))
        assert float(gan.loss_adv_d(r, f).data) >= 0 and float(gan.loss_adv_g(f).data) >= 0


# -- feature matching ------------------------------------------------------------------------
def test_feature_matching_identical_and_offset(rng):
    feats = [Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal((2, 5)))]
    assert float(gan.loss_feature_matching(feats, feats).data) == 0.0
    shifted = [Tensor(f.data + 0.25) for f in feats]
    assert abs(float(gan.loss_feature_matching(feats, shifted).data) - 0.25) < 1e-15


def test_feature_matching_against_loop(rng):
    real = [rng.standard_normal((3, 4)), rng.standard_normal((2, 6)), rng.standard_normal((5, 1))]
    fake = [rng.standard_normal(r.shape) for r in real]
    expected = np.mean([np.mean(np.abs(f - r)) for r, f in zip(real, fake)])
    got = gan.loss_feature_matching([Tensor(r) for r in real], [Tensor(f) for f in fake])
    assert abs(float(got.data) - expected) < 1e-12


def test_feature_matching_real_side_gets_no_gradient(rng):
    real = [Tensor(rng.standard_normal((3, 2)), requires_grad=True)]
    fake = [Tensor(rng.standard_normal((3, 2)), requires_grad=True)]
    gan.loss_feature_matching(real, fake).backward()
    assert real[0].grad is None and fake[0].grad is not None


def test_feature_matching_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        gan.loss_feature_matching([Tensor(np.zeros((2, 2)))], [Tensor(np.zeros((3, 2)))])


# -- total objective --------------------------------------------------------------------------
def test_alpha_ratio_arithmetic():
    total, alpha = gan.total_generator_loss(Tensor(2.0), Tensor(0.0), Tensor(0.5))
    assert alpha == 4.0
    assert float(total.data) == 2.0 + 0.0 + 2.0


def test_alpha_skipped_for_vanishing_fm():
    total, alpha = gan.total_generator_loss(Tensor(2.0), Tensor(0.3), Tensor(0.0))
    assert alpha == 0.0 and float(total.data) == pytest.approx(2.3)


def test_alpha_rejects_non_finite():
    with pytest.raises(ContractError):
        gan.total_generator_loss(Tensor(float("nan")), Tensor(0.0), Tensor(1.0))


def test_alpha_is_a_constant_multiplier(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    rec, fm = (x * x).sum(), (x * 2.0).sum() * (x * 2.0).sum()
    total, alpha = gan.total_generator_loss(rec, Tensor(0.0), fm)
    total.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + alpha * 8 * x.data.sum(), rtol=1e-12)


# -- reconstruction ---------------------------------------------------------------------------
@pytest.fixture
def tiny_batch():
    spec = CorpusSpec(n_utterances=3, vocab_size=12, min_tokens=2, max_tokens=4, n_speakers=3,
                      mel_channels=5, max_duration=3)
    return collate(generate_corpus(spec, 0))


class _Fake:
    def __init__(self, mel, log_d, pitch, energy, egemaps):
        self.mel = Tensor(mel)
        self.variances = type("V", (), dict(log_durations=Tensor(log_d), pitch=Tensor(pitch),
                                            energy=Tensor(energy), egemaps=Tensor(egemaps)))


def perfect_outputs(batch, mel_shift=0.0):
    outs = []
    for b in range(len(batch)):
        n, m = batch.n_tokens(b), batch.n_frames(b)
        outs.append(_Fake(batch.mel[b, :m] + mel_shift, gan.duration_target(batch.durations[b, :n]),
                          batch.pitch[b, :n], batch.energy[b, :n], batch.egemaps[b]))
    return outs


def test_perfect_reconstruction_is_zero(tiny_batch):
    rec = gan.loss_reconstruction(perfect_outputs(tiny_batch), tiny_batch)
    assert float(rec["total"].data) == 0.0


def test_unit_mel_offset_gives_unit_loss(tiny_batch):
    rec = gan.loss_reconstruction(perfect_outputs(tiny_batch, 1.0), tiny_batch)
    assert float(rec["total"].data) == pytest.approx(1.0, abs=1e-15)


def test_reconstruction_against_scripted_terms(tiny_batch, rng):
    outs = []
    for b in range(len(tiny_batch)):
        n, m = tiny_batch.n_tokens(b), tiny_batch.n_frames(b)
        outs.append(_Fake(rng.standard_normal((m, 5)), rng.standard_normal(n), rng.standard_normal(n),
                          rng.standard_normal(n), rng.standard_normal(2)))
    B = tiny_batch
    mel_err = np.concatenate([np.abs(o.mel.data - B.mel[b, :B.n_frames(b)]).ravel() for b, o in enumerate(outs)])
    terms = {
        "mel": mel_err.mean(),
        "d": np.concatenate([(o.variances.log_durations.data - np.log(B.durations[b, :B.n_tokens(b)] + 1.0)) ** 2
                             for b, o in enumerate(outs)]).mean(),
        "p": np.concatenate([(o.variances.pitch.data - B.pitch[b, :B.n_tokens(b)]) ** 2 for b, o in enumerate(outs)]).mean(),
        "e": np.concatenate([(o.variances.energy.data - B.energy[b, :B.n_tokens(b)]) ** 2 for b, o in enumerate(outs)]).mean(),
        "egemaps": np.mean([(o.variances.egemaps.data - B.egemaps[b]) ** 2 for b, o in enumerate(outs)]),
    }
    rec = gan.loss_reconstruction(outs, B)
    for key, value in terms.items():
        assert abs(float(rec[key].data) - value) < 1e-12
    assert abs(float(rec["total"].data) - sum(terms.values())) < 1e-12


def test_padded_cells_never_read(tiny_batch, small_config):
    model = AcousticModel(small_config, seed=0)
    base = gan.loss_reconstruction(generator_outputs(model, tiny_batch), tiny_batch)
    B = tiny_batch
    for b in range(len(B)):
        B.mel[b, B.n_frames(b):] = 1e6
        B.pitch[b, B.n_tokens(b):] = -1e6
        B.energy[b, B.n_tokens(b):] = np.nan
        B.durations[b, B.n_tokens(b):] = 99
    again = gan.loss_reconstruction(generator_outputs(model, B), B)
    for key in base:
        assert base[key].data.tobytes() == again[key].data.tobytes()


def test_generator_loss_gradcheck_two_utterances(small_config):
    model = AcousticModel(small_config, seed=4)
    rng = np.random.default_rng(2)
    for p in model.parameters():
        p.data += 0.05 * rng.standard_normal(p.shape)
    spec = CorpusSpec(n_utterances=2, vocab_size=12, min_tokens=2, max_tokens=3, n_speakers=3, mel_channels=5,
                      max_duration=3)
    batch = collate(generate_corpus(spec, 1))
    loss = lambda: gan.loss_reconstruction(generator_outputs(model, batch), batch)["total"]  # noqa: E731
    assert finite_diff_check(loss, model.parameters(), max_coords=2).max_rel_error < 1e-4
