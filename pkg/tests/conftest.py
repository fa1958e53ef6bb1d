import numpy as np
import pytest

from emospeech.model import AcousticModel, ModelConfig
from emospeech.training import CorpusSpec, generate_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_config():
    return ModelConfig.toy()


@pytest.fixture(scope="session")
def small_config():
    """Tiny dimensions for tests that run many forwards."""
    return ModelConfig(
        vocab_size=12, hidden=8, n_enc_layers=1, n_dec_layers=1, n_heads=2, ffn_filter=12,
        ffn_kernels=(3, 1), spk_emb_dim=4, emo_emb_dim=4, n_speakers=3, n_emotions=5,
        predictor_filter=6, k_egemaps=2, mel_channels=5,
        disc_channels=(6, 8, 10), disc_head_channels=6, disc_cond_dim=4,
    )


@pytest.fixture(scope="session")
def toy_corpus():
    return generate_corpus(CorpusSpec(), seed=0)


@pytest.fixture
def small_model(small_config):
    return AcousticModel(small_config, seed=3)
