import numpy as np
import pytest

from latentrul import ingest, model
from latentrul.seeding import STREAM_PARAMS, substream

# Miniature geometry shared by the model-level and acceptance gradient checks.
MINI_CONFIG = dict(
    window_length=4, n_features=3, latent_len=2, latent_dim=4, codebook_size=4,
    model_dim=12, enc_layers=1, enc_heads=3, dec_layers=1, dec_heads=3,
    epochs=2, batch_size=8, rul_cap=125.0,
)


def mini_config(**overrides):
    cfg = dict(MINI_CONFIG)
    cfg.update(overrides)
    return model.ModelConfig(**cfg)


def mini_params(config, seed=0):
    return model.init_params(config, substream(seed, STREAM_PARAMS))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_windows(n, config, seed=0):
    """Synthetic windows whose targets follow a simple function of the values."""
    gen = np.random.default_rng(seed)
    windows = []
    for i in range(n):
        values = gen.random((config.window_length, config.n_features))
        target = float(np.clip(120.0 * values.mean(), 0.0, config.rul_cap))
        windows.append(ingest.TimeWindow(unit_id=1, window_id=i + 1, values=values,
                                         rul_target=target))
    return windows


def toy_feature_spec(n_features):
    return ingest.FeatureSpec(sensor_indices=tuple(range(1, n_features + 1)),
                              include_settings=0)


def toy_stats(n_features):
    return ingest.NormalizationStats(minimum=np.zeros(n_features),
                                     maximum=np.ones(n_features))
