import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from medtalk.acm import ACMModel, acm_loss_terms, map_content, sim_loss, train_acm
from medtalk.disentangle import AutoencoderBundle
from medtalk.errors import ConfigError, FrozenError, ValidationError
from medtalk.nets import StageSchedule
from medtalk.rigcore import FeatureStream


@pytest.fixture
def acm():
    torch.manual_seed(0)
    return ACMModel(feature_dim=7, content_dim=5, hidden=16).freeze()


def test_map_content_shape_and_determinism(acm, rng):
    f = FeatureStream(rng.normal(size=(9, 7)), fps=30)
    a, b = map_content(acm, f), map_content(acm, f)
    assert a.values.shape == (9, 5) and a.kind == "content"
    assert np.array_equal(a.values, b.values)


def test_map_content_rejects_bad_input(acm):
    with pytest.raises(ValidationError):
        map_content(acm, FeatureStream(np.zeros((0, 7)), fps=30))
    with pytest.raises(ConfigError):
        map_content(acm, FeatureStream(np.zeros((4, 6)), fps=30))


def test_sim_loss_reference_points():
    x = torch.randn(2, 5, 4)
    assert sim_loss(x, x).item() == pytest.approx(0.0, abs=1e-6)
    a = torch.zeros(1, 3, 2)
    a[..., 0] = 1
    b = torch.zeros(1, 3, 2)
    b[..., 1] = 2
    assert sim_loss(a, b).item() == pytest.approx(1.0, abs=1e-6)
    assert sim_loss(a, -a).item() == pytest.approx(2.0, abs=1e-6)


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1))
def test_sim_loss_bounded(seed):
    g = torch.Generator().manual_seed(seed)
    v = sim_loss(torch.randn(2, 4, 3, generator=g), torch.randn(2, 4, 3, generator=g)).item()
    assert -1e-6 <= v <= 2 + 1e-6


def test_zero_lambda_is_pure_reconstruction(small_data, tiny_models, monkeypatch):
    """With lambda_sim = 0 the similarity term has no influence on the weights."""
    import medtalk.acm as acm_mod
    bundle = tiny_models["bundle"]
    ref = train_acm(small_data, bundle, StageSchedule(epochs=2), lambda_sim=0.0, hidden=16, seed=1)
    monkeypatch.setattr(acm_mod, "sim_loss", lambda t, p: 1e3 * (p ** 3).mean())
    alt = train_acm(small_data, bundle, StageSchedule(epochs=2), lambda_sim=0.0, hidden=16, seed=1)
    assert ref.checksum() == alt.checksum()
    moved = train_acm(small_data, bundle, StageSchedule(epochs=2), lambda_sim=0.1, hidden=16, seed=1)
    assert moved.checksum() != ref.checksum()


def test_refuses_unfrozen_bundle(small_data):
    with pytest.raises(ValidationError, match="frozen"):
        train_acm(small_data, AutoencoderBundle(content_dim=4, emotion_dim=4, hidden=8), StageSchedule(epochs=1))


def test_bundle_untouched_by_stage2(tiny_models):
    first, after_acm = tiny_models["checksums"]["bundle"][:2]
    assert first == after_acm


def test_trained_acm_is_frozen(tiny_models):
    acm = tiny_models["acm"]
    assert acm.frozen
    with pytest.raises(FrozenError):
        acm.trainable_parameters()


def test_training_deterministic(small_data, tiny_models):
    bundle = tiny_models["bundle"]
    a = train_acm(small_data, bundle, StageSchedule(epochs=1), hidden=16, seed=4)
    b = train_acm(small_data, bundle, StageSchedule(epochs=1), hidden=16, seed=4)
    assert a.checksum() == b.checksum()


def test_length_mismatch_rejected(small_data, tiny_models):
    s = small_data[0]
    bad = type(s)(**{**s.__dict__, "audio_content_features": FeatureStream(
        s.audio_content_features.values[:-1], fps=s.audio_content_features.fps)})
    with pytest.raises(ValidationError, match="resampled"):
        train_acm([bad], tiny_models["bundle"], StageSchedule(epochs=1))
