import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from medtalk.disentangle import (PHASES, STAGE1_LOSS_TERMS, AutoencoderBundle, EmbeddingSequence,
                                 Stage1Schedule, cycle_exchange, decode, encode, overlap_exchange,
                                 reconstruction_mse, swap_emotion, train_stage1)
from medtalk.errors import ConfigError, FrozenError, ValidationError
from medtalk.rigcore import RigSequence


@pytest.fixture
def bundle():
    torch.manual_seed(0)
    return AutoencoderBundle(dims=174, content_dim=6, emotion_dim=5, hidden=16)


def test_decoder_input_is_concatenation(bundle):
    assert bundle.decoder.in_dim == bundle.content_dim + bundle.emotion_dim


def test_encode_shapes_and_determinism(bundle, rng):
    rig = RigSequence(rng.normal(size=(7, 174)))
    c, e = encode(bundle, rig)
    assert c.values.shape == (7, 6) and e.values.shape == (7, 5)
    assert c.kind == "content" and e.kind == "emotion"
    c2, e2 = encode(bundle, rig)
    assert np.array_equal(c.values, c2.values) and np.array_equal(e.values, e2.values)


def test_encode_width_mismatch(bundle):
    with pytest.raises(ConfigError):
        encode(bundle, RigSequence(np.zeros((3, 173))))


def test_decode_contracts(bundle, rng):
    with pytest.raises(ValidationError):
        decode(bundle, EmbeddingSequence(np.zeros((5, 6)), "content"), EmbeddingSequence(np.zeros((6, 5)), "emotion"))
    with pytest.raises(ValidationError):
        decode(bundle, EmbeddingSequence(np.zeros((5, 5)), "emotion"), EmbeddingSequence(np.zeros((5, 6)), "content"))
    with pytest.raises(ConfigError):
        decode(bundle, EmbeddingSequence(np.zeros((5, 7)), "content"), EmbeddingSequence(np.zeros((5, 5)), "emotion"))


@settings(max_examples=20)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_decode_random_embeddings_finite(T, seed):
    torch.manual_seed(0)
    b = AutoencoderBundle(dims=10, content_dim=3, emotion_dim=3, hidden=8)
    r = np.random.default_rng(seed)
    out = decode(b, EmbeddingSequence(r.normal(size=(T, 3)) * 10, "content"),
                 EmbeddingSequence(r.normal(size=(T, 3)) * 10, "emotion"))
    assert out.values.shape == (T, 10) and np.all(np.isfinite(out.values))


def test_embedding_sequence_validation():
    with pytest.raises(ValidationError):
        EmbeddingSequence(np.array([[np.inf]]), "content")
    with pytest.raises(ValidationError):
        EmbeddingSequence(np.zeros((2, 2)), "style")


def test_cycle_of_identical_pair_is_self_reconstruction(bundle, rng):
    x = torch.tensor(rng.normal(size=(2, 6, 174)), dtype=torch.float32)
    with torch.no_grad():
        a, b, c, d = cycle_exchange(bundle, x, x)
        ref = bundle(x)
        twice = bundle(ref)
    assert torch.allclose(a, ref) and torch.allclose(b, ref)
    assert torch.allclose(c, twice) and torch.allclose(d, twice)


def test_overlap_with_equal_emotion_leaves_targets(bundle, rng):
    x = torch.tensor(rng.normal(size=(1, 6, 174)), dtype=torch.float32)
    with torch.no_grad():
        r1, r2 = overlap_exchange(bundle, x, x, shared="emotion")
        assert torch.allclose(r1, bundle(x)) and torch.allclose(r2, bundle(x))
    with pytest.raises(ValueError):
        overlap_exchange(bundle, x, x, shared="pose")


def test_swap_requires_frozen_and_equal_length(bundle, rng):
    a = RigSequence(rng.normal(size=(5, 174)))
    with pytest.raises(FrozenError):
        swap_emotion(bundle, a, a)
    bundle.freeze()
    with pytest.raises(ValidationError):
        swap_emotion(bundle, a, RigSequence(rng.normal(size=(6, 174))))


def test_swap_identity_and_involution(bundle, rng):
    bundle.freeze()
    a, b = RigSequence(rng.normal(size=(5, 174))), RigSequence(rng.normal(size=(5, 174)))
    recon = decode(bundle, *encode(bundle, a))
    s1, s2 = swap_emotion(bundle, a, a)
    assert np.array_equal(s1.values, recon.values) and np.array_equal(s2.values, recon.values)
    # swapping the embeddings back recovers each original's reconstruction
    ca, ea = encode(bundle, a)
    cb, eb = encode(bundle, b)
    assert np.array_equal(decode(bundle, ca, ea).values, recon.values)
    assert np.allclose(decode(bundle, cb, eb).values, decode(bundle, *encode(bundle, b)).values)


def test_frozen_bundle_rejects_mutation(bundle):
    bundle.freeze()
    with pytest.raises(FrozenError):
        bundle.trainable_parameters()
    with pytest.raises(FrozenError):
        bundle.load_state_dict(bundle.state_dict())
    with pytest.raises(FrozenError):
        train_stage1([], bundle=bundle)  # rejected before looking at data
    assert all(not p.requires_grad for p in bundle.parameters())


def test_phase_log_order_and_loss_registry(small_data):
    b = train_stage1(small_data, Stage1Schedule(1, 1, 1), content_dim=4, emotion_dim=4, hidden=8)
    assert [p["phase"] for p in b.phase_log] == list(PHASES)
    assert all(p["terms"] == ["recon"] for p in b.phase_log)
    assert STAGE1_LOSS_TERMS == ("recon",)
    assert b.frozen


def test_phase_subset_keeps_order(small_data):
    b = train_stage1(small_data, Stage1Schedule(1, 1, 1, phases=("cycle", "self")), content_dim=4,
                     emotion_dim=4, hidden=8)
    assert [p["phase"] for p in b.phase_log] == ["self", "cycle"]
    with pytest.raises(ConfigError):
        train_stage1(small_data, Stage1Schedule(phases=("self", "bogus")))


def test_unaligned_dataset_rejected(small_data):
    lone = [s for s in small_data if s.content_id == 0 and s.emotion_id == 0]
    with pytest.raises(ValidationError, match="same-content"):
        train_stage1(lone, Stage1Schedule(1, 1, 1))
    partial = [s for s in small_data if not (s.content_id == 1 and s.emotion_id == 2)]
    with pytest.raises(ValidationError, match="every content"):
        train_stage1(partial, Stage1Schedule(1, 1, 1))


def test_training_is_seed_deterministic(small_data):
    a = train_stage1(small_data, Stage1Schedule(1, 1, 1), seed=5, content_dim=4, emotion_dim=4, hidden=8)
    b = train_stage1(small_data, Stage1Schedule(1, 1, 1), seed=5, content_dim=4, emotion_dim=4, hidden=8)
    assert a.checksum() == b.checksum()


def test_self_phase_reduces_error(small_data):
    before = AutoencoderBundle(content_dim=8, emotion_dim=8, hidden=32)
    torch.manual_seed(0)
    start = reconstruction_mse(before, small_data)
    b = train_stage1(small_data, Stage1Schedule(15, 0, 0, learning_rate=1e-3, phases=("self",)),
                     content_dim=8, emotion_dim=8, hidden=32)
    assert reconstruction_mse(b, small_data) < 0.5 * start
