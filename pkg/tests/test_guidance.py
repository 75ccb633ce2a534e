import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from medtalk.errors import ConfigError, FrozenError, ParseError, ValidationError
from medtalk.fim import FIMModel
from medtalk.guidance import (GuidanceEmbedding, ProjectionHead, project_guidance, read_guidance_manifest,
                              read_guidance_vector, train_guidance, write_guidance_manifest,
                              write_guidance_vector)
from medtalk.nets import StageSchedule
from medtalk.synthdata import make_guidance_pairs


@pytest.fixture
def head():
    torch.manual_seed(0)
    return ProjectionHead(12, 8, hidden=16).freeze()


def test_project_dims_and_determinism(head, rng):
    v = rng.normal(size=12)
    a, b = project_guidance(head, v, "text"), project_guidance(head, v, "text")
    assert a.vector.shape == (8,) and a.modality == "text"
    assert np.array_equal(a.vector, b.vector)


def test_project_width_mismatch(head):
    with pytest.raises(ConfigError, match="width"):
        project_guidance(head, np.ones(11), "image")
    with pytest.raises(ConfigError):
        project_guidance(head, np.ones((2, 12)), "image")


def test_guidance_embedding_invariants():
    with pytest.raises(ValidationError):
        GuidanceEmbedding(np.zeros(4), "text")
    with pytest.raises(ValidationError):
        GuidanceEmbedding(np.ones(4), "audio")
    with pytest.raises(ValidationError):
        GuidanceEmbedding(np.ones((2, 2)), "image")


def test_only_stage4_groups_change(tiny_models):
    """Stage 4 trains P_text, P_image and a copy of the fusion encoder, nothing else."""
    t = tiny_models
    assert t["stage3_before"] == t["stage3_after"]
    assert len(set(t["checksums"]["bundle"])) == 1 and len(set(t["checksums"]["acm"])) == 1
    g = t["guidance"]
    assert g.fusion_encoder is not t["fim"].fusion_encoder
    assert g.fusion_encoder.checksum() != t["fim"].fusion_encoder.checksum()
    for m in (g.p_text, g.p_image, g.fusion_encoder):
        with pytest.raises(FrozenError):
            m.trainable_parameters()


def test_head_lookup(tiny_models):
    g = tiny_models["guidance"]
    assert g.head("text") is g.p_text and g.head("image") is g.p_image
    with pytest.raises(ConfigError):
        g.head("audio")


def test_requires_frozen_upstream(small_data, tiny_models):
    t = tiny_models
    pairs = make_guidance_pairs(small_data[:4], t["oracle"])
    loose = FIMModel(4, 4, 8)
    with pytest.raises(ValidationError, match="frozen"):
        train_guidance(pairs, t["bundle"], t["acm"], loose, [0], StageSchedule(epochs=1))
    with pytest.raises(ValidationError, match="no guidance pairs"):
        train_guidance([], t["bundle"], t["acm"], t["fim"], [0], StageSchedule(epochs=1))


def test_mixed_widths_rejected(small_data, tiny_models):
    t = tiny_models
    pairs = make_guidance_pairs(small_data[:3], t["oracle"], modalities=("text",))
    pairs[0].vector = pairs[0].vector[:-1]
    with pytest.raises(ConfigError, match="mixed widths"):
        train_guidance(pairs, t["bundle"], t["acm"], t["fim"], [0], StageSchedule(epochs=1))


@settings(max_examples=30)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_vector_file_roundtrip(tmp_path_factory, v):
    path = tmp_path_factory.mktemp("vec") / "g.vec.txt"
    write_guidance_vector(v, path)
    np.testing.assert_allclose(read_guidance_vector(path), v, rtol=1e-9, atol=1e-300)


@pytest.mark.parametrize("text,match", [
    ("", "missing header"),
    ("3\n1 2 3\n", "malformed header"),
    ("width=x\n1\n", "malformed header"),
    ("width=3\n1 2\n", "width=3"),
    ("width=2\n1 zz\n", "bad value"),
    ("width=2\n1 nan\n", "non-finite"),
])
def test_vector_file_errors(tmp_path, text, match):
    p = tmp_path / "bad.vec.txt"
    p.write_text(text)
    with pytest.raises(ParseError, match=match):
        read_guidance_vector(p)


def test_vector_file_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_guidance_vector(tmp_path / "nope.vec.txt")


def test_manifest_roundtrip(tmp_path, small_data, tiny_models):
    pairs = make_guidance_pairs(small_data[:5], tiny_models["oracle"], seed=3)
    write_guidance_manifest(pairs, tmp_path, {s.clip_id: f"{s.clip_id}.rig.txt" for s in small_data})
    back = read_guidance_manifest(tmp_path, small_data)
    assert [(p.modality, p.sample.clip_id) for p in back] == [(p.modality, p.sample.clip_id) for p in pairs]
    for a, b in zip(back, pairs):
        np.testing.assert_allclose(a.vector, b.vector, rtol=1e-9)
    # clips outside the given sample list are dropped (e.g. the test split)
    kept = read_guidance_manifest(tmp_path, small_data[:1])
    assert len(kept) == 2 and all(p.sample.clip_id == small_data[0].clip_id for p in kept)
