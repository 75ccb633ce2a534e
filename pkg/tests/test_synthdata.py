import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from medtalk.errors import ValidationError
from medtalk.rigcore import pseudo_intensity
from medtalk.synthdata import (EMOTIONS, GuidanceOracle, SynthSpec, emotion_index, generate_dataset,
                               intensity_probe_r2, make_guidance_pairs, oracle_factorization, read_dataset,
                               reconstruct_from_factors, spec_from_manifest, split_by_content, write_dataset)


def test_count_and_ids(small_data, small_spec):
    assert len(small_data) == small_spec.n_contents * 7
    assert {(s.content_id, s.emotion_id) for s in small_data} == {(c, e) for c in range(4) for e in range(7)}


def test_deterministic(small_spec):
    a, b = generate_dataset(small_spec), generate_dataset(small_spec)
    for x, y in zip(a, b):
        assert np.array_equal(x.rig.values, y.rig.values)
        assert np.array_equal(x.pseudo_audio_features.values, y.pseudo_audio_features.values)
        assert np.array_equal(x.pseudo_text_features.times, y.pseudo_text_features.times)


def test_seed_changes_data(small_spec):
    a = generate_dataset(small_spec)[0].rig.values
    b = generate_dataset(SynthSpec(n_contents=4, seq_len=24, seed=4))[0].rig.values
    assert not np.array_equal(a, b)


def test_zero_lip_support_keeps_lips_identical():
    data = generate_dataset(SynthSpec(n_contents=2, seq_len=16, leak=0.0))
    lip = list(SynthSpec().controller_sets().lip)
    a, b = data[0], data[3]
    assert a.content_id == b.content_id and a.emotion_id != b.emotion_id
    assert np.abs(a.rig.values[:, lip] - b.rig.values[:, lip]).max() <= 1e-9


def test_zero_gain_gives_identical_variants():
    data = generate_dataset(SynthSpec(n_contents=2, seq_len=16, emotion_gain=0.0))
    for s in data[1:7]:
        assert np.array_equal(s.rig.values, data[0].rig.values)


def test_factorization_identities(small_data, small_spec):
    sets = small_spec.controller_sets()
    for s in small_data:
        f = oracle_factorization(s)
        np.testing.assert_allclose(reconstruct_from_factors(f), s.rig.values, atol=1e-6)
        np.testing.assert_allclose(f.intensity, pseudo_intensity(s.rig, sets).values, atol=1e-6)
        assert np.all(f.intensity >= 0)


def test_same_emotion_same_direction(small_data):
    by_e = {}
    for s in small_data:
        by_e.setdefault(s.emotion_id, []).append(oracle_factorization(s).emotion)
    for dirs in by_e.values():
        for d in dirs[1:]:
            assert np.array_equal(d, dirs[0])


def test_aligned_pairs(small_data):
    for c in range(4):
        group = [s for s in small_data if s.content_id == c]
        assert len({len(s.rig) for s in group}) == 1
        ref = oracle_factorization(group[0]).content
        for s in group[1:]:
            assert np.array_equal(oracle_factorization(s).content, ref)


def test_lengths_agree(small_data):
    for s in small_data:
        T = len(s.rig)
        assert len(s.true_intensity) == T == len(s.pseudo_audio_features) == len(s.audio_content_features)
        assert len(s.pseudo_text_features) >= 1


def test_intensity_needs_both_streams():
    data = generate_dataset(SynthSpec(n_contents=16, seq_len=64, seed=0))
    fused = intensity_probe_r2(data, True, True)
    audio = intensity_probe_r2(data, True, False)
    text = intensity_probe_r2(data, False, True)
    assert fused >= 0.9
    assert fused - max(audio, text) >= 0.05


@pytest.mark.parametrize("kw", [dict(n_emotions=6), dict(seq_len=1), dict(dims=1), dict(content_dim=0),
                                dict(n_contents=0), dict(emotion_gain=-1.0), dict(leak=2.0)])
def test_degenerate_spec_rejected(kw):
    with pytest.raises(ValidationError):
        generate_dataset(SynthSpec(**kw))


def test_emotion_index():
    assert emotion_index("Happy") == 1 and emotion_index(6) == 6
    with pytest.raises(ValidationError, match="neutral"):
        emotion_index("bored")
    with pytest.raises(ValidationError):
        emotion_index(7)
    assert len(EMOTIONS) == 7


def test_split_by_content_holds_out_whole_contents(small_data):
    tr, te = split_by_content(small_data, 0.25, 0)
    assert len(tr) + len(te) == len(small_data)
    assert not {s.content_id for s in tr} & {s.content_id for s in te}
    assert len({s.content_id for s in te}) == 1


def test_manifest_roundtrip(tmp_path, small_data, small_spec):
    write_dataset(small_data, tmp_path, small_spec)
    back = read_dataset(tmp_path)
    assert [s.clip_id for s in back] == [s.clip_id for s in small_data]
    for a, b in zip(small_data, back):
        np.testing.assert_allclose(a.rig.values, b.rig.values, atol=1e-6)
        np.testing.assert_allclose(a.pseudo_text_features.times, b.pseudo_text_features.times)
        np.testing.assert_allclose(a.true_intensity.values, b.true_intensity.values, atol=1e-6)
    spec = spec_from_manifest(tmp_path)
    assert spec.seq_len == small_spec.seq_len and spec.controller_sets() == small_spec.controller_sets()


def test_loaded_samples_have_no_factors(tmp_path, small_data):
    write_dataset(small_data[:1], tmp_path)
    with pytest.raises(ValidationError):
        oracle_factorization(read_dataset(tmp_path)[0])


@settings(max_examples=20)
@given(st.integers(0, 6), st.sampled_from(["text", "image"]))
def test_guidance_oracle_clean_vectors_are_distinct(e, modality):
    o = GuidanceOracle(seed=0)
    v = o.clean(modality, e)
    others = [o.clean(modality, k) for k in range(7) if k != e]
    assert all(np.linalg.norm(v - w) > 0.5 for w in others)


def test_guidance_pairs(small_data):
    pairs = make_guidance_pairs(small_data, GuidanceOracle(seed=0), seed=1)
    assert len(pairs) == 2 * len(small_data)
    assert {p.modality for p in pairs} == {"text", "image"}
