"""Synthetic rig corpus with a known content / emotion / intensity factorization.

Every sample is built as::

    rig[t] = content[t] + intensity[t] * direction[emotion] + bias

where ``content`` is a smooth trajectory shared by all seven emotion variants
of one content id (mostly lip controllers), ``direction`` is a fixed
per-emotion pattern over the expression controllers, and ``intensity`` is a
nonnegative curve. The intensity controllers carry only the emotion term and
every direction has unit L1 mass there, so the pseudo-intensity of a rig is
exactly its intensity factor.

Intensity = gain * (base + prosody(t) + semantic(t)). Audio emotion features see
the prosody part, text tokens see the per-word semantic strength, so neither
stream alone explains the curve.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import ValidationError
from .rigcore import (ControllerSets, FeatureStream, IntensityCurve, RigSequence,
                      pseudo_intensity, read_features, read_rig, write_features, write_rig)

EMOTIONS = ("neutral", "happy", "sad", "angry", "fear", "disgust", "surprise")
N_EMOTIONS = len(EMOTIONS)

_BASE_INTENSITY = 0.4
_PROSODY_SCALE = 1.2
_WORD_LEN = (4, 10)
_EMOTIONAL_WORD_P = 0.35
_WORD_STRENGTH = (0.5, 1.0)
_CONTENT_SCALE = 0.15
_EXPR_SCALE = 0.1


def emotion_index(name) -> int:
    if isinstance(name, (int, np.integer)):
        if 0 <= int(name) < N_EMOTIONS:
            return int(name)
        raise ValidationError(f"emotion id {name} outside [0, {N_EMOTIONS})")
    try:
        return EMOTIONS.index(str(name).lower())
    except ValueError:
        raise ValidationError(f"unknown emotion '{name}', expected one of {', '.join(EMOTIONS)}") from None


@dataclass
class SynthSpec:
    n_contents: int = 64
    n_emotions: int = N_EMOTIONS
    seq_len: int = 120
    dims: int = 174
    seed: int = 0
    content_dim: int = 8
    emotion_gain: float = 1.0
    fps: int = 30
    leak: float = 0.05
    audio_dim: int = 32
    text_dim: int = 16
    feature_noise: float = 0.05
    sets: ControllerSets | None = None

    def controller_sets(self) -> ControllerSets:
        return (self.sets or ControllerSets.default(self.dims)).validate(self.dims)

    def validate(self) -> "SynthSpec":
        if self.n_emotions != N_EMOTIONS:
            raise ValidationError(f"n_emotions must be {N_EMOTIONS}, got {self.n_emotions}")
        if self.n_contents < 1:
            raise ValidationError("n_contents must be >= 1")
        if self.seq_len < 2 or self.dims < 2 or self.content_dim < 1:
            raise ValidationError("need seq_len >= 2, dims >= 2 and content_dim >= 1")
        if self.emotion_gain < 0 or not 0 <= self.leak <= 1 or self.feature_noise < 0:
            raise ValidationError("emotion_gain, leak and feature_noise must be nonnegative (leak <= 1)")
        if self.fps <= 0 or self.audio_dim < 1 or self.text_dim < 1:
            raise ValidationError("fps, audio_dim and text_dim must be positive")
        sets = self.controller_sets()
        if set(sets.intensity) & set(sets.lip):
            raise ValidationError("intensity controllers must not overlap the lip set")
        return self


class Factorization(NamedTuple):
    content: np.ndarray     # T x D content contribution
    emotion: np.ndarray     # D emotion direction (unit L1 mass on the intensity set)
    intensity: np.ndarray   # T intensity factor
    bias: np.ndarray        # D
    content_latent: np.ndarray  # T x content_dim smooth trajectory


@dataclass(eq=False)
class SynthSample:
    rig: RigSequence
    content_id: int
    emotion_id: int
    true_intensity: IntensityCurve
    pseudo_audio_features: FeatureStream     # emotion-related audio stream
    pseudo_text_features: FeatureStream      # token-level text stream (timed)
    audio_content_features: FeatureStream    # speech-content stream for the content mapping
    factors: Factorization | None = field(default=None, repr=False)

    @property
    def clip_id(self) -> str:
        return f"c{self.content_id:04d}_e{self.emotion_id}"


class _Params(NamedTuple):
    C: np.ndarray
    E: np.ndarray
    bias: np.ndarray
    W_content: np.ndarray
    W_emotion: np.ndarray
    W_nuisance: np.ndarray
    W_text: np.ndarray


def _column_groups(spec: SynthSpec):
    sets = spec.controller_sets()
    lip = np.array(sets.lip)
    intensity = np.array(sets.intensity)
    expr = sorted((set(sets.emo) | set(sets.up)) - set(sets.intensity) - set(sets.lip))
    return lip, intensity, np.array(expr, dtype=np.int64)


def _draw_params(spec: SynthSpec, rng: np.random.Generator) -> _Params:
    D, k = spec.dims, spec.content_dim
    lip, inten, expr = _column_groups(spec)

    C = np.zeros((D, k))
    C[lip] = rng.normal(0, _CONTENT_SCALE / np.sqrt(k), (len(lip), k))
    if len(expr):
        C[expr] = spec.leak * rng.normal(0, _CONTENT_SCALE / np.sqrt(k), (len(expr), k))

    E = np.zeros((N_EMOTIONS, D))
    mass = rng.uniform(0.5, 1.5, (N_EMOTIONS, len(inten)))
    E[:, inten] = mass / mass.sum(axis=1, keepdims=True)
    if len(expr):
        E[:, expr] = rng.normal(0, _EXPR_SCALE, (N_EMOTIONS, len(expr)))
    E[:, lip] = spec.leak * rng.normal(0, _EXPR_SCALE, (N_EMOTIONS, len(lip)))

    bias = rng.uniform(0.2, 0.5, D)
    bias[inten] = 0.0

    a = spec.audio_dim
    W_content = rng.normal(0, 1 / np.sqrt(k), (a, k))
    W_emotion = rng.normal(0, 1 / np.sqrt(3), (a, N_EMOTIONS + 2))
    W_nuisance = rng.normal(0, 0.3 / np.sqrt(k), (a, k))
    W_text = rng.normal(0, 1 / np.sqrt(3), (spec.text_dim, N_EMOTIONS + 2))
    return _Params(C, E, bias, W_content, W_emotion, W_nuisance, W_text)


def _smooth_noise(rng, T, width, sigma):
    z = gaussian_filter1d(rng.normal(size=(T, width)), sigma, axis=0, mode="nearest")
    return (z - z.mean(axis=0)) / (z.std(axis=0) + 1e-12)


def _segment_words(rng, T):
    """Split [0, T) into word spans; returns (starts, stops)."""
    starts, t = [], 0
    while t < T:
        starts.append(t)
        t += int(rng.integers(_WORD_LEN[0], _WORD_LEN[1] + 1))
    starts = np.array(starts)
    stops = np.append(starts[1:], T)
    return starts, stops


def generate_dataset(spec: SynthSpec) -> list[SynthSample]:
    """n_contents x 7 aligned samples, deterministic in ``spec.seed``."""
    spec.validate()
    sets = spec.controller_sets()
    rng = np.random.default_rng(spec.seed)
    p = _draw_params(spec, rng)
    T, noise = spec.seq_len, spec.feature_noise
    eye = np.eye(N_EMOTIONS)

    samples = []
    for c in range(spec.n_contents):
        latent = _smooth_noise(rng, T, spec.content_dim, sigma=3.0)
        content = latent @ p.C.T
        starts, stops = _segment_words(rng, T)
        centers = (starts + stops - 1) / 2.0
        for e in range(N_EMOTIONS):
            prosody = _PROSODY_SCALE / (1 + np.exp(-1.5 * _smooth_noise(rng, T, 1, sigma=4.0)[:, 0]))
            emotional = rng.random(len(starts)) < _EMOTIONAL_WORD_P
            strength = np.where(emotional, rng.uniform(*_WORD_STRENGTH, len(starts)), 0.0)
            semantic = np.repeat(strength, stops - starts)
            semantic = gaussian_filter1d(semantic, 1.0, mode="nearest")
            intensity = spec.emotion_gain * (_BASE_INTENSITY + prosody + semantic)

            rig_values = content + intensity[:, None] * p.E[e] + p.bias
            rig = RigSequence(rig_values, fps=spec.fps)

            onehot = np.tile(eye[e], (T, 1))
            emo_view = np.column_stack([onehot, prosody, np.ones(T)]) @ p.W_emotion.T
            emo_view += latent @ p.W_nuisance.T + noise * rng.normal(size=(T, spec.audio_dim))
            content_view = latent @ p.W_content.T + noise * rng.normal(size=(T, spec.audio_dim))
            tok = np.column_stack([np.tile(eye[e], (len(starts), 1)), strength, np.ones(len(starts))])
            text_view = tok @ p.W_text.T + noise * rng.normal(size=(len(starts), spec.text_dim))

            samples.append(SynthSample(
                rig=rig,
                content_id=c,
                emotion_id=e,
                true_intensity=pseudo_intensity(rig, sets),
                pseudo_audio_features=FeatureStream(emo_view, fps=spec.fps),
                pseudo_text_features=FeatureStream(text_view, fps=spec.fps, times=centers),
                audio_content_features=FeatureStream(content_view, fps=spec.fps),
                factors=Factorization(content, p.E[e].copy(), intensity, p.bias.copy(), latent),
            ))
    return samples


def oracle_factorization(sample: SynthSample) -> Factorization:
    if sample.factors is None:
        raise ValidationError("sample carries no generative factors (was it loaded from disk?)")
    return sample.factors


def reconstruct_from_factors(f: Factorization) -> np.ndarray:
    return f.content + f.intensity[:, None] * f.emotion + f.bias


def split_by_content(samples, test_fraction=0.2, seed=0):
    """Hold out whole content ids so test clips contain unseen speech."""
    ids = sorted({s.content_id for s in samples})
    n_test = int(round(len(ids) * test_fraction))
    if test_fraction > 0 and len(ids) > 1:
        n_test = min(max(n_test, 1), len(ids) - 1)
    perm = np.random.default_rng(seed).permutation(ids)
    test_ids = set(int(i) for i in perm[:n_test])
    train = [s for s in samples if s.content_id not in test_ids]
    test = [s for s in samples if s.content_id in test_ids]
    return train, test


def intensity_probe_r2(samples, use_audio=True, use_text=True, ridge=1e-6):
    """Least-squares probe from frame-level features to the true intensity.

    Fits on the first half of the clips (by position) and reports R^2 on the rest.
    """
    X, y = [], []
    for s in samples:
        T = len(s.rig)
        cols = [np.ones((T, 1))]
        if use_audio:
            cols.append(s.pseudo_audio_features.values)
        if use_text:
            cols.append(s.pseudo_text_features.expand_to_frames(T))
        X.append(np.hstack(cols))
        y.append(s.true_intensity.values)
    half = max(1, len(X) // 2)
    Xtr, ytr = np.vstack(X[:half]), np.concatenate(y[:half])
    Xte, yte = np.vstack(X[half:] or X[:half]), np.concatenate(y[half:] or y[:half])
    A = Xtr.T @ Xtr + ridge * np.eye(Xtr.shape[1])
    w = np.linalg.solve(A, Xtr.T @ ytr)
    resid = yte - Xte @ w
    return 1.0 - resid.var() / yte.var()


# --- guidance oracle ---------------------------------------------------------

@dataclass
class GuidanceOracle:
    """Stand-in for frozen text/image encoders: noisy linear images of emotion one-hots."""

    width: int = 32
    seed: int = 0
    noise: float = 0.1
    matrices: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed + 7919)
        for modality in ("text", "image"):
            self.matrices[modality] = rng.normal(0, 1.0, (self.width, N_EMOTIONS))

    def clean(self, modality: str, emotion) -> np.ndarray:
        return self.matrices[modality][:, emotion_index(emotion)].copy()

    def sample(self, modality: str, emotion, rng: np.random.Generator) -> np.ndarray:
        return self.clean(modality, emotion) + self.noise * rng.normal(size=self.width)


@dataclass(eq=False)
class GuidancePair:
    modality: str
    vector: np.ndarray
    sample: SynthSample


def make_guidance_pairs(samples, oracle: GuidanceOracle, seed=0, modalities=("text", "image")):
    """One pair per (sample, modality), vector drawn for the sample's emotion."""
    rng = np.random.default_rng(seed)
    return [GuidancePair(m, oracle.sample(m, s.emotion_id, rng), s)
            for s in samples for m in modalities]


# --- manifest I/O ------------------------------------------------------------

def write_dataset(samples, directory, spec: SynthSpec | None = None) -> Path:
    """Write rig + feature files and an ``index.json`` manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        stem = s.clip_id
        files = {
            "rig": f"{stem}.rig.txt",
            "audio_content": f"{stem}.content.txt",
            "audio_emotion": f"{stem}.emotion.txt",
            "text": f"{stem}.text.txt",
        }
        write_rig(s.rig, directory / files["rig"])
        write_features(s.audio_content_features, directory / files["audio_content"])
        write_features(s.pseudo_audio_features, directory / files["audio_emotion"])
        write_features(s.pseudo_text_features, directory / files["text"])
        entries.append({"clip_id": stem, "content_id": s.content_id, "emotion_id": s.emotion_id,
                        "emotion": EMOTIONS[s.emotion_id], "files": files})
    index = {"format_version": 1, "clips": entries}
    if spec is not None:
        d = {k: v for k, v in spec.__dict__.items() if k != "sets"}
        d["sets"] = spec.controller_sets().to_mapping()
        index["spec"] = d
    (directory / "index.json").write_text(json.dumps(index, indent=1) + "\n", encoding="utf-8")
    return directory / "index.json"


def read_dataset(directory, sets: ControllerSets | None = None) -> list[SynthSample]:
    directory = Path(directory)
    try:
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"no dataset manifest at {directory / 'index.json'}") from None
    if index.get("format_version") != 1:
        raise ValidationError(f"unsupported dataset manifest version {index.get('format_version')}")
    if sets is None and "spec" in index:
        sets = ControllerSets.from_mapping(index["spec"]["sets"])
    out = []
    for entry in index["clips"]:
        f = entry["files"]
        rig = read_rig(directory / f["rig"])
        s_sets = sets or ControllerSets.default(rig.controller_count)
        out.append(SynthSample(
            rig=rig,
            content_id=int(entry["content_id"]),
            emotion_id=int(entry["emotion_id"]),
            true_intensity=pseudo_intensity(rig, s_sets),
            pseudo_audio_features=read_features(directory / f["audio_emotion"]),
            pseudo_text_features=read_features(directory / f["text"]),
            audio_content_features=read_features(directory / f["audio_content"]),
        ))
    return out


def spec_from_manifest(directory) -> SynthSpec | None:
    index = json.loads((Path(directory) / "index.json").read_text(encoding="utf-8"))
    if "spec" not in index:
        return None
    d = dict(index["spec"])
    d["sets"] = ControllerSets.from_mapping(d["sets"])
    return replace(SynthSpec(), **d)
