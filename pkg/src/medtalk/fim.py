"""Fusion intensity modeling.

Audio-emotion frames attend over text tokens to predict a frame-wise intensity
curve. A learned per-emotion label vector is rescaled frame by frame so its
L2 norm equals the predicted intensity, and a fusion encoder maps the result
into the frozen emotion embedding space.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .disentangle import AutoencoderBundle, EmbeddingSequence
from .errors import ConfigError, ValidationError
from .nets import (Freezable, FrameConvNet, StageSchedule, as_batch, batches, check_finite,
                   frame_cosine_loss, param_checksum, seed_everything, step_optimizer)
from .rigcore import FeatureStream, IntensityCurve
from .synthdata import N_EMOTIONS

log = logging.getLogger(__name__)

NORM_EPS = 1e-8


class EmotionLabelTable(Freezable):
    def __init__(self, dim, n_emotions=N_EMOTIONS):
        super().__init__()
        self.embeddings = nn.Parameter(torch.randn(n_emotions, dim) / np.sqrt(dim))
        if not torch.all(self.embeddings.norm(dim=1) > NORM_EPS):
            raise RuntimeError("label embedding initialized with zero norm")

    def forward(self, emotion_ids):
        return self.embeddings[emotion_ids]


class CrossModalFusion(Freezable):
    """Audio frames (queries) attend over text tokens (keys/values).

    Attention logits get a learned penalty on squared time distance between the
    frame and the token, so each frame mostly reads the words spoken near it.
    Without text the context vector is zero and the head sees audio only.
    """

    def __init__(self, audio_dim, text_dim, hidden=64, attn_dim=32, kernel=5):
        super().__init__()
        self.audio_dim, self.text_dim, self.hidden, self.attn_dim = audio_dim, text_dim, hidden, attn_dim
        self.audio_in = nn.Linear(audio_dim, hidden)
        self.audio_mix = nn.Conv1d(hidden, hidden, kernel, padding=kernel // 2)
        self.text_in = nn.Linear(text_dim, hidden)
        self.query = nn.Linear(hidden, attn_dim)
        self.key = nn.Linear(hidden, attn_dim)
        self.value = nn.Linear(hidden, hidden)
        # softplus(-2.0) ~ 0.13 per frame^2: a few frames of reach at init
        self.time_penalty = nn.Parameter(torch.tensor(-2.0))
        self.head = nn.Sequential(nn.Linear(2 * hidden, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def config(self):
        return {"audio_dim": self.audio_dim, "text_dim": self.text_dim, "hidden": self.hidden,
                "attn_dim": self.attn_dim}

    def forward(self, audio, text=None, text_times=None, text_mask=None):
        """audio (B,T,ka); text (B,L,kt); text_times (B,L) in frames; text_mask (B,L) True = real token.

        Returns (intensity (B,T) >= 0, attention (B,T,L) or None).
        """
        B, T, _ = audio.shape
        h = F.relu(self.audio_in(audio))
        h = F.relu(self.audio_mix(h.transpose(1, 2)).transpose(1, 2))
        attn = None
        if text is None or text.shape[1] == 0:
            ctx = torch.zeros_like(h)
        else:
            k_in = F.relu(self.text_in(text))
            q, k, v = self.query(h), self.key(k_in), self.value(k_in)
            logits = q @ k.transpose(1, 2) / np.sqrt(self.attn_dim)
            frames = torch.arange(T, dtype=audio.dtype)
            if text_times is None:
                text_times = torch.arange(text.shape[1], dtype=audio.dtype).expand(B, -1)
            dt = frames[None, :, None] - text_times[:, None, :]
            logits = logits - F.softplus(self.time_penalty) * dt ** 2
            if text_mask is not None:
                logits = logits.masked_fill(~text_mask[:, None, :], float("-inf"))
            attn = torch.softmax(logits, dim=-1)
            ctx = attn @ v
        out = self.head(torch.cat([h, ctx], dim=-1)).squeeze(-1)
        return F.softplus(out), attn


def adjust_norm_t(label, intensity):
    """label (B,d), intensity (B,T) -> (B,T,d) with row norms equal to intensity."""
    norm = label.norm(dim=-1, keepdim=True)
    if torch.any(norm <= NORM_EPS):
        raise ValidationError("degenerate emotion embedding (norm ~ 0)")
    unit = label / norm
    return intensity[..., None] * unit[:, None, :]


@dataclass(frozen=True, eq=False)
class DynamicEmotionSequence:
    values: np.ndarray

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class FusedIntensity:
    curve: IntensityCurve
    attention_maps: np.ndarray | None = None


def adjust_norm(label_embedding, curve, eps=NORM_EPS) -> DynamicEmotionSequence:
    """Row t = (curve[t] / ||f||) * f, so every row has L2 norm curve[t]."""
    f = np.asarray(label_embedding, dtype=np.float64)
    values = curve.values if isinstance(curve, IntensityCurve) else np.asarray(curve, dtype=np.float64)
    if f.ndim != 1:
        raise ValidationError("label embedding must be a vector")
    norm = np.linalg.norm(f)
    if not norm > eps:
        raise ValidationError("degenerate emotion embedding (norm ~ 0)")
    if np.any(values < 0):
        raise ValidationError("intensity must be nonnegative")
    return DynamicEmotionSequence(values[:, None] * (f / norm)[None, :])


class FIMModel(nn.Module):
    """Stage-3 parameter groups plus the variant switches they were trained with."""

    def __init__(self, audio_dim, text_dim, emotion_dim, cmf_hidden=64, fuse_hidden=128,
                 use_text=True, use_intensity=True):
        super().__init__()
        self.cmf = CrossModalFusion(audio_dim, text_dim, cmf_hidden)
        self.label_table = EmotionLabelTable(emotion_dim)
        self.fusion_encoder = FusionEncoder(emotion_dim, fuse_hidden)
        self.use_text = use_text
        self.use_intensity = use_intensity

    def config(self):
        return {**{f"cmf_{k}": v for k, v in self.cmf.config().items()},
                "emotion_dim": self.fusion_encoder.dim, "fuse_hidden": self.fusion_encoder.hidden,
                "use_text": self.use_text, "use_intensity": self.use_intensity}

    def checksum(self) -> str:
        return param_checksum(self)

    def freeze(self):
        for m in (self.cmf, self.label_table, self.fusion_encoder):
            m.freeze()
        return self

    def intensity(self, guidance, audio, text=None, times=None, mask=None):
        """Predicted curve (B,T); the static-embedding variant returns ||guidance||."""
        if not self.use_intensity:
            return guidance.norm(dim=-1, keepdim=True).expand(-1, audio.shape[1])
        if not self.use_text:
            text = None
        return self.cmf(audio, text, times, mask)[0]

    def emotion_embedding(self, guidance, intensity, fusion_encoder=None):
        fe = fusion_encoder if fusion_encoder is not None else self.fusion_encoder
        return fe(adjust_norm_t(guidance, intensity))


class FusionEncoder(Freezable):
    def __init__(self, dim, hidden=128):
        super().__init__()
        self.dim, self.hidden = dim, hidden
        self.net = FrameConvNet(dim, hidden, dim)

    def forward(self, x):
        return self.net(x)


def _dtype(m):
    return next(m.parameters()).dtype


def fuse_intensity(cmf: CrossModalFusion, audio_emotion: FeatureStream,
                   text_tokens: FeatureStream | None) -> FusedIntensity:
    if audio_emotion.width != cmf.audio_dim:
        raise ConfigError(f"audio emotion width {audio_emotion.width} != {cmf.audio_dim}")
    dt = _dtype(cmf)
    audio = as_batch(audio_emotion.values, dt)
    text = times = None
    if text_tokens is None or len(text_tokens) == 0:
        log.warning("no text tokens; predicting intensity from audio only")
    else:
        if text_tokens.width != cmf.text_dim:
            raise ConfigError(f"text feature width {text_tokens.width} != {cmf.text_dim}")
        text = as_batch(text_tokens.values, dt)
        times = torch.tensor(text_tokens.frame_times(), dtype=dt)[None]
    with torch.no_grad():
        curve, attn = cmf(audio, text, times)
    return FusedIntensity(IntensityCurve(curve[0].double().numpy(), fps=audio_emotion.fps),
                          None if attn is None else attn[0].double().numpy())


def embed_dynamic(fusion_encoder: FusionEncoder, dyn: DynamicEmotionSequence) -> EmbeddingSequence:
    v = np.asarray(dyn.values)
    if v.ndim != 2 or v.shape[1] != fusion_encoder.dim:
        raise ConfigError(f"dynamic emotion width {v.shape[-1]} != fusion encoder width {fusion_encoder.dim}")
    with torch.no_grad():
        z = fusion_encoder(as_batch(v, _dtype(fusion_encoder)))
    return EmbeddingSequence(z[0].double().numpy(), "emotion")


# --- batching ----------------------------------------------------------------

def pad_tokens(streams, dtype=torch.float32):
    """Pad token streams to a common length -> (values, times, mask)."""
    L = max((len(s) for s in streams), default=0)
    k = streams[0].width if streams else 0
    vals = torch.zeros(len(streams), L, k, dtype=dtype)
    times = torch.zeros(len(streams), L, dtype=dtype)
    mask = torch.zeros(len(streams), L, dtype=torch.bool)
    for i, s in enumerate(streams):
        n = len(s)
        if n:
            vals[i, :n] = torch.tensor(s.values, dtype=dtype)
            times[i, :n] = torch.tensor(s.frame_times(), dtype=dtype)
            mask[i, :n] = True
    return vals, times, mask


def intensity_t(rig, indices):
    return rig[..., indices].abs().sum(-1)


@dataclass
class FIMBatch:
    rig: torch.Tensor
    content: torch.Tensor       # frozen content mapping output
    emotion_target: torch.Tensor  # frozen emotion encoder on ground truth
    audio: torch.Tensor
    text: torch.Tensor
    times: torch.Tensor
    mask: torch.Tensor
    emotion_ids: torch.Tensor

    def __getitem__(self, idx):
        idx = torch.as_tensor(idx)
        return FIMBatch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def prepare_batch(samples, bundle, acm, dtype=torch.float32) -> FIMBatch:
    rig = torch.as_tensor(np.stack([s.rig.values for s in samples]), dtype=dtype)
    feats = torch.as_tensor(np.stack([s.audio_content_features.values for s in samples]), dtype=dtype)
    audio = torch.as_tensor(np.stack([s.pseudo_audio_features.values for s in samples]), dtype=dtype)
    text, times, mask = pad_tokens([s.pseudo_text_features for s in samples], dtype)
    with torch.no_grad():
        content = acm(feats)
        _, emotion_target = bundle.encode_t(rig)
    ids = torch.as_tensor([s.emotion_id for s in samples])
    return FIMBatch(rig, content, emotion_target, audio, text, times, mask, ids)


def fim_loss_terms(model: FIMModel, bundle, batch: FIMBatch, int_indices, guidance=None,
                   fusion_encoder=None):
    """Loss terms shared by stage 3 (label guidance) and stage 4 (projected guidance)."""
    g = model.label_table(batch.emotion_ids) if guidance is None else guidance
    pred_int = model.intensity(g, batch.audio, batch.text, batch.times, batch.mask)
    z_e = model.emotion_embedding(g, pred_int, fusion_encoder)
    out = bundle.decode_t(batch.content, z_e)
    true_int = intensity_t(batch.rig, int_indices)
    return {
        "recon": F.mse_loss(out, batch.rig),
        "sim": frame_cosine_loss(batch.emotion_target, z_e),
        "int": (intensity_t(out, int_indices) - true_int).norm(dim=-1).mean(),
        "direct": (pred_int - true_int).norm(dim=-1).mean(),
    }


@dataclass
class FIMWeights:
    lambda_sim: float = 0.1
    lambda_int: float = 0.1
    lambda_direct: float = 0.0  # optional direct supervision of the predicted curve

    def total(self, terms):
        loss = terms["recon"] + self.lambda_sim * terms["sim"] + self.lambda_int * terms["int"]
        if self.lambda_direct:
            loss = loss + self.lambda_direct * terms["direct"]
        return loss


def train_fim(samples, bundle: AutoencoderBundle, acm, int_indices, schedule: StageSchedule | None = None,
              weights: FIMWeights | None = None, use_text=True, use_intensity=True,
              cmf_hidden=64, fuse_hidden=128, seed=0, progress=None) -> FIMModel:
    """Train the fusion module, label table and fusion encoder; returns them frozen."""
    if not bundle.frozen or not acm.frozen:
        raise ValidationError("stage 3 needs the stage-1 bundle and the content mapping frozen")
    if any(s.true_intensity is None for s in samples):
        raise ValidationError("stage 3 needs intensity targets for every clip")
    schedule = schedule or StageSchedule()
    weights = weights or FIMWeights()
    rng = seed_everything(seed)
    int_indices = torch.as_tensor(list(int_indices))

    s0 = samples[0]
    model = FIMModel(s0.pseudo_audio_features.width, s0.pseudo_text_features.width, bundle.emotion_dim,
                     cmf_hidden, fuse_hidden, use_text=use_text, use_intensity=use_intensity)
    data = prepare_batch(samples, bundle, acm)
    params = model.label_table.trainable_parameters() + model.fusion_encoder.trainable_parameters()
    if use_intensity:
        params += model.cmf.trainable_parameters()
    opt, sched = step_optimizer(params, schedule.learning_rate, schedule.decay_rate, schedule.step_size)
    model.train()
    model.train_log = []
    for epoch in range(schedule.epochs):
        total = 0.0
        for idx in batches(len(samples), schedule.batch_size, rng):
            terms = fim_loss_terms(model, bundle, data[idx], int_indices)
            loss = weights.total(terms)
            check_finite(loss, "3:fim")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        sched.step()
        model.train_log.append(total / len(samples))
        if progress:
            progress("stage3/fim", epoch, model.train_log[-1])
    log.info("stage 3 done: loss %.6g", model.train_log[-1] if model.train_log else float("nan"))
    return model.freeze()


def copy_unfrozen(module):
    """Deep copy of a frozen module with gradients and loading re-enabled."""
    m = copy.deepcopy(module)
    m._frozen = False
    for p in m.parameters():
        p.requires_grad_(True)
    return m
