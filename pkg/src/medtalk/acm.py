"""Audio content mapping: speech-content features -> frozen content embedding space."""
from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn.functional as F

from .disentangle import AutoencoderBundle, EmbeddingSequence
from .errors import ConfigError, ValidationError
from .nets import (Freezable, FrameConvNet, StageSchedule, as_batch, batches, check_finite,
                   frame_cosine_loss, seed_everything, step_optimizer)
from .rigcore import FeatureStream

log = logging.getLogger(__name__)


class ACMModel(Freezable):
    def __init__(self, feature_dim, content_dim=64, hidden=256):
        super().__init__()
        self.feature_dim = feature_dim
        self.content_dim = content_dim
        self.hidden = hidden
        self.net = FrameConvNet(feature_dim, hidden, content_dim)

    def config(self):
        return {"feature_dim": self.feature_dim, "content_dim": self.content_dim, "hidden": self.hidden}

    def forward(self, feats):
        return self.net(feats)


def map_content(model: ACMModel, feats: FeatureStream) -> EmbeddingSequence:
    if len(feats) < 1:
        raise ValidationError("audio content features are empty (need T >= 1)")
    if feats.width != model.feature_dim:
        raise ConfigError(f"feature width {feats.width} != model input width {model.feature_dim}")
    dt = next(model.parameters()).dtype
    with torch.no_grad():
        z = model(as_batch(feats.values, dt))
    return EmbeddingSequence(z[0].double().numpy(), "content")


def sim_loss(target, pred):
    """1 - frame-averaged cosine between two embedding sequences."""
    return frame_cosine_loss(target, pred)


def _stack(samples, attr, dtype=torch.float32):
    return torch.as_tensor(np.stack([getattr(s, attr).values for s in samples]), dtype=dtype)


def acm_loss_terms(model, bundle, feats, rig, content_target, emotion_emb):
    """Reconstruction through the frozen decoder plus content similarity."""
    z = model(feats)
    recon = F.mse_loss(bundle.decode_t(z, emotion_emb), rig)
    return {"recon": recon, "sim": sim_loss(content_target, z)}


def train_acm(samples, bundle: AutoencoderBundle, schedule: StageSchedule | None = None,
              lambda_sim=0.1, hidden=256, seed=0, progress=None) -> ACMModel:
    """Fit the mapping with L = L_recon + lambda_sim * L_sim; returns it frozen."""
    if not bundle.frozen:
        raise ValidationError("content mapping trains against a frozen autoencoder; freeze stage 1 first")
    schedule = schedule or StageSchedule()
    rng = seed_everything(seed)
    lengths = {(len(s.rig), len(s.audio_content_features)) for s in samples}
    if any(a != b for a, b in lengths):
        raise ValidationError("audio content features must be resampled to the rig frame count")

    rig = _stack(samples, "rig")
    feats = _stack(samples, "audio_content_features")
    with torch.no_grad():
        content_target, emotion_emb = bundle.encode_t(rig)

    model = ACMModel(feats.shape[-1], bundle.content_dim, hidden)
    opt, sched = step_optimizer(model.trainable_parameters(), schedule.learning_rate,
                                schedule.decay_rate, schedule.step_size)
    model.train()
    model.train_log = []
    for epoch in range(schedule.epochs):
        total = 0.0
        for idx in batches(len(samples), schedule.batch_size, rng):
            terms = acm_loss_terms(model, bundle, feats[idx], rig[idx], content_target[idx], emotion_emb[idx])
            loss = terms["recon"] + lambda_sim * terms["sim"]
            check_finite(loss, "2:acm")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        sched.step()
        model.train_log.append(total / len(samples))
        if progress:
            progress("stage2/acm", epoch, model.train_log[-1])
    log.info("stage 2 done: loss %.6g", model.train_log[-1] if model.train_log else float("nan"))
    return model.freeze()
