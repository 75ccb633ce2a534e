"""Content / emotion motion autoencoder trained by feature exchange.

Two encoders map a rig sequence to per-frame content and emotion embeddings;
a decoder maps their concatenation back to rig values. Training runs three
phases in order, all supervised by the rig MSE alone:

* self      -- reconstruct each sample from its own embeddings
* overlap   -- for pairs sharing content (or emotion), swap the shared factor's
               embedding and reconstruct both samples
* cycle     -- cross-decode an arbitrary pair, then cross-decode the two results
               again; both the intermediate and round-trip outputs are scored
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, FrozenError, ValidationError
from .nets import (Freezable, FrameConvNet, as_batch, batches, check_finite, seed_everything,
                   step_optimizer)
from .rigcore import RigSequence

log = logging.getLogger(__name__)

PHASES = ("self", "overlap", "cycle")
# stage 1 has exactly one loss term; trainers refuse anything else
STAGE1_LOSS_TERMS = ("recon",)


@dataclass(frozen=True, eq=False)
class EmbeddingSequence:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("content", "emotion"):
            raise ValidationError(f"embedding kind must be 'content' or 'emotion', got {self.kind!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValidationError("embedding values must be a finite T x d matrix")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]


class AutoencoderBundle(Freezable):
    def __init__(self, dims=174, content_dim=64, emotion_dim=64, hidden=128, fps=30):
        super().__init__()
        self.dims = dims
        self.content_dim = content_dim
        self.emotion_dim = emotion_dim
        self.hidden = hidden
        self.fps = fps
        self.content_encoder = FrameConvNet(dims, hidden, content_dim)
        self.emotion_encoder = FrameConvNet(dims, hidden, emotion_dim)
        # decoder input is [content, emotion]
        self.decoder = FrameConvNet(content_dim + emotion_dim, hidden, dims)
        self.phase_log = []

    def config(self):
        return {"dims": self.dims, "content_dim": self.content_dim, "emotion_dim": self.emotion_dim,
                "hidden": self.hidden, "fps": self.fps}

    def encode_t(self, x):
        return self.content_encoder(x), self.emotion_encoder(x)

    def decode_t(self, content, emotion):
        return self.decoder(torch.cat([content, emotion], dim=-1))

    def forward(self, x):
        return self.decode_t(*self.encode_t(x))


def _dtype(module):
    return next(module.parameters()).dtype


def encode(bundle: AutoencoderBundle, rig: RigSequence):
    if rig.controller_count != bundle.dims:
        raise ConfigError(f"rig has {rig.controller_count} controllers, bundle expects {bundle.dims}")
    with torch.no_grad():
        zc, ze = bundle.encode_t(as_batch(rig.values, _dtype(bundle)))
    return (EmbeddingSequence(zc[0].double().numpy(), "content"),
            EmbeddingSequence(ze[0].double().numpy(), "emotion"))


def decode(bundle: AutoencoderBundle, content: EmbeddingSequence, emotion: EmbeddingSequence) -> RigSequence:
    if content.kind != "content" or emotion.kind != "emotion":
        raise ValidationError("decode expects (content, emotion) embeddings in that order")
    if len(content) != len(emotion):
        raise ValidationError(f"embedding lengths differ: {len(content)} vs {len(emotion)}")
    for z, width in ((content, bundle.content_dim), (emotion, bundle.emotion_dim)):
        if z.values.shape[1] != width:
            raise ConfigError(f"{z.kind} embedding width {z.values.shape[1]} != {width}")
    dt = _dtype(bundle)
    with torch.no_grad():
        out = bundle.decode_t(as_batch(content.values, dt), as_batch(emotion.values, dt))
    return RigSequence(out[0].double().numpy(), fps=bundle.fps)


def swap_emotion(bundle: AutoencoderBundle, rig_a: RigSequence, rig_b: RigSequence):
    """Decode (content_a, emotion_b) and (content_b, emotion_a)."""
    if not bundle.frozen:
        raise FrozenError("swap_emotion needs a frozen (trained) bundle")
    if len(rig_a) != len(rig_b):
        raise ValidationError(f"sequences must have equal length to swap per frame ({len(rig_a)} vs {len(rig_b)})")
    ca, ea = encode(bundle, rig_a)
    cb, eb = encode(bundle, rig_b)
    return decode(bundle, ca, eb), decode(bundle, cb, ea)


# --- exchange algebra (tensors, batched) -------------------------------------

def self_reconstruct(bundle, x):
    return bundle(x)


def overlap_exchange(bundle, x1, x2, shared="content"):
    """Swap the shared factor's embeddings; returns reconstructions of (x1, x2)."""
    c1, e1 = bundle.encode_t(x1)
    c2, e2 = bundle.encode_t(x2)
    if shared == "content":
        return bundle.decode_t(c2, e1), bundle.decode_t(c1, e2)
    if shared == "emotion":
        return bundle.decode_t(c1, e2), bundle.decode_t(c2, e1)
    raise ValueError(f"shared must be 'content' or 'emotion', got {shared!r}")


def cycle_exchange(bundle, x1, x2):
    """Two rounds of cross decoding.

    Returns (x_e1c2, x_e2c1, x_e1c1, x_e2c2): the two cross products and the
    two round-trip reconstructions of x1 and x2.
    """
    c1, e1 = bundle.encode_t(x1)
    c2, e2 = bundle.encode_t(x2)
    x_e1c2 = bundle.decode_t(c2, e1)
    x_e2c1 = bundle.decode_t(c1, e2)
    ca, ea = bundle.encode_t(x_e1c2)
    cb, eb = bundle.encode_t(x_e2c1)
    x_e1c1 = bundle.decode_t(cb, ea)
    x_e2c2 = bundle.decode_t(ca, eb)
    return x_e1c2, x_e2c1, x_e1c1, x_e2c2


# --- training ----------------------------------------------------------------

@dataclass
class Stage1Schedule:
    epochs_self: int = 50
    epochs_overlap: int = 50
    epochs_cycle: int = 50
    learning_rate: float = 1e-4
    decay_rate: float = 0.995
    step_size: int = 10
    batch_size: int = 8
    content_weight_decay: float = 0.0
    phases: tuple = PHASES

    def epochs(self, phase):
        return {"self": self.epochs_self, "overlap": self.epochs_overlap, "cycle": self.epochs_cycle}[phase]


class _Corpus:
    """Stacked rig tensor plus (content, emotion) lookups for pair sampling."""

    def __init__(self, samples, dtype=torch.float32):
        if not samples:
            raise ValidationError("empty dataset")
        shapes = {s.rig.values.shape for s in samples}
        if len(shapes) != 1:
            raise ValidationError(f"exchange training needs equal-length aligned sequences, got shapes {sorted(shapes)}")
        self.x = torch.as_tensor(np.stack([s.rig.values for s in samples]), dtype=dtype)
        self.content = np.array([s.content_id for s in samples])
        self.emotion = np.array([s.emotion_id for s in samples])
        self.lookup = {(int(c), int(e)): i for i, (c, e) in enumerate(zip(self.content, self.emotion))}
        self.by_content = defaultdict(list)
        self.by_emotion = defaultdict(list)
        for i, (c, e) in enumerate(zip(self.content, self.emotion)):
            self.by_content[int(c)].append(i)
            self.by_emotion[int(e)].append(i)

    def __len__(self):
        return len(self.content)

    def validate(self, phases):
        if "overlap" in phases:
            if not any(len(v) > 1 for v in self.by_content.values()):
                raise ValidationError("overlap exchange needs same-content groups with several emotions")
            if not any(len(v) > 1 for v in self.by_emotion.values()):
                raise ValidationError("overlap exchange needs same-emotion groups with several contents")
        if "cycle" in phases:
            contents, emotions = set(self.by_content), set(self.by_emotion)
            missing = [(c, e) for c in contents for e in emotions if (c, e) not in self.lookup]
            if missing:
                raise ValidationError(f"cycle exchange needs every content x emotion clip; missing {missing[:3]}")

    def partner(self, i, group, rng):
        key = int(self.content[i]) if group == "content" else int(self.emotion[i])
        pool = (self.by_content if group == "content" else self.by_emotion)[key]
        others = [j for j in pool if j != i]
        return int(rng.choice(others)) if others else int(i)


def _phase_loss(phase, bundle, corpus, idx, rng):
    x = corpus.x[idx]
    if phase == "self":
        return {"recon": F.mse_loss(self_reconstruct(bundle, x), x)}
    if phase == "overlap":
        half = max(1, len(idx) // 2)
        terms = []
        for sub, group in ((idx[:half], "content"), (idx[half:], "emotion")):
            if len(sub) == 0:
                continue
            p = np.array([corpus.partner(i, group, rng) for i in sub])
            x1, x2 = corpus.x[sub], corpus.x[p]
            r1, r2 = overlap_exchange(bundle, x1, x2, shared=group)
            terms.append((F.mse_loss(r1, x1) + F.mse_loss(r2, x2)) / 2 * len(sub))
        return {"recon": sum(terms) / len(idx)}
    if phase == "cycle":
        p = rng.integers(0, len(corpus), len(idx))
        x1, x2 = x, corpus.x[p]
        c1, e1 = corpus.content[idx], corpus.emotion[idx]
        c2, e2 = corpus.content[p], corpus.emotion[p]
        t12 = corpus.x[[corpus.lookup[(int(c), int(e))] for c, e in zip(c2, e1)]]
        t21 = corpus.x[[corpus.lookup[(int(c), int(e))] for c, e in zip(c1, e2)]]
        outs = cycle_exchange(bundle, x1, x2)
        targets = (t12, t21, x1, x2)
        return {"recon": sum(F.mse_loss(o, t) for o, t in zip(outs, targets)) / 4}
    raise ValueError(phase)


def train_stage1(samples, schedule: Stage1Schedule | None = None, seed=0, content_dim=64,
                 emotion_dim=64, hidden=128, bundle: AutoencoderBundle | None = None, progress=None) -> AutoencoderBundle:
    """Run the enabled exchange phases in order and return a frozen bundle.

    ``bundle.phase_log`` records phase order, epochs and final losses.
    """
    schedule = schedule or Stage1Schedule()
    unknown = [p for p in schedule.phases if p not in PHASES]
    if unknown:
        raise ConfigError(f"unknown stage-1 phases {unknown}; valid: {PHASES}")
    phases = [p for p in PHASES if p in schedule.phases]

    if bundle is not None:
        bundle.trainable_parameters()  # raises on a frozen bundle
    rng = seed_everything(seed)
    corpus = _Corpus(samples)
    corpus.validate(phases)
    if bundle is None:
        bundle = AutoencoderBundle(dims=corpus.x.shape[-1], content_dim=content_dim,
                                   emotion_dim=emotion_dim, hidden=hidden,
                                   fps=samples[0].rig.fps)
    content_params = list(bundle.content_encoder.parameters())
    other_params = list(bundle.emotion_encoder.parameters()) + list(bundle.decoder.parameters())
    bundle.train()

    for phase in phases:
        groups = [{"params": content_params, "weight_decay": schedule.content_weight_decay},
                  {"params": other_params, "weight_decay": 0.0}]
        opt, sched = step_optimizer(groups, schedule.learning_rate, schedule.decay_rate, schedule.step_size)
        epoch_loss = float("nan")
        for epoch in range(schedule.epochs(phase)):
            total = 0.0
            for idx in batches(len(corpus), schedule.batch_size, rng):
                terms = _phase_loss(phase, bundle, corpus, idx, rng)
                if set(terms) != set(STAGE1_LOSS_TERMS):
                    raise RuntimeError(f"stage 1 loss terms {sorted(terms)} != {STAGE1_LOSS_TERMS}")
                loss = sum(terms[k] for k in STAGE1_LOSS_TERMS)
                check_finite(loss, "1:" + phase)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            sched.step()
            epoch_loss = total / len(corpus)
            if progress:
                progress(f"stage1/{phase}", epoch, epoch_loss)
        bundle.phase_log.append({"phase": phase, "epochs": schedule.epochs(phase),
                                 "final_loss": epoch_loss, "terms": list(STAGE1_LOSS_TERMS)})
        log.info("stage 1 %s done: loss %.6g", phase, epoch_loss)
    return bundle.freeze()


def reconstruction_mse(bundle, samples) -> float:
    x = torch.as_tensor(np.stack([s.rig.values for s in samples]), dtype=_dtype(bundle))
    with torch.no_grad():
        return F.mse_loss(bundle(x), x).item()


def embed_corpus(bundle, samples):
    """(content, emotion) embeddings for a list of samples as (N, T, d) arrays."""
    x = torch.as_tensor(np.stack([s.rig.values for s in samples]), dtype=_dtype(bundle))
    with torch.no_grad():
        zc, ze = bundle.encode_t(x)
    return zc.double().numpy(), ze.double().numpy()
