"""Evaluation of trained model sets and the ablation variants."""
from __future__ import annotations

import copy
import logging
import shutil
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ConfigError
from ..metrics import EvalReport, evaluate_pairs
from ..nets import Freezable, FrameConvNet, batches, check_finite, seed_everything, step_optimizer
from ..synthdata import N_EMOTIONS
from . import checkpoint as ck
from .config import RunConfig
from .inference import MEDTalk
from .training import Corpus, build_corpus, train_all

log = logging.getLogger(__name__)

# variant -> (config flag, first stage it changes; 0 = replaces the staged model)
VARIANTS = {
    "wo_overlap": ("no_overlap", 1),
    "wo_cycle": ("no_cycle", 1),
    "wo_disentangle": ("no_disentangle", 0),
    "wo_intensity": ("no_intensity", 3),
    "wo_text": ("no_text", 3),
}


def variant_name(name: str) -> str:
    key = name.strip().lower().replace("w/o", "wo").replace("-", "_").replace(" ", "_")
    key = {"no_" + k[3:]: k for k in VARIANTS}.get(key, key)
    if key not in VARIANTS:
        raise ConfigError(f"unknown ablation variant {name!r}; valid: {', '.join(VARIANTS)}")
    return key


def evaluate_model(model: MEDTalk, samples, guidance=None) -> EvalReport:
    """Generation for every sample (label guidance by default) against its ground-truth rig."""
    rows = [(s.clip_id, model.generate_sample(s, guidance).values, s.rig.values) for s in samples]
    return evaluate_pairs(rows, model.sets)


class EndToEndModel(Freezable):
    """Audio features + emotion label straight to rig values, no latent anchor."""

    def __init__(self, content_dim, emotion_dim, dims, hidden=256, label_dim=16):
        super().__init__()
        self.labels = torch.nn.Embedding(N_EMOTIONS, label_dim)
        self.net = FrameConvNet(content_dim + emotion_dim + label_dim, hidden, dims)

    def forward(self, content, emotion, ids):
        lab = self.labels(ids)[:, None, :].expand(-1, content.shape[1], -1)
        return self.net(torch.cat([content, emotion, lab], dim=-1))


def _stack(samples, attr):
    return torch.tensor(np.stack([getattr(s, attr).values for s in samples]), dtype=torch.float32)


def train_end_to_end(cfg: RunConfig, corpus: Corpus) -> EndToEndModel:
    rng = seed_everything(cfg.seed)
    tr = corpus.train
    content, emotion, rig = _stack(tr, "audio_content_features"), _stack(tr, "pseudo_audio_features"), _stack(tr, "rig")
    ids = torch.as_tensor([s.emotion_id for s in tr])
    model = EndToEndModel(content.shape[-1], emotion.shape[-1], rig.shape[-1], cfg.model.acm_hidden)
    sched_cfg = cfg.acm
    epochs = cfg.acm.epochs + cfg.fim.epochs
    opt, sched = step_optimizer(model.trainable_parameters(), sched_cfg.learning_rate, sched_cfg.decay_rate,
                                sched_cfg.step_size)
    model.train()
    for _ in range(epochs):
        for idx in batches(len(tr), sched_cfg.batch_size, rng):
            loss = F.mse_loss(model(content[idx], emotion[idx], ids[idx]), rig[idx])
            check_finite(loss, "e2e")
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
    return model.freeze()


def _variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    flag, _ = VARIANTS[variant]
    v = copy.deepcopy(cfg)
    setattr(v.ablation, flag, True)
    v.checkpoint_dir = str(Path(cfg.checkpoint_dir) / "ablations" / variant)
    return v


def run_ablation(cfg: RunConfig, variant: str, corpus: Corpus | None = None, progress=None) -> EvalReport:
    """Retrain from the first stage the variant touches and evaluate label-guided output.

    Stages before that are reused from the base run (trained if missing).
    Guidance projection (stage 4) does not take part in label-guided
    evaluation, so every variant stops after stage 3.
    """
    variant = variant_name(variant)
    flag, first = VARIANTS[variant]
    corpus = corpus or build_corpus(cfg)
    vcfg = _variant_config(cfg, variant)

    if first == 0:
        model = train_end_to_end(vcfg, corpus)
        te = corpus.test
        with torch.no_grad():
            out = model(_stack(te, "audio_content_features"), _stack(te, "pseudo_audio_features"),
                        torch.as_tensor([s.emotion_id for s in te])).double().numpy()
        return evaluate_pairs([(s.clip_id, o, s.rig.values) for s, o in zip(te, out)], corpus.sets)

    ckpts = derive_run(cfg, vcfg, first, corpus, progress)
    return evaluate_model(MEDTalk(ckpts, corpus.sets), corpus.test)


def derive_run(base: RunConfig, derived: RunConfig, first: int, corpus: Corpus, progress=None,
               last: int = 3) -> ck.CheckpointSet:
    """Train ``derived`` through ``last``, copying stages before ``first`` from the base run."""
    if Path(derived.checkpoint_dir).resolve() == Path(base.checkpoint_dir).resolve():
        raise ConfigError("a derived run needs its own checkpoint directory")
    if first > 1:
        train_all(base, stages=tuple(range(1, first)), corpus=corpus, progress=progress)
        dst = Path(derived.checkpoint_dir)
        for s in range(1, first):
            target = ck.stage_dir(dst, s)
            if target.exists():
                shutil.rmtree(target)
            shutil.copytree(ck.stage_dir(base.checkpoint_dir, s), target)
    return train_all(derived, stages=tuple(range(1, last + 1)), corpus=corpus, progress=progress)


def evaluate_base(cfg: RunConfig, corpus: Corpus | None = None, progress=None) -> EvalReport:
    """The full model under the same stage-3 label-guided protocol as the variants."""
    corpus = corpus or build_corpus(cfg)
    ckpts = train_all(cfg, stages=(1, 2, 3), corpus=corpus, progress=progress)
    return evaluate_model(MEDTalk(ckpts, corpus.sets), corpus.test)
