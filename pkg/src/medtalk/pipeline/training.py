"""Four-stage training driver with checkpoint-based resume."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from ..acm import train_acm
from ..disentangle import train_stage1
from ..errors import CheckpointError, ConfigError, DivergenceError
from ..fim import train_fim
from ..guidance import read_guidance_manifest, train_guidance
from ..rigcore import ControllerSets
from ..synthdata import (GuidanceOracle, generate_dataset, make_guidance_pairs, read_dataset,
                         split_by_content)
from . import checkpoint as ck
from .config import RunConfig

log = logging.getLogger(__name__)

STAGES = (1, 2, 3, 4)


@dataclass
class Corpus:
    train: list
    test: list
    sets: ControllerSets
    pairs: list                 # guidance pairs drawn from the training split
    oracle: GuidanceOracle | None


def build_corpus(cfg: RunConfig) -> Corpus:
    sets = cfg.sets()
    d = cfg.data
    oracle = None
    if d.directory:
        samples = read_dataset(d.directory, sets)
    else:
        samples = generate_dataset(d.synth_spec(cfg.seed, sets))
    train, test = split_by_content(samples, d.test_fraction, cfg.seed)
    if d.directory and (Path(d.directory) / "guidance.json").exists():
        pairs = read_guidance_manifest(d.directory, train)
    else:
        oracle = GuidanceOracle(d.guidance_width, cfg.seed, d.guidance_noise)
        pairs = make_guidance_pairs(train, oracle, seed=cfg.seed + 1)
    return Corpus(train, test, sets, pairs, oracle)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def fingerprints(cfg: RunConfig) -> dict:
    """Per-stage hash of every setting that stage (and its upstream) depends on."""
    m, a = cfg.model, cfg.ablation
    f1 = _digest({"seed": cfg.seed, "data": asdict(cfg.data), "sets": cfg.sets().to_mapping(),
                  "stage1": asdict(cfg.stage1), "phases": a.phases(),
                  "dims": [m.content_dim, m.emotion_dim, m.hidden]})
    f2 = _digest({"up": f1, "acm": asdict(cfg.acm), "hidden": m.acm_hidden, "lambda_sim": cfg.weights.lambda_sim})
    f3 = _digest({"up": f2, "fim": asdict(cfg.fim), "weights": asdict(cfg.weights),
                  "hidden": [m.cmf_hidden, m.fuse_hidden], "no_text": a.no_text, "no_intensity": a.no_intensity})
    f4 = _digest({"up": f3, "guidance": asdict(cfg.guidance), "hidden": m.head_hidden,
                  "lambda_sim": cfg.weights.lambda_sim})
    return {1: f1, 2: f2, 3: f3, 4: f4}


def _train_stage(stage, cfg: RunConfig, corpus: Corpus, ckpts: ck.CheckpointSet, progress):
    """Train one stage; returns (modules to save, extra metadata, final loss)."""
    m, seed = cfg.model, cfg.seed
    int_idx = list(corpus.sets.intensity)
    if stage == 1:
        b = train_stage1(corpus.train, cfg.stage1.schedule(cfg.ablation.phases()), seed=seed,
                         content_dim=m.content_dim, emotion_dim=m.emotion_dim, hidden=m.hidden, progress=progress)
        ckpts.bundle = b
        final = b.phase_log[-1]["final_loss"] if b.phase_log else float("nan")
        return {"bundle": b}, {"modules": {"bundle": b.config()}, "phase_log": b.phase_log}, final
    if stage == 2:
        a = train_acm(corpus.train, ckpts.bundle, cfg.acm.schedule(), lambda_sim=cfg.weights.lambda_sim,
                      hidden=m.acm_hidden, seed=seed, progress=progress)
        ckpts.acm = a
        return {"acm": a}, {"modules": {"acm": a.config()}, "train_log": a.train_log}, a.train_log[-1]
    if stage == 3:
        f = train_fim(corpus.train, ckpts.bundle, ckpts.acm, int_idx, cfg.fim.schedule(), cfg.weights.fim(),
                      use_text=not cfg.ablation.no_text, use_intensity=not cfg.ablation.no_intensity,
                      cmf_hidden=m.cmf_hidden, fuse_hidden=m.fuse_hidden, seed=seed, progress=progress)
        ckpts.fim = f
        return {"fim": f}, {"modules": {"fim": f.config()}, "train_log": f.train_log}, f.train_log[-1]
    g = train_guidance(corpus.pairs, ckpts.bundle, ckpts.acm, ckpts.fim, int_idx, cfg.guidance.schedule(),
                       lambda_sim=cfg.weights.lambda_sim, head_hidden=m.head_hidden, seed=seed, progress=progress)
    ckpts.guidance = g
    return {"guidance": g}, {"modules": {"guidance": ck.guidance_config(g)}, "train_log": g.train_log}, g.train_log[-1]


_LOADERS = {1: ("bundle", ck.load_bundle), 2: ("acm", ck.load_acm), 3: ("fim", ck.load_fim),
            4: ("guidance", ck.load_guidance)}


def train_all(cfg: RunConfig, stages=STAGES, resume=True, corpus: Corpus | None = None,
              progress=None) -> ck.CheckpointSet:
    """Train ``stages`` in order, persisting each; earlier stages are loaded from disk.

    With ``resume`` a stage whose checkpoint fingerprint matches the config is
    loaded instead of retrained. A non-finite loss aborts with the stage named;
    checkpoints of completed stages stay on disk.
    """
    if cfg.ablation.no_disentangle:
        raise ConfigError("no_disentangle replaces the staged model; run it through run_ablation")
    unknown = sorted(set(stages) - set(STAGES))
    if unknown:
        raise ConfigError(f"unknown stage(s) {unknown}; valid: {list(STAGES)}")
    torch.set_num_threads(cfg.threads)
    root = Path(cfg.checkpoint_dir)
    fps = fingerprints(cfg)
    ckpts = ck.CheckpointSet(root)
    last = max(stages)
    for stage in STAGES:
        if stage > last:
            break
        name, loader = _LOADERS[stage]
        if stage not in stages or (resume and ck.has_stage(root, stage, fps[stage])):
            if stage not in stages and not ck.has_stage(root, stage):
                raise CheckpointError(f"stage {stage} ({ck.STAGE_NAMES[stage]}) checkpoint missing at "
                                      f"{ck.stage_dir(root, stage)}; train it first")
            setattr(ckpts, name, loader(root))
            if stage in stages:
                ck.append_stage_log(root, {"stage": stage, "name": ck.STAGE_NAMES[stage], "status": "skipped",
                                           "fingerprint": fps[stage], "ablation": cfg.ablation.active()})
                log.info("stage %d: matching checkpoint found, skipping", stage)
            continue
        corpus = corpus or build_corpus(cfg)
        try:
            modules, meta, final = _train_stage(stage, cfg, corpus, ckpts, progress)
        except DivergenceError as e:
            ck.append_stage_log(root, {"stage": stage, "name": ck.STAGE_NAMES[stage], "status": "diverged",
                                       "error": str(e), "ablation": cfg.ablation.active()})
            raise
        meta.update(fingerprint=fps[stage], seed=cfg.seed, ablation=cfg.ablation.active())
        ck.save_stage(root, stage, modules, meta)
        ck.append_stage_log(root, {"stage": stage, "name": ck.STAGE_NAMES[stage], "status": "trained",
                                   "fingerprint": fps[stage], "final_loss": final,
                                   "ablation": cfg.ablation.active()})
    return ckpts
