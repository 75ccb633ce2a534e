"""Text / image guidance projected into the emotion-label space.

Frozen upstream encoders produce fixed-width vectors; per-modality projection
heads map them to the same width as the label embeddings, after which the
generation path is identical to label guidance.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ParseError, ValidationError
from .fim import FIMModel, copy_unfrozen, fim_loss_terms, prepare_batch
from .nets import (Freezable, StageSchedule, batches, check_finite, param_checksum, seed_everything,
                   step_optimizer)
from .synthdata import GuidancePair

log = logging.getLogger(__name__)

MODALITIES = ("text", "image")


@dataclass(frozen=True, eq=False)
class GuidanceEmbedding:
    vector: np.ndarray
    modality: str

    def __post_init__(self):
        if self.modality not in ("text", "image", "label"):
            raise ValidationError(f"unknown guidance modality {self.modality!r}")
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or not np.linalg.norm(v) > 0:
            raise ValidationError("guidance embedding must be a vector with positive norm")
        object.__setattr__(self, "vector", v)


class ProjectionHead(Freezable):
    def __init__(self, in_dim, out_dim, hidden=128):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, out_dim))

    def forward(self, x):
        return self.net(x)


class GuidanceModel(nn.Module):
    """Stage-4 parameter groups: both projection heads and the tuned fusion encoder."""

    def __init__(self, p_text, p_image, fusion_encoder):
        super().__init__()
        self.p_text = p_text
        self.p_image = p_image
        self.fusion_encoder = fusion_encoder

    def head(self, modality):
        if modality == "text":
            return self.p_text
        if modality == "image":
            return self.p_image
        raise ConfigError(f"no projection head for modality {modality!r}")

    def checksum(self) -> str:
        return param_checksum(self)

    def freeze(self):
        for m in (self.p_text, self.p_image, self.fusion_encoder):
            m.freeze()
        return self


def project_guidance(head: ProjectionHead, encoder_output, modality) -> GuidanceEmbedding:
    v = np.asarray(encoder_output, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != head.in_dim:
        raise ConfigError(f"{modality} encoder output width {v.shape[-1]} != head input width {head.in_dim}")
    dt = next(head.parameters()).dtype
    with torch.no_grad():
        out = head(torch.as_tensor(v, dtype=dt)[None])[0]
    return GuidanceEmbedding(out.double().numpy(), modality)


def train_guidance(pairs, bundle, acm, fim: FIMModel, int_indices, schedule: StageSchedule | None = None,
                   lambda_sim=0.1, head_hidden=128, seed=0, progress=None) -> GuidanceModel:
    """Fit P_text, P_image and a copy of the fusion encoder with L = L_recon + lambda_sim * L_sim.

    Everything from stages 1-3 stays frozen; the projected vector goes through
    the same norm adjustment (with the stage-3 predicted intensity) as a label.
    """
    for name, m in (("autoencoder", bundle), ("content mapping", acm), ("fusion module", fim.cmf),
                    ("label table", fim.label_table), ("fusion encoder", fim.fusion_encoder)):
        if not m.frozen:
            raise ValidationError(f"stage 4 expects the {name} to be frozen")
    if not pairs:
        raise ValidationError("no guidance pairs")
    schedule = schedule or StageSchedule()
    rng = seed_everything(seed)
    int_indices = torch.as_tensor(list(int_indices))

    widths = {m: {len(p.vector) for p in pairs if p.modality == m} for m in MODALITIES}
    for m, w in widths.items():
        if len(w) > 1:
            raise ConfigError(f"{m} guidance vectors have mixed widths {sorted(w)}")
    d = fim.label_table.embeddings.shape[1]
    default_w = next(iter(widths["text"] or widths["image"]))
    model = GuidanceModel(
        ProjectionHead(next(iter(widths["text"]), default_w), d, head_hidden),
        ProjectionHead(next(iter(widths["image"]), default_w), d, head_hidden),
        copy_unfrozen(fim.fusion_encoder),
    )

    data = prepare_batch([p.sample for p in pairs], bundle, acm)
    modality = np.array([p.modality for p in pairs])
    vectors = {m: torch.as_tensor(np.stack([p.vector for p in pairs if p.modality == m]), dtype=torch.float32)
               for m in MODALITIES if widths[m]}
    # position of each pair within its modality's vector stack
    slot = np.zeros(len(pairs), dtype=np.int64)
    for m in MODALITIES:
        where = np.flatnonzero(modality == m)
        slot[where] = np.arange(len(where))

    params = (model.p_text.trainable_parameters() + model.p_image.trainable_parameters()
              + model.fusion_encoder.trainable_parameters())
    opt, sched = step_optimizer(params, schedule.learning_rate, schedule.decay_rate, schedule.step_size)
    model.train()
    model.train_log = []
    d_out = d
    for epoch in range(schedule.epochs):
        total = 0.0
        for idx in batches(len(pairs), schedule.batch_size, rng):
            g = torch.zeros(len(idx), d_out)
            for m in MODALITIES:
                sel = np.flatnonzero(modality[idx] == m)
                if len(sel):
                    g = g.index_copy(0, torch.as_tensor(sel), model.head(m)(vectors[m][slot[idx[sel]]]))
            terms = fim_loss_terms(fim, bundle, data[idx], int_indices, guidance=g,
                                   fusion_encoder=model.fusion_encoder)
            loss = terms["recon"] + lambda_sim * terms["sim"]
            check_finite(loss, "4:guidance")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        sched.step()
        model.train_log.append(total / len(pairs))
        if progress:
            progress("stage4/guidance", epoch, model.train_log[-1])
    log.info("stage 4 done: loss %.6g", model.train_log[-1] if model.train_log else float("nan"))
    return model.freeze()


# --- guidance vector files ----------------------------------------------------

def write_guidance_vector(vector, path) -> None:
    """``width=<k>`` header line, then the k floats on one line."""
    v = np.asarray(vector, dtype=np.float64).ravel()
    Path(path).write_text(f"width={len(v)}\n" + " ".join(f"{x:.10g}" for x in v) + "\n", encoding="utf-8")


def read_guidance_vector(path) -> np.ndarray:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise FileNotFoundError(f"guidance vector file not found: {path}") from None
    if not lines or not lines[0].strip():
        raise ParseError("missing header", path, 1)
    key, _, val = lines[0].strip().partition("=")
    if key != "width" or not val.strip().isdigit():
        raise ParseError(f"malformed header {lines[0].strip()!r}, expected width=<int>", path, 1)
    width = int(val)
    try:
        v = np.array([float(x) for line in lines[1:] for x in line.split()])
    except ValueError as e:
        raise ParseError(f"bad value: {e}", path) from None
    if len(v) != width:
        raise ParseError(f"header says width={width} but found {len(v)} values", path)
    if not np.all(np.isfinite(v)):
        raise ParseError("non-finite value", path)
    return v


def write_guidance_manifest(pairs, directory, rig_files: dict) -> Path:
    """Write every pair's vector and ``guidance.json`` listing (modality, vector, rig)."""
    directory = Path(directory)
    (directory / "guidance").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, p in enumerate(pairs):
        name = f"guidance/{p.sample.clip_id}.{p.modality}.{i:05d}.vec.txt"
        write_guidance_vector(p.vector, directory / name)
        entries.append({"modality": p.modality, "vector": name, "rig": rig_files[p.sample.clip_id],
                        "clip_id": p.sample.clip_id})
    path = directory / "guidance.json"
    path.write_text(json.dumps({"format_version": 1, "pairs": entries}, indent=1) + "\n", encoding="utf-8")
    return path


def read_guidance_manifest(directory, samples) -> list[GuidancePair]:
    """Pairs from ``guidance.json``; rigs are matched to ``samples`` by clip id."""
    directory = Path(directory)
    index = json.loads((directory / "guidance.json").read_text(encoding="utf-8"))
    if index.get("format_version") != 1:
        raise ValidationError(f"unsupported guidance manifest version {index.get('format_version')}")
    by_id = {s.clip_id: s for s in samples}
    out = []
    for e in index["pairs"]:
        if e["modality"] not in MODALITIES:
            raise ValidationError(f"unknown guidance modality {e['modality']!r} in manifest")
        if e["clip_id"] in by_id:
            out.append(GuidancePair(e["modality"], read_guidance_vector(directory / e["vector"]), by_id[e["clip_id"]]))
    return out
