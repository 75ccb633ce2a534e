"""End-to-end generation: audio features + guidance -> rig sequence."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, ValidationError
from ..fim import adjust_norm_t
from ..guidance import read_guidance_vector
from ..nets import as_batch
from ..rigcore import ControllerSets, FeatureStream, RigSequence
from ..synthdata import EMOTIONS, emotion_index
from . import checkpoint as ck
from .adapters import AdapterRegistry, mock_registry

GUIDANCE_KINDS = ("label", "text", "image")


@dataclass(frozen=True, eq=False)
class GuidanceInput:
    """Either an emotion label or an upstream text/image encoder output."""

    kind: str
    label: str | None = None
    vector: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in GUIDANCE_KINDS:
            raise ValidationError(f"guidance kind must be one of {GUIDANCE_KINDS}, got {self.kind!r}")
        if self.kind == "label":
            emotion_index(self.label)
        elif self.vector is None or np.asarray(self.vector).ndim != 1:
            raise ValidationError(f"{self.kind} guidance needs a 1-D encoder vector")

    @classmethod
    def parse(cls, text: str, registry: AdapterRegistry | None = None) -> "GuidanceInput":
        """``label:<name>``, ``text:<vecfile>`` or ``image:<vecfile>``."""
        kind, sep, value = text.partition(":")
        if not sep or not value:
            raise ValidationError(f"guidance {text!r} must look like label:<name>, text:<file> or image:<file>")
        if kind == "label":
            return cls("label", label=value)
        if kind not in GUIDANCE_KINDS:
            raise ValidationError(f"guidance kind must be one of {GUIDANCE_KINDS}, got {kind!r}")
        if registry is not None:
            vec = registry[f"guidance_{kind}_encoder"](value)
        else:
            vec = read_guidance_vector(value)
        return cls(kind, vector=np.asarray(vec, dtype=np.float64))


class MEDTalk:
    """Loaded, frozen model set. Reentrant: generation never mutates state."""

    def __init__(self, ckpts: ck.CheckpointSet, sets: ControllerSets | None = None):
        for name in ("bundle", "acm", "fim"):
            if getattr(ckpts, name) is None:
                raise ConfigError(f"model set is missing its {name}")
        self.ckpts = ckpts
        self.bundle, self.acm, self.fim, self.guidance = ckpts.bundle, ckpts.acm, ckpts.fim, ckpts.guidance
        self.sets = sets or ControllerSets.default(self.bundle.dims)

    @classmethod
    def load(cls, root, sets=None, require_guidance=True) -> "MEDTalk":
        stages = (1, 2, 3, 4) if require_guidance else (1, 2, 3)
        return cls(ck.CheckpointSet.load(root, stages), sets)

    @property
    def fusion_encoder(self):
        # one fusion encoder for every guidance source, the tuned one once stage 4 exists
        return self.guidance.fusion_encoder if self.guidance is not None else self.fim.fusion_encoder

    def guidance_vector(self, g: GuidanceInput) -> torch.Tensor:
        if g.kind == "label":
            return self.fim.label_table.embeddings[emotion_index(g.label)].detach()
        if self.guidance is None:
            raise ConfigError(f"{g.kind} guidance needs the stage 4 (guidance) checkpoint")
        head = self.guidance.head(g.kind)
        v = np.asarray(g.vector, dtype=np.float64)
        if v.shape[0] != head.in_dim:
            raise ConfigError(f"{g.kind} guidance width {v.shape[0]} != head input width {head.in_dim}")
        with torch.no_grad():
            out = head(torch.tensor(v, dtype=torch.float32)[None])[0]
        if not out.norm() > 0:
            raise ValidationError("projected guidance vector has zero norm")
        return out

    def _check(self, content, emotion, tokens):
        if len(content) != len(emotion):
            raise ValidationError(f"audio content has {len(content)} frames but audio emotion has {len(emotion)}")
        if content.width != self.acm.feature_dim:
            raise ConfigError(f"audio content width {content.width} != model width {self.acm.feature_dim}")
        if emotion.width != self.fim.cmf.audio_dim:
            raise ConfigError(f"audio emotion width {emotion.width} != model width {self.fim.cmf.audio_dim}")
        if tokens is not None and len(tokens) and tokens.width != self.fim.cmf.text_dim:
            raise ConfigError(f"text token width {tokens.width} != model width {self.fim.cmf.text_dim}")

    def generate(self, content: FeatureStream, emotion: FeatureStream, tokens: FeatureStream | None,
                 guidance: GuidanceInput, details=False):
        """Rig sequence with one frame per audio frame; ``details`` adds (intensity, embedding)."""
        self._check(content, emotion, tokens)
        with torch.no_grad():
            z_c = self.acm(as_batch(content.values))
            g = self.guidance_vector(guidance)[None]
            text = times = None
            if tokens is not None and len(tokens):
                text = as_batch(tokens.values)
                times = torch.tensor(tokens.frame_times(), dtype=torch.float32)[None]
            curve = self.fim.intensity(g, as_batch(emotion.values), text, times)
            z_e = self.fusion_encoder(adjust_norm_t(g, curve))
            out = self.bundle.decode_t(z_c, z_e)[0].double().numpy()
        rig = RigSequence(out, fps=content.fps)
        if details:
            return rig, curve[0].double().numpy(), z_e[0].double().numpy()
        return rig

    def generate_sample(self, sample, guidance: GuidanceInput | None = None, details=False):
        guidance = guidance or GuidanceInput("label", label=EMOTIONS[sample.emotion_id])
        return self.generate(sample.audio_content_features, sample.pseudo_audio_features,
                             sample.pseudo_text_features, guidance, details)

    def intensity_csv(self, sample, guidance: GuidanceInput | None = None) -> str:
        """Per-frame diagnostic: predicted curve and pseudo-intensity of output and ground truth."""
        rig, curve, _ = self.generate_sample(sample, guidance, details=True)
        idx = list(self.sets.intensity)
        gt = np.abs(sample.rig.values[:, idx]).sum(axis=1)
        pred = np.abs(rig.values[:, idx]).sum(axis=1)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "predicted_intensity", "int_gt", "int_pred"])
        for t in range(len(rig)):
            w.writerow([t, f"{curve[t]:.8g}", f"{gt[t]:.8g}", f"{pred[t]:.8g}"])
        return buf.getvalue()


def infer(audio, guidance: GuidanceInput, checkpoints, registry: AdapterRegistry | None = None,
          sets=None) -> RigSequence:
    """Run the adapters on ``audio`` (a feature-file stem for the mocks) and generate."""
    model = checkpoints if isinstance(checkpoints, MEDTalk) else MEDTalk.load(checkpoints, sets)
    if registry is None:
        registry = mock_registry(audio)
    registry.validate({"audio_content": model.acm.feature_dim, "audio_emotion": model.fim.cmf.audio_dim,
                       "text_encoder": model.fim.cmf.text_dim})
    content, emotion, tokens = registry.audio_streams(audio, model.bundle.fps)
    return model.generate(content, emotion, tokens, guidance)


def write_text(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
