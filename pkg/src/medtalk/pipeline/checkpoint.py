"""Versioned checkpoint directory.

Layout::

    <root>/stage_log.json
    <root>/stage1/params.pt    state dicts keyed by module name
    <root>/stage1/meta.json    format_version, module configs, checksums, fingerprint
    <root>/stage2/ ... stage4/

Nothing time-dependent is written, so identical training runs give
byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch

from ..acm import ACMModel
from ..disentangle import AutoencoderBundle
from ..errors import CheckpointError
from ..fim import FIMModel, FusionEncoder
from ..guidance import GuidanceModel, ProjectionHead

FORMAT_VERSION = 1
STAGE_NAMES = {1: "disentangle", 2: "acm", 3: "fim", 4: "guidance"}


def stage_dir(root, stage) -> Path:
    return Path(root) / f"stage{stage}"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def save_stage(root, stage, modules: dict, meta: dict) -> Path:
    d = stage_dir(root, stage)
    d.mkdir(parents=True, exist_ok=True)
    state = {name: {k: v.detach().cpu().clone() for k, v in m.state_dict().items()} for name, m in modules.items()}
    tmp = d / "params.pt.tmp"
    torch.save(state, tmp)
    tmp.replace(d / "params.pt")
    full = {"format_version": FORMAT_VERSION, "stage": stage, "name": STAGE_NAMES[stage],
            "checksums": {name: m.checksum() for name, m in modules.items() if hasattr(m, "checksum")},
            **meta}
    _dump_json(full, d / "meta.json")
    return d


def read_meta(root, stage) -> dict:
    path = stage_dir(root, stage) / "meta.json"
    if not path.exists():
        raise CheckpointError(f"stage {stage} ({STAGE_NAMES[stage]}) checkpoint missing at {path.parent}")
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"stage {stage} ({STAGE_NAMES[stage]}) metadata unreadable: {e}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"stage {stage} checkpoint has format_version {meta.get('format_version')!r}; "
                              f"this build reads version {FORMAT_VERSION}")
    return meta


def has_stage(root, stage, fingerprint=None) -> bool:
    try:
        meta = read_meta(root, stage)
    except CheckpointError:
        return False
    if not (stage_dir(root, stage) / "params.pt").exists():
        return False
    return fingerprint is None or meta.get("fingerprint") == fingerprint


def _load_state(root, stage):
    path = stage_dir(root, stage) / "params.pt"
    if not path.exists():
        raise CheckpointError(f"stage {stage} ({STAGE_NAMES[stage]}) parameters missing at {path}")
    try:
        return torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:  # torch raises several unrelated types on corrupt archives
        raise CheckpointError(f"stage {stage} ({STAGE_NAMES[stage]}) parameters unreadable: {e}") from None


def load_bundle(root) -> AutoencoderBundle:
    meta, state = read_meta(root, 1), _load_state(root, 1)
    bundle = AutoencoderBundle(**meta["modules"]["bundle"])
    bundle.load_state_dict(state["bundle"])
    bundle.phase_log = meta.get("phase_log", [])
    return bundle.freeze()


def load_acm(root) -> ACMModel:
    meta, state = read_meta(root, 2), _load_state(root, 2)
    acm = ACMModel(**meta["modules"]["acm"])
    acm.load_state_dict(state["acm"])
    return acm.freeze()


def fim_from_config(c) -> FIMModel:
    return FIMModel(c["cmf_audio_dim"], c["cmf_text_dim"], c["emotion_dim"], c["cmf_hidden"], c["fuse_hidden"],
                    use_text=c["use_text"], use_intensity=c["use_intensity"])


def load_fim(root) -> FIMModel:
    meta, state = read_meta(root, 3), _load_state(root, 3)
    fim = fim_from_config(meta["modules"]["fim"])
    fim.load_state_dict(state["fim"])
    return fim.freeze()


def guidance_config(model: GuidanceModel) -> dict:
    return {"text_in": model.p_text.in_dim, "image_in": model.p_image.in_dim, "out": model.p_text.out_dim,
            "head_hidden": model.p_text.net[0].out_features, "fuse_dim": model.fusion_encoder.dim,
            "fuse_hidden": model.fusion_encoder.hidden}


def load_guidance(root) -> GuidanceModel:
    meta, state = read_meta(root, 4), _load_state(root, 4)
    c = meta["modules"]["guidance"]
    model = GuidanceModel(ProjectionHead(c["text_in"], c["out"], c["head_hidden"]),
                          ProjectionHead(c["image_in"], c["out"], c["head_hidden"]),
                          FusionEncoder(c["fuse_dim"], c["fuse_hidden"]))
    model.load_state_dict(state["guidance"])
    return model.freeze()


@dataclass
class CheckpointSet:
    root: Path
    bundle: AutoencoderBundle | None = None
    acm: ACMModel | None = None
    fim: FIMModel | None = None
    guidance: GuidanceModel | None = None

    @classmethod
    def load(cls, root, stages=(1, 2, 3, 4)) -> "CheckpointSet":
        loaders = {1: ("bundle", load_bundle), 2: ("acm", load_acm), 3: ("fim", load_fim), 4: ("guidance", load_guidance)}
        out = cls(Path(root))
        for s in stages:
            name, fn = loaders[s]
            setattr(out, name, fn(root))
        return out

    def file_hashes(self) -> dict:
        return {f"stage{s}/{f}": file_sha256(stage_dir(self.root, s) / f)
                for s in STAGE_NAMES for f in ("params.pt", "meta.json")
                if (stage_dir(self.root, s) / f).exists()}


# --- stage log -----------------------------------------------------------------

def read_stage_log(root) -> list:
    path = Path(root) / "stage_log.json"
    if not path.exists():
        return []
    return json.loads(path.read_text(encoding="utf-8"))["entries"]


def append_stage_log(root, entry: dict):
    Path(root).mkdir(parents=True, exist_ok=True)
    entries = read_stage_log(root) + [entry]
    _dump_json({"format_version": FORMAT_VERSION, "entries": entries}, Path(root) / "stage_log.json")
