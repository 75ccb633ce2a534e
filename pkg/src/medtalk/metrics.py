"""Evaluation metrics on rig sequences: MLE, MEE, EIE and FRD.

All four compare a prediction against ground truth on one clip:

    MLE  mean |pred - gt| over frames and lip controllers
    MEE  the same over emotion controllers
    EIE  mean over frames of |Int(pred) - Int(gt)|, Int = pseudo-intensity
    FRD  mean over upper-face controllers of std(gt_j) - std(pred_j)
         (population std; signed, positive when the prediction under-varies)
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .rigcore import ControllerSets, RigSequence, check_indices, pseudo_intensity, read_rig

METRIC_NAMES = ("mle", "mee", "eie", "frd")


def _values(r):
    return r.values if isinstance(r, RigSequence) else np.asarray(r, dtype=np.float64)


def _pair(pred, gt):
    p, g = _values(pred), _values(gt)
    if p.shape != g.shape:
        raise ValidationError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    return p, g


def _region_l1(pred, gt, indices):
    p, g = _pair(pred, gt)
    idx = check_indices(indices, p.shape[1])
    return float(np.abs(p[:, idx] - g[:, idx]).mean())


def mle(pred, gt, sets: ControllerSets) -> float:
    return _region_l1(pred, gt, sets.lip)


def mee(pred, gt, sets: ControllerSets) -> float:
    return _region_l1(pred, gt, sets.emo)


def eie(pred, gt, sets: ControllerSets) -> float:
    p, g = _values(pred), _values(gt)
    if p.shape[0] != g.shape[0]:
        raise ValidationError(f"sequence lengths differ: {p.shape[0]} vs {g.shape[0]}")
    ip = pseudo_intensity(RigSequence(p), sets).values
    ig = pseudo_intensity(RigSequence(g), sets).values
    return float(np.abs(ip - ig).mean())


def frd(pred, gt, sets: ControllerSets, absolute=False) -> float:
    p, g = _pair(pred, gt)
    if p.shape[0] < 2:
        raise ValidationError("FRD needs at least 2 frames (std undefined)")
    idx = check_indices(sets.up, p.shape[1])
    value = float((g[:, idx].std(axis=0) - p[:, idx].std(axis=0)).mean())
    return abs(value) if absolute else value


def clip_metrics(pred, gt, sets: ControllerSets) -> dict:
    return {"mle": mle(pred, gt, sets), "mee": mee(pred, gt, sets),
            "eie": eie(pred, gt, sets), "frd": frd(pred, gt, sets)}


@dataclass
class EvalReport:
    mle: float
    mee: float
    eie: float
    frd: float
    per_clip: list = field(default_factory=list)
    config: ControllerSets | None = None
    errors: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows, config=None, errors=()):
        rows = sorted(rows, key=lambda r: r["clip"])
        if rows:
            agg = {m: float(np.mean([r[m] for r in rows])) for m in METRIC_NAMES}
        else:
            agg = {m: float("nan") for m in METRIC_NAMES}
        return cls(per_clip=rows, config=config, errors=list(errors), **agg)

    def aggregate(self) -> dict:
        return {m: getattr(self, m) for m in METRIC_NAMES}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("clip",) + METRIC_NAMES)
        for r in self.per_clip:
            w.writerow([r["clip"]] + [repr(float(r[m])) for m in METRIC_NAMES])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def format_table(self) -> str:
        head = f"{'':<12}" + "".join(f"{m.upper():>12}" for m in METRIC_NAMES)
        row = f"{'mean':<12}" + "".join(f"{getattr(self, m):>12.5f}" for m in METRIC_NAMES)
        lines = [head, row, f"clips: {len(self.per_clip)}"]
        if self.errors:
            lines.append("errors:")
            lines += [f"  {e}" for e in self.errors]
        return "\n".join(lines)


def evaluate_pairs(pairs, sets: ControllerSets) -> EvalReport:
    """pairs: iterable of (clip_id, pred, gt)."""
    rows = [{"clip": cid, **clip_metrics(p, g, sets)} for cid, p, g in pairs]
    return EvalReport.from_rows(rows, config=sets)


def evaluate_corpus(pred_dir, gt_dir, sets: ControllerSets, pattern="*.rig.txt") -> EvalReport:
    """Score every ground-truth rig file that has a same-named prediction.

    Clips whose counterpart is missing or unreadable are listed in
    ``report.errors`` and skipped.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    rows, errors = [], []
    gt_files = sorted(gt_dir.glob(pattern))
    if not gt_files:
        errors.append(f"no ground-truth files matching {pattern} in {gt_dir}")
    for gt_path in gt_files:
        name = gt_path.name
        clip = name[: -len(".rig.txt")] if name.endswith(".rig.txt") else gt_path.stem
        pred_path = pred_dir / name
        if not pred_path.exists():
            errors.append(f"{clip}: missing prediction {pred_path}")
            continue
        try:
            rows.append({"clip": clip, **clip_metrics(read_rig(pred_path), read_rig(gt_path), sets)})
        except (ValidationError, ValueError) as exc:
            errors.append(f"{clip}: {exc}")
    return EvalReport.from_rows(rows, config=sets, errors=errors)
