"""Rig sequences, controller index sets, pseudo-intensity and text file I/O.

Rig file format (UTF-8)::

    fps=30 dims=174
    0.12 0.5 ... (dims floats)
    ...

Feature streams use the same layout. Token-level streams add ``timed=1`` to
the header, in which case every row starts with the token time in frames.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigError, ParseError, ValidationError

DEFAULT_DIMS = 174
DEFAULT_FPS = 30

# the stock partition for 174 controllers, as [start, stop) ranges
_DEFAULT_RANGES = {"lip": (0, 60), "emo": (60, 174), "up": (60, 174), "int": (60, 90)}
SET_NAMES = ("lip", "emo", "up", "int")


def _readonly(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigSequence:
    values: np.ndarray
    fps: int = DEFAULT_FPS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"rig values must be a T x D matrix, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"rig needs T >= 1 and D >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0, 0])
            raise ValidationError(f"non-finite rig value in frame {bad}")
        if int(self.fps) != self.fps or self.fps <= 0:
            raise ValidationError(f"fps must be a positive integer, got {self.fps}")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "fps", int(self.fps))

    @property
    def controller_count(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class IntensityCurve:
    values: np.ndarray
    fps: int = DEFAULT_FPS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValidationError("intensity curve must be one-dimensional")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValidationError("intensity values must be finite and nonnegative")
        object.__setattr__(self, "values", _readonly(v))

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class FeatureStream:
    """T' x k frame-wise (or token-wise) features from an adapter.

    ``times`` holds the frame position of every row for token-level streams
    (text); it is None for streams sampled at ``fps``.
    """

    values: np.ndarray
    fps: int = DEFAULT_FPS
    times: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"feature stream must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("non-finite feature value")
        object.__setattr__(self, "values", _readonly(v))
        if self.times is not None:
            t = np.asarray(self.times, dtype=np.float64)
            if t.shape != (v.shape[0],):
                raise ValidationError("times must have one entry per row")
            object.__setattr__(self, "times", _readonly(t))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def frame_times(self) -> np.ndarray:
        if self.times is not None:
            return self.times
        return np.arange(len(self), dtype=np.float64)

    def expand_to_frames(self, n_frames: int) -> np.ndarray:
        """Give every frame the features of the token nearest to it in time."""
        if len(self) == 0:
            return np.zeros((n_frames, self.width))
        t = self.frame_times()
        frames = np.arange(n_frames, dtype=np.float64)
        idx = np.abs(frames[:, None] - t[None, :]).argmin(axis=1)
        return self.values[idx]


@dataclass(frozen=True)
class ControllerSets:
    """Named controller index sets: lip, emo, up and int (intensity)."""

    lip: tuple[int, ...]
    emo: tuple[int, ...]
    up: tuple[int, ...]
    intensity: tuple[int, ...]

    def __post_init__(self):
        for name in SET_NAMES:
            raw = self[name]
            idx = tuple(sorted(set(int(i) for i in raw)))
            if not idx:
                raise ConfigError(f"controller set '{name}' is empty")
            if idx[0] < 0:
                raise ConfigError(f"controller set '{name}' has negative index {idx[0]}")
            object.__setattr__(self, "intensity" if name == "int" else name, idx)

    def __getitem__(self, name: str) -> tuple[int, ...]:
        if name in ("int", "intensity"):
            return self.intensity
        if name in ("lip", "emo", "up"):
            return getattr(self, name)
        raise ConfigError(f"unknown controller set '{name}'")

    @classmethod
    def default(cls, dims: int = DEFAULT_DIMS) -> "ControllerSets":
        """Stock partition; for dims != 174 the ranges are scaled proportionally."""
        if dims < 2:
            raise ConfigError("need at least 2 controllers for a lip/emotion partition")
        sets = {}
        for name, (a, b) in _DEFAULT_RANGES.items():
            lo = round(a * dims / DEFAULT_DIMS)
            hi = round(b * dims / DEFAULT_DIMS)
            if name == "lip":
                hi = min(max(hi, 1), dims - 1)
            else:
                lo = min(max(lo, 1), dims - 1)
                hi = max(hi, lo + 1)
            sets[name] = range(lo, hi)
        return cls.from_mapping(sets)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Iterable[int]]) -> "ControllerSets":
        missing = [n for n in SET_NAMES if n not in mapping and not (n == "int" and "intensity" in mapping)]
        if missing:
            raise ConfigError(f"controller sets missing: {', '.join(missing)}")
        get = lambda n: mapping["intensity"] if n == "int" and "int" not in mapping else mapping[n]
        return cls(lip=tuple(get("lip")), emo=tuple(get("emo")), up=tuple(get("up")),
                   intensity=tuple(get("int")))

    def to_mapping(self) -> dict:
        return {n: list(self[n]) for n in SET_NAMES}

    def validate(self, dims: int) -> "ControllerSets":
        for name in SET_NAMES:
            check_indices(self[name], dims, name)
        return self


def check_indices(indices: Sequence[int], dims: int, name: str = "index set") -> np.ndarray:
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size == 0:
        raise ConfigError(f"{name} is empty")
    bad = idx[(idx < 0) | (idx >= dims)]
    if bad.size:
        raise ConfigError(f"{name}: controller index {int(bad[0])} out of range [0, {dims})")
    return idx


def load_controller_sets(path) -> ControllerSets:
    """Read a YAML/JSON document mapping set names to index lists."""
    text = Path(path).read_text(encoding="utf-8")
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping of set names to index lists")
    return ControllerSets.from_mapping(doc)


def save_controller_sets(sets: ControllerSets, path) -> None:
    Path(path).write_text(json.dumps(sets.to_mapping()) + "\n", encoding="utf-8")


def pseudo_intensity(rig: RigSequence, sets: ControllerSets) -> IntensityCurve:
    """Per-frame L1 norm of the intensity controllers (raw, not normalized)."""
    idx = check_indices(sets.intensity, rig.controller_count, "int")
    return IntensityCurve(np.abs(rig.values[:, idx]).sum(axis=1), fps=rig.fps)


def slice_controllers(rig: RigSequence, indices: Sequence[int]) -> RigSequence:
    idx = check_indices(indices, rig.controller_count)
    return RigSequence(rig.values[:, idx], fps=rig.fps)


# --- text matrix files -------------------------------------------------------

def _parse_header(line: str, path) -> dict:
    fields = {}
    for tok in line.split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ParseError(f"malformed header token '{tok}'", path, 1)
        try:
            fields[key] = int(val)
        except ValueError:
            raise ParseError(f"header value for '{key}' is not an integer", path, 1) from None
    for key in ("fps", "dims"):
        if key not in fields:
            raise ParseError(f"malformed header: missing '{key}'", path, 1)
    if fields["fps"] <= 0 or fields["dims"] <= 0:
        raise ParseError("header fps and dims must be positive", path, 1)
    return fields


def read_matrix(path) -> tuple[np.ndarray, dict]:
    """Parse a header + rows file into (matrix, header fields)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 text ({exc})", path) from None
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing header", path)
    header = _parse_header(lines[0], path)
    width = header["dims"] + (1 if header.get("timed") else 0)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != width:
            raise ParseError(
                f"row {len(rows) + 1} has {len(parts)} values, expected {width}", path, lineno)
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"row {len(rows) + 1} has a non-numeric value", path, lineno) from None
        if not all(np.isfinite(row)):
            raise ParseError(f"row {len(rows) + 1} has a non-finite value", path, lineno)
        rows.append(row)
    mat = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return mat, header


def write_matrix(mat: np.ndarray, path, **header) -> None:
    path = Path(path)
    head = " ".join(f"{k}={int(v)}" for k, v in header.items())
    body = "\n".join(" ".join(f"{x:.10g}" for x in row) for row in np.asarray(mat))
    path.write_text(head + "\n" + body + ("\n" if len(mat) else ""), encoding="utf-8")


def read_rig(path) -> RigSequence:
    mat, header = read_matrix(path)
    if header.get("timed"):
        raise ParseError("rig files cannot be timed streams", path, 1)
    if mat.shape[0] == 0:
        raise ParseError("no frames after header", path)
    return RigSequence(mat, fps=header["fps"])


def write_rig(rig: RigSequence, path) -> None:
    write_matrix(rig.values, path, fps=rig.fps, dims=rig.controller_count)


def read_features(path) -> FeatureStream:
    mat, header = read_matrix(path)
    if header.get("timed"):
        return FeatureStream(mat[:, 1:], fps=header["fps"], times=mat[:, 0])
    return FeatureStream(mat, fps=header["fps"])


def write_features(stream: FeatureStream, path) -> None:
    if stream.times is not None:
        mat = np.column_stack([stream.times, stream.values]) if len(stream) else np.zeros((0, stream.width + 1))
        write_matrix(mat, path, fps=stream.fps, dims=stream.width, timed=1)
    else:
        write_matrix(stream.values, path, fps=stream.fps, dims=stream.width)
