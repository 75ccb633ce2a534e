"""Feature adapters standing in for the upstream pretrained models.

Every slot has a mock that reads precomputed files next to an audio stem:
``<stem>.content.txt`` (speech content), ``<stem>.emotion.txt`` (speech emotion)
and ``<stem>.text.txt`` (timed text tokens). Real model wrappers can be
registered in the same slots as long as they declare width and fps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ConfigError
from ..rigcore import FeatureStream, read_features
from ..guidance import read_guidance_vector

SLOTS = ("audio_content", "audio_emotion", "transcriber", "text_encoder",
         "guidance_text_encoder", "guidance_image_encoder")


def resample_linear(stream: FeatureStream, fps: int, n_frames: int | None = None) -> FeatureStream:
    """Linear interpolation of a frame-rate stream onto a grid at ``fps``."""
    if stream.times is not None:
        raise ConfigError("token streams are not resampled; map their timestamps instead")
    if stream.fps == fps and (n_frames is None or n_frames == len(stream)):
        return stream
    src_t = np.arange(len(stream)) / stream.fps
    if n_frames is None:
        n_frames = max(1, int(round(len(stream) * fps / stream.fps)))
    dst_t = np.arange(n_frames) / fps
    cols = [np.interp(dst_t, src_t, stream.values[:, j]) for j in range(stream.width)]
    return FeatureStream(np.stack(cols, axis=1).reshape(n_frames, stream.width), fps=fps)


def tokens_to_frames(stream: FeatureStream, fps: int) -> FeatureStream:
    """Move token timestamps from the stream's clock to the nearest frame at ``fps``."""
    t = stream.frame_times() * (fps / stream.fps)
    return FeatureStream(stream.values, fps=fps, times=np.rint(t))


@dataclass
class Adapter:
    name: str
    width: int
    fps: int
    fn: Callable = field(repr=False)

    def __call__(self, source):
        out = self.fn(source)
        w = out.width if isinstance(out, FeatureStream) else np.asarray(out).shape[-1]
        if w != self.width:
            raise ConfigError(f"adapter {self.name} produced width {w}, declared {self.width}")
        return out


class AdapterRegistry:
    def __init__(self):
        self._slots: dict[str, Adapter] = {}

    def register(self, slot, adapter: Adapter):
        if slot not in SLOTS:
            raise ConfigError(f"unknown adapter slot {slot!r}; valid: {', '.join(SLOTS)}")
        if adapter.width < 1 or adapter.fps <= 0:
            raise ConfigError(f"adapter {adapter.name} must declare a positive width and fps")
        self._slots[slot] = adapter

    def __getitem__(self, slot) -> Adapter:
        try:
            return self._slots[slot]
        except KeyError:
            raise ConfigError(f"no adapter registered for {slot!r}") from None

    def __contains__(self, slot):
        return slot in self._slots

    def validate(self, expected: dict):
        """``expected`` maps slot -> width required by the loaded models."""
        for slot, width in expected.items():
            if width is None:
                continue
            got = self[slot].width
            if got != width:
                raise ConfigError(f"adapter {slot} width {got} != model input width {width}")

    def audio_streams(self, stem, rig_fps):
        """(content, emotion, text tokens) for an audio source, aligned to ``rig_fps``."""
        content = self["audio_content"](stem)
        n = max(1, int(round(len(content) * rig_fps / content.fps)))
        content = resample_linear(content, rig_fps, n)
        emotion = resample_linear(self["audio_emotion"](stem), rig_fps, n)
        tokens = self["text_encoder"](self["transcriber"](stem))
        if len(tokens):
            tokens = tokens_to_frames(tokens, rig_fps)
        return content, emotion, tokens


def _stem_reader(suffix):
    def read(stem):
        p = Path(str(stem))
        path = p if p.name.endswith(suffix) else p.with_name(p.name + suffix)
        return read_features(path)
    return read


def _peek(path):
    s = read_features(path)
    return s.width, s.fps


def mock_registry(example_stem=None, audio_content_dim=32, audio_emotion_dim=32, text_dim=16,
                  guidance_dim=32, fps=30) -> AdapterRegistry:
    """Registry of file-reading mocks. Widths come from ``example_stem`` files if given."""
    if example_stem is not None:
        audio_content_dim, fps = _peek(Path(f"{example_stem}.content.txt"))
        audio_emotion_dim, _ = _peek(Path(f"{example_stem}.emotion.txt"))
        text_dim, _ = _peek(Path(f"{example_stem}.text.txt"))
    reg = AdapterRegistry()
    reg.register("audio_content", Adapter("mock-content", audio_content_dim, fps, _stem_reader(".content.txt")))
    reg.register("audio_emotion", Adapter("mock-emotion", audio_emotion_dim, fps, _stem_reader(".emotion.txt")))
    reg.register("transcriber", Adapter("mock-transcript", text_dim, fps, _stem_reader(".text.txt")))
    reg.register("text_encoder", Adapter("mock-text", text_dim, fps, lambda tokens: tokens))
    for slot in ("guidance_text_encoder", "guidance_image_encoder"):
        reg.register(slot, Adapter(f"mock-{slot}", guidance_dim, fps, read_guidance_vector))
    return reg
