"""Building blocks shared by all trainable stages."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import DivergenceError, FrozenError


class FrameConvNet(nn.Module):
    """Per-frame MLP with one temporal convolution between the hidden layers.

    (B, T, in) -> (B, T, out); the convolution is zero padded so T is kept.
    """

    def __init__(self, in_dim, hidden, out_dim, kernel=5):
        super().__init__()
        self.inp = nn.Linear(in_dim, hidden)
        self.mix = nn.Conv1d(hidden, hidden, kernel, padding=kernel // 2)
        self.out = nn.Linear(hidden, out_dim)
        self.in_dim = in_dim
        self.out_dim = out_dim

    def forward(self, x):
        h = F.relu(self.inp(x))
        h = F.relu(self.mix(h.transpose(1, 2)).transpose(1, 2))
        return self.out(h)


class Freezable(nn.Module):
    """Module that can be frozen for good: no gradients, no state loading."""

    def __init__(self):
        super().__init__()
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self._frozen = True
        self.eval()
        return self

    def trainable_parameters(self):
        if self._frozen:
            raise FrozenError(f"{type(self).__name__} is frozen; its parameters cannot be trained")
        return [p for p in self.parameters()]

    def load_state_dict(self, state_dict, strict=True, assign=False):
        if self._frozen:
            raise FrozenError(f"{type(self).__name__} is frozen; refusing to load new parameters")
        return super().load_state_dict(state_dict, strict=strict, assign=assign)

    def train(self, mode=True):
        # a frozen module stays in eval mode
        return super().train(mode and not self._frozen)

    def checksum(self) -> str:
        return param_checksum(self)


def param_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def frame_cosine_loss(a, b, eps=1e-8):
    """1 - cosine similarity, computed per frame and averaged. Range [0, 2]."""
    return 1.0 - F.cosine_similarity(a, b, dim=-1, eps=eps).mean()


def step_optimizer(params, lr, decay, step_size, weight_decay=0.0):
    """Adam + StepLR (stepped once per epoch)."""
    opt = torch.optim.Adam(params, lr=lr, weight_decay=weight_decay)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=step_size, gamma=decay)
    return opt, sched


def check_finite(loss, stage):
    if not torch.isfinite(loss):
        raise DivergenceError(stage)


def batches(n, batch_size, rng: np.random.Generator, shuffle=True):
    order = rng.permutation(n) if shuffle else np.arange(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def as_batch(x, dtype=torch.float32):
    """numpy (T, k) or (B, T, k) -> float tensor (B, T, k)."""
    t = torch.tensor(np.asarray(x), dtype=dtype)
    return t.unsqueeze(0) if t.dim() == 2 else t


def seed_everything(seed):
    torch.manual_seed(seed)
    return np.random.default_rng(seed)



@dataclass
class StageSchedule:
    """Optimizer schedule for one training stage (Adam + StepLR)."""

    epochs: int = 30
    learning_rate: float = 1e-3
    decay_rate: float = 0.9
    step_size: int = 10
    batch_size: int = 8
