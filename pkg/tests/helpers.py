"""Shared test utilities."""
import numpy as np
import torch

from medtalk.disentangle import AutoencoderBundle
from medtalk.fim import FIMBatch, FIMModel, FIMWeights, fim_loss_terms


def double_stage3(seed=0, d=8, T=6, L=4, dims=10):
    """Small float64 stage-3 setup: (model, bundle, batch, int_indices)."""
    torch.manual_seed(seed)
    g = torch.Generator().manual_seed(seed)
    bundle = AutoencoderBundle(dims=dims, content_dim=5, emotion_dim=d, hidden=12).double().freeze()
    model = FIMModel(audio_dim=4, text_dim=3, emotion_dim=d, cmf_hidden=6, fuse_hidden=10).double()
    B = 2
    rig = torch.randn(B, T, dims, generator=g, dtype=torch.float64)
    with torch.no_grad():
        _, target = bundle.encode_t(rig)
    batch = FIMBatch(rig=rig, content=torch.randn(B, T, 5, generator=g, dtype=torch.float64),
                     emotion_target=target, audio=torch.randn(B, T, 4, generator=g, dtype=torch.float64),
                     text=torch.randn(B, L, 3, generator=g, dtype=torch.float64),
                     times=torch.linspace(0, T - 1, L, dtype=torch.float64).expand(B, -1).clone(),
                     mask=torch.ones(B, L, dtype=torch.bool), emotion_ids=torch.tensor([0, 3]))
    return model, bundle, batch, [0, 1, 2, 3]


def stage3_gradient_error(seed=0, eps=1e-6, **kw):
    """Relative error between autograd and central differences over CMF and fusion-encoder parameters."""
    model, bundle, batch, idx = double_stage3(seed, **kw)
    weights = FIMWeights(0.1, 0.1, 0.1)
    params = list(model.cmf.parameters()) + list(model.fusion_encoder.parameters())

    def loss():
        return weights.total(fim_loss_terms(model, bundle, batch, idx))

    analytic = torch.autograd.grad(loss(), params)
    a_all, n_all = [], []
    with torch.no_grad():
        for p, ga in zip(params, analytic):
            flat, gflat = p.view(-1), ga.reshape(-1)
            num = np.empty(flat.numel())
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss().item()
                flat[i] = orig - eps
                down = loss().item()
                flat[i] = orig
                num[i] = (up - down) / (2 * eps)
            a_all.append(gflat.numpy())
            n_all.append(num)
    # over the whole vector: some entries (e.g. the key bias) have exactly zero gradient
    a, n = np.concatenate(a_all), np.concatenate(n_all)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12))
