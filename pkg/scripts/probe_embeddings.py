"""Linear probes for emotion on the stage-1 content and emotion embeddings of a checkpoint.

    python scripts/probe_embeddings.py --config configs/acceptance.yaml --checkpoints runs/acc
"""
import argparse

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from medtalk.disentangle import encode
from medtalk.pipeline import load_config
from medtalk.pipeline.checkpoint import load_bundle
from medtalk.pipeline.training import build_corpus


def embed(bundle, samples):
    c, e, y = [], [], []
    for s in samples:
        ce, ee = encode(bundle, s.rig)
        c.append(ce.values)
        e.append(ee.values)
        y.append(np.full(len(s.rig), s.emotion_id))
    return np.concatenate(c), np.concatenate(e), np.concatenate(y)


def main():
    p = argparse.ArgumentParser(description="emotion probes on stage-1 embeddings")
    p.add_argument("--config", default="configs/acceptance.yaml")
    p.add_argument("--checkpoints", required=True)
    args = p.parse_args()
    cfg = load_config(args.config, [f"checkpoint_dir={args.checkpoints}"])
    corpus = build_corpus(cfg)
    bundle = load_bundle(cfg.checkpoint_dir)
    ctr, etr, ytr = embed(bundle, corpus.train)
    cte, ete, yte = embed(bundle, corpus.test)
    for name, xtr, xte in (("emotion", etr, ete), ("content", ctr, cte)):
        raw = LogisticRegression(max_iter=3000).fit(xtr, ytr).score(xte, yte)
        std = make_pipeline(StandardScaler(), LogisticRegression(max_iter=3000)).fit(xtr, ytr).score(xte, yte)
        mu = xtr.mean(0)
        between = sum(((xtr[ytr == k].mean(0) - mu) ** 2).sum() * (ytr == k).sum() for k in np.unique(ytr))
        share = between / ((xtr - mu) ** 2).sum()
        print(f"{name:<8} raw {raw:.3f}  standardized {std:.3f}  emotion variance share {share:.4%}")


if __name__ == "__main__":
    main()
