"""Compare predicted intensity curves with the generator's true intensity.

Trains stage 3 twice on top of an existing base run (fused audio+text and
audio-only), optionally with direct curve supervision, and reports the mean
l1 error per variant plus a per-frame CSV for the first few test clips.
"""
import argparse
import csv
from pathlib import Path

import numpy as np
import torch

from medtalk.fim import prepare_batch
from medtalk.pipeline import derive_run, load_config, train_all
from medtalk.pipeline.training import build_corpus


def curves(ckpts, samples):
    batch = prepare_batch(samples, ckpts.bundle, ckpts.acm)
    with torch.no_grad():
        g = ckpts.fim.label_table(batch.emotion_ids)
        return ckpts.fim.intensity(g, batch.audio, batch.text, batch.times, batch.mask).double().numpy()


def main():
    p = argparse.ArgumentParser(description="intensity curve diagnostics")
    p.add_argument("--config", default="configs/acceptance.yaml")
    p.add_argument("--out", default="runs/intensity")
    p.add_argument("--lambda-direct", type=float, default=0.1)
    p.add_argument("--clips", type=int, default=3)
    args = p.parse_args()

    out = Path(args.out)
    base = load_config(args.config, [f"checkpoint_dir={out / 'base'}"])
    corpus = build_corpus(base)
    train_all(base, stages=(1, 2), corpus=corpus)
    true = np.stack([s.true_intensity.values for s in corpus.test])
    preds = {}
    for name, extra in (("fused", []), ("audio_only", ["ablation.no_text=true"])):
        cfg = load_config(args.config, [f"checkpoint_dir={out / name}",
                                        f"weights.lambda_direct={args.lambda_direct}", *extra])
        preds[name] = curves(derive_run(base, cfg, 3, corpus), corpus.test)
        print(f"{name:<12} mean l1 {np.abs(preds[name] - true).mean():.4f}")

    for s, i in zip(corpus.test[: args.clips], range(args.clips)):
        with open(out / f"{s.clip_id}.curves.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "true", *preds])
            for t in range(true.shape[1]):
                w.writerow([t, f"{true[i, t]:.6g}", *(f"{v[i, t]:.6g}" for v in preds.values())])
    print(f"per-frame curves in {out}")


if __name__ == "__main__":
    main()
