"""Train the base model and every ablation variant, then print MLE/MEE/EIE/FRD on the test split.

    python scripts/ablation_table.py --config configs/acceptance.yaml --out runs/acc
"""
import argparse
import json
import time
from pathlib import Path

from medtalk.pipeline import VARIANTS, evaluate_base, load_config, run_ablation
from medtalk.pipeline.training import build_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/acceptance.yaml")
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--variant", action="append", help="subset of variants (default: all)")
    args = p.parse_args()

    cfg = load_config(args.config, [f"checkpoint_dir={args.out}"])
    corpus = build_corpus(cfg)
    rows = {}
    t = time.perf_counter()
    rows["full"] = evaluate_base(cfg, corpus).aggregate()
    print(f"full done in {time.perf_counter() - t:.0f}s", flush=True)
    for v in args.variant or list(VARIANTS):
        t = time.perf_counter()
        rows[v] = run_ablation(cfg, v, corpus).aggregate()
        print(f"{v} done in {time.perf_counter() - t:.0f}s", flush=True)

    print(f"\n{'variant':<16}{'MLE':>10}{'MEE':>10}{'EIE':>10}{'FRD':>10}")
    for name, r in rows.items():
        print(f"{name:<16}{r['mle']:>10.5f}{r['mee']:>10.5f}{r['eie']:>10.5f}{r['frd']:>10.5f}")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "ablation.json").write_text(json.dumps(rows, indent=1) + "\n")


if __name__ == "__main__":
    main()
