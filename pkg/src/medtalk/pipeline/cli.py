"""Command-line entry point. Exit codes: 0 ok, 1 validation, 2 divergence, 3 I/O."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import CheckpointError, ConfigError, DivergenceError, MedTalkError, ParseError, ValidationError
from ..metrics import evaluate_corpus
from ..rigcore import write_rig
from ..guidance import write_guidance_manifest, write_guidance_vector
from ..synthdata import EMOTIONS, GuidanceOracle, generate_dataset, make_guidance_pairs, write_dataset
from .ablation import VARIANTS, evaluate_base, run_ablation, variant_name
from .config import AblationFlags, load_config
from .adapters import mock_registry
from .inference import GuidanceInput, MEDTalk, infer, write_text
from .training import build_corpus, train_all

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("medtalk")


def _config(args, extra=()):
    overrides = list(args.set or []) + list(extra)
    if getattr(args, "checkpoints", None):
        overrides.append(f"checkpoint_dir={args.checkpoints}")
    if getattr(args, "data", None):
        overrides.append(f"data.directory={args.data}")
    for flag in getattr(args, "ablation_flags", None) or []:
        overrides.append(f"ablation.{flag}=true")
    return load_config(args.config, overrides)


def _progress(args):
    if not args.verbose:
        return None

    def report(stage, epoch, loss):
        print(f"{stage} epoch {epoch + 1} loss {loss:.6g}", file=sys.stderr)
    return report


def cmd_generate_data(args):
    cfg = _config(args)
    spec = cfg.data.synth_spec(cfg.seed, cfg.sets())
    samples = generate_dataset(spec)
    out = Path(args.out)
    write_dataset(samples, out, spec)
    if not args.no_guidance:
        oracle = GuidanceOracle(cfg.data.guidance_width, cfg.seed, cfg.data.guidance_noise)
        pairs = make_guidance_pairs(samples, oracle, seed=cfg.seed + 1)
        write_guidance_manifest(pairs, out, {s.clip_id: f"{s.clip_id}.rig.txt" for s in samples})
        # noise-free vectors per emotion, handy as --guidance inputs
        (out / "oracle").mkdir(exist_ok=True)
        for e, name in enumerate(EMOTIONS):
            for m in ("text", "image"):
                write_guidance_vector(oracle.clean(m, e), out / "oracle" / f"{m}_{name}.vec.txt")
    print(f"wrote {len(samples)} clips to {out}")
    return EXIT_OK


def cmd_train(args):
    stages = tuple(args.stage) if args.stage else (1, 2, 3, 4)
    cfg = _config(args)
    train_all(cfg, stages=stages, resume=not args.force, progress=_progress(args))
    print(f"checkpoints in {cfg.checkpoint_dir}")
    return EXIT_OK


def cmd_infer(args):
    cfg = _config(args)
    registry = mock_registry(args.audio_features)
    guidance = GuidanceInput.parse(args.guidance, registry)
    model = MEDTalk.load(cfg.checkpoint_dir, cfg.sets())
    rig = infer(args.audio_features, guidance, model, registry)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_rig(rig, args.out)
    print(f"wrote {len(rig)} frames to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _config(args)
    report = evaluate_corpus(args.pred, args.gt, cfg.sets())
    print(report.format_table())
    if args.csv:
        report.to_csv(args.csv)
    return EXIT_OK if not report.errors or report.per_clip else EXIT_IO


def cmd_ablate(args):
    cfg = _config(args)
    corpus = build_corpus(cfg)
    variants = [variant_name(v) for v in args.variant] if args.variant else list(VARIANTS)
    results = {"full": evaluate_base(cfg, corpus, _progress(args)).aggregate()}
    for v in variants:
        results[v] = run_ablation(cfg, v, corpus, _progress(args)).aggregate()
    names = ("mle", "mee", "eie", "frd")
    print(f"{'variant':<16}" + "".join(f"{n.upper():>12}" for n in names))
    for v, r in results.items():
        print(f"{v:<16}" + "".join(f"{r[n]:>12.5f}" for n in names))
    if args.json:
        write_text(args.json, json.dumps(results, indent=1) + "\n")
    return EXIT_OK


def cmd_diagnose(args):
    cfg = _config(args)
    corpus = build_corpus(cfg)
    model = MEDTalk.load(cfg.checkpoint_dir, cfg.sets())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in corpus.test[: args.limit]:
        write_text(out / f"{s.clip_id}.intensity.csv", model.intensity_csv(s))
    print(f"wrote intensity traces for {min(args.limit, len(corpus.test))} clips to {out}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="medtalk", description="Emotional rig animation from audio features.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", parents=[common], help="write a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--no-guidance", action="store_true", help="skip guidance vectors")
    g.set_defaults(func=cmd_generate_data)

    flags = [f for f in AblationFlags.__dataclass_fields__ if f != "no_disentangle"]
    for name, helptext in (("train", "train selected stages"), ("train-all", "train all four stages")):
        t = sub.add_parser(name, parents=[common], help=helptext)
        t.add_argument("--data", help="dataset directory (default: generate from config)")
        t.add_argument("--checkpoints", help="checkpoint directory")
        if name == "train":
            t.add_argument("--stage", type=int, action="append", choices=(1, 2, 3, 4))
        t.add_argument("--force", action="store_true", help="retrain even if a matching checkpoint exists")
        for f in flags:
            t.add_argument("--" + f.replace("_", "-"), dest="ablation_flags", action="append_const", const=f)
        t.set_defaults(func=cmd_train, stage=None)

    i = sub.add_parser("infer", parents=[common], help="generate a rig sequence")
    i.add_argument("--audio-features", required=True, help="feature file stem (<stem>.content.txt etc.)")
    i.add_argument("--guidance", required=True, help="label:<name> | text:<vecfile> | image:<vecfile>")
    i.add_argument("--out", required=True)
    i.add_argument("--checkpoints")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", parents=[common], help="score predicted rig files against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--csv", help="write per-clip CSV here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", parents=[common], help="run ablation variants")
    a.add_argument("--variant", action="append", help=f"one of {', '.join(VARIANTS)} (default: all)")
    a.add_argument("--data")
    a.add_argument("--checkpoints")
    a.add_argument("--json", help="write aggregate results here")
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("diagnose", parents=[common], help="per-frame intensity traces on test clips")
    d.add_argument("--out", required=True)
    d.add_argument("--limit", type=int, default=5)
    d.add_argument("--data")
    d.add_argument("--checkpoints")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, ParseError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValidationError, MedTalkError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
