"""Command line entry points.

    tokenroll gen-corpus        render a synthetic clip corpus
    tokenroll pretrain          joint match/cloze/contrastive pretraining
    tokenroll finetune-retrieval contrastive tuning of a checkpoint
    tokenroll eval-mc           multiple-choice caption accuracy
    tokenroll eval-retrieval    clip/caption retrieval metrics
    tokenroll eval-cloze        masked-slot accuracy
    tokenroll attn-dist         attention mass on rolled slots
    tokenroll bench-flops       attention cost table (analytic + measured)

Eval commands score the corpus tail (`eval_holdout` records); training never
sees it. Reports land in --out as report.txt (deterministic) and timing.txt.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .bench import bench_csv, run_bench
from .config import config_help, model_config_from, run_config, train_config_from
from .data import generate_corpus, read_corpus, write_corpus
from .errors import TokenrollError
from .evaluation import (
    eval_attention_distribution,
    eval_cloze,
    eval_multiple_choice,
    eval_retrieval,
    split_eval,
)
from .model import load_checkpoint, save_checkpoint
from .training import finetune_retrieval, pretrain


def _load_config(args) -> dict:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else None
    return run_config(text, args.set or [])


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    p.add_argument("--seed", type=int, default=0)


def _write_log(path: Path, log: list[dict]) -> None:
    lines = []
    for rec in log:
        parts = [f"{k}={rec[k]}" for k in rec]
        lines.append(" ".join(parts))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_gen_corpus(args) -> int:
    records, vocab = generate_corpus(
        args.count,
        S=args.frames,
        H=args.height,
        W=args.width,
        seed=args.seed,
        speed_min=args.speed_min,
        speed_max=args.speed_max,
    )
    write_corpus(args.out, records, vocab, S=args.frames, C=3, H=args.height, W=args.width)
    print(f"wrote {len(records)} clips to {args.out}")
    return 0


def _load_split(args, cfg):
    corpus = read_corpus(args.corpus)
    train, ev = split_eval(corpus.records, cfg["eval_holdout"])
    return corpus, train, ev


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    corpus, train, _ = _load_split(args, cfg)
    model_cfg = model_config_from(cfg, vocab_size=len(corpus.vocab))
    train_cfg = train_config_from(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out.parent if train_cfg.checkpoint_every > 0 else None
    params, log = pretrain(
        train, corpus.vocab, model_cfg, train_cfg, seed=args.seed, checkpoint_dir=ckpt_dir
    )
    save_checkpoint(out, params, model_cfg)
    _write_log(out.with_suffix(out.suffix + ".log"), log)
    last = log[-1] if log else {}
    print(f"saved {out} after {train_cfg.steps} steps, final loss {last.get('loss', 'n/a')}")
    return 0


def cmd_finetune_retrieval(args) -> int:
    cfg = _load_config(args)
    corpus, train, _ = _load_split(args, cfg)
    params, model_cfg = load_checkpoint(args.checkpoint, dtype=_ckpt_dtype(cfg))
    pool = train[: cfg["finetune_pairs"]]
    train_cfg = train_config_from(cfg)
    params, log = finetune_retrieval(
        params, pool, corpus.vocab, model_cfg, train_cfg, seed=args.seed
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, params, model_cfg)
    _write_log(out.with_suffix(out.suffix + ".log"), log)
    print(f"saved {out} after tuning on {len(pool)} pairs")
    return 0


def _ckpt_dtype(cfg):
    return np.float32 if cfg["dtype"] == "float32" else np.float64


def _run_eval(args, protocol, **kw) -> int:
    cfg = _load_config(args)
    corpus, _, ev = _load_split(args, cfg)
    params, model_cfg = load_checkpoint(args.checkpoint, dtype=_ckpt_dtype(cfg))
    report = protocol(params, model_cfg, ev, corpus.vocab, seed=args.seed, **kw)
    report.write(args.out)
    acc = report.metrics.get("accuracy")
    headline = f"accuracy {acc:.4f}" if acc is not None else f"{len(report.metrics)} metrics"
    print(f"{report.kind}: {headline} -> {args.out}/report.txt")
    return 0


def cmd_eval_mc(args) -> int:
    return _run_eval(args, eval_multiple_choice)


def cmd_eval_retrieval(args) -> int:
    return _run_eval(args, eval_retrieval)


def cmd_eval_cloze(args) -> int:
    return _run_eval(args, eval_cloze, slot=args.slot)


def cmd_attn_dist(args) -> int:
    return _run_eval(args, eval_attention_distribution)


def cmd_bench_flops(args) -> int:
    results = run_bench(S_values=tuple(args.frames), reps=args.reps, seed=args.seed)
    text = bench_csv(results)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    print(f"wrote {len(results)} rows to {out}")
    return 0


def cmd_config_help(_args) -> int:
    print(config_help(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokenroll", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="render a synthetic clip corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--speed-min", type=int, default=1)
    p.add_argument("--speed-max", type=int, default=3)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain", help="pretrain from scratch")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_config_args(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune-retrieval", help="match + contrastive finetuning for retrieval")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="tuned checkpoint path")
    _add_config_args(p)
    p.set_defaults(func=cmd_finetune_retrieval)

    for name, fn, extra in (
        ("eval-mc", cmd_eval_mc, None),
        ("eval-retrieval", cmd_eval_retrieval, None),
        ("eval-cloze", cmd_eval_cloze, "slot"),
        ("attn-dist", cmd_attn_dist, None),
    ):
        p = sub.add_parser(name, help=f"run the {name[5:] if name.startswith('eval-') else name} protocol")
        p.add_argument("--corpus", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", required=True, help="report directory")
        if extra == "slot":
            p.add_argument("--slot", default="direction", choices=["color", "shape", "direction"])
        _add_config_args(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("bench-flops", help="attention cost table")
    p.add_argument("--out", required=True, help="csv path")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--frames", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_flops)

    p = sub.add_parser("config-help", help="list config keys and defaults")
    p.set_defaults(func=cmd_config_help)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TokenrollError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
