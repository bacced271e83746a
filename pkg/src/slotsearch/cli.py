"""Command-line entry points.

    slotsearch gen-corpus  --out DIR [...]        write a synthetic corpus
    slotsearch train       --corpus DIR --out F   pretrain (+ optional joint phase)
    slotsearch eval        --checkpoint F --corpus DIR   per-turn metrics CSV
    slotsearch simulate    --checkpoint F --corpus DIR   seeded simulated sessions CSV
    slotsearch serve       --checkpoint F --corpus DIR   HTTP retrieval service
    slotsearch gradcheck                           finite-difference battery

``serve`` flags fall back to SLOTSEARCH_-prefixed environment variables
(SLOTSEARCH_PORT, SLOTSEARCH_CHECKPOINT, SLOTSEARCH_CORPUS,
SLOTSEARCH_TOP_K, SLOTSEARCH_MAX_TURNS).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .evaluate import evaluate_split, write_metrics_csv
from .model import TrainConfig, load_checkpoint, save_checkpoint
from .scenes import CorpusConfig, SPLITS, load_corpus, make_corpus
from .service import (DEFAULT_CAPACITY, DEFAULT_MAX_TURNS, DEFAULT_TOP_K,
                      ENV_PREFIX, RetrievalService, serve)
from .simrank import metrics_csv
from .trainer import joint_train, pretrain


def _env(name: str, default):
    return os.environ.get(ENV_PREFIX + name, default)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slotsearch",
        description="interactive multi-turn text-to-image retrieval")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic scene corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--val", type=int, default=200)
    p.add_argument("--test", type=int, default=500)
    p.add_argument("--regions", type=int, default=8)
    p.add_argument("--turns", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a retrieval model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--model", default="drilldown",
                   choices=["drilldown", "hre", "rhre", "rre", "rankfusion"])
    p.add_argument("--joint", action="store_true",
                   help="run the policy-refinement phase after pretraining")
    p.add_argument("--pretrain-out", default=None,
                   help="also save the pretraining checkpoint here")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--joint-epochs", type=int, default=30)
    p.add_argument("--slots", type=int, default=3)
    p.add_argument("--state-dim", type=int, default=48)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--turns", type=int, default=5)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--sharpness", type=float, default=9.0)
    p.add_argument("--discount", type=float, default=1.0)
    p.add_argument("--tradeoff", type=float, default=0.1)
    p.add_argument("--clip", type=float, default=10.0)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--literal-inverse-n", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")

    for name, hlp in (("eval", "per-turn retrieval metrics for a checkpoint"),
                      ("simulate", "seeded simulated-session curves")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--split", default="test", choices=list(SPLITS))
        p.add_argument("--out", default=None, help="CSV path (default: stdout)")
        if name == "simulate":
            p.add_argument("--seed", type=int, default=0,
                           help="query-order seed for the simulated user")

    p = sub.add_parser("serve", help="start the HTTP retrieval service")
    p.add_argument("--checkpoint", default=_env("CHECKPOINT", None))
    p.add_argument("--corpus", default=_env("CORPUS", None))
    p.add_argument("--split", default="test", choices=list(SPLITS))
    p.add_argument("--port", type=int, default=int(_env("PORT", 8765)))
    p.add_argument("--host", default=_env("HOST", "127.0.0.1"))
    p.add_argument("--top-k", type=int, default=int(_env("TOP_K", DEFAULT_TOP_K)))
    p.add_argument("--max-turns", type=int,
                   default=int(_env("MAX_TURNS", DEFAULT_MAX_TURNS)))
    p.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY)
    p.add_argument("--seed", type=int, default=None,
                   help="target-sampling seed (default: nondeterministic)")

    sub.add_parser("gradcheck", help="run the finite-difference gradient battery")
    return parser


def _cmd_gen_corpus(args) -> int:
    config = CorpusConfig(n_train=args.train, n_val=args.val, n_test=args.test,
                          n_regions=args.regions, t_turns=args.turns,
                          noise=args.noise, seed=args.seed)
    manifest = make_corpus(config, args.out)
    train, val, test = manifest["counts"]
    print(f"wrote {train}/{val}/{test} scenes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig(
        model=args.model, margin=args.margin, sharpness=args.sharpness,
        discount=args.discount, tradeoff=args.tradeoff, lr=args.lr,
        batch_size=args.batch, clip_norm=args.clip,
        pretrain_epochs=args.epochs, joint_epochs=args.joint_epochs,
        turns=args.turns, slots=args.slots, state_dim=args.state_dim,
        embed_dim=args.embed_dim, min_count=args.min_count,
        literal_inverse_n=args.literal_inverse_n, seed=args.seed)
    log = None if args.quiet else print
    cp = pretrain(config, args.corpus, log=log)
    if args.pretrain_out:
        save_checkpoint(cp, args.pretrain_out)
        print(f"pretraining checkpoint -> {args.pretrain_out} "
              f"(best epoch {cp.epoch})")
    if args.joint:
        cp = joint_train(cp, config, args.corpus, log=log)
    save_checkpoint(cp, args.out)
    phase = cp.config.phase
    print(f"{phase} checkpoint -> {args.out} (best epoch {cp.epoch}, "
          f"val {max(h['val_metric'] for h in cp.val_history):.3f})")
    return 0


def _load_model_and_split(args):
    cp = load_checkpoint(args.checkpoint)
    scenes = load_corpus(os.path.join(args.corpus, f"{args.split}.jsonl"))
    return cp.to_model(), scenes


def _cmd_eval(args) -> int:
    model, scenes = _load_model_and_split(args)
    metrics = evaluate_split(model, scenes)
    _emit_csv(metrics, args.out)
    return 0


def _cmd_simulate(args) -> int:
    model, scenes = _load_model_and_split(args)
    rng = np.random.default_rng(args.seed)
    metrics = evaluate_split(model, scenes, rng=rng)
    _emit_csv(metrics, args.out)
    return 0


def _emit_csv(metrics, out) -> None:
    if out:
        write_metrics_csv(metrics, out)
        print(f"metrics -> {out}")
    else:
        sys.stdout.write(metrics_csv(metrics))


def _cmd_serve(args) -> int:
    if not args.checkpoint or not args.corpus:
        print("serve needs --checkpoint and --corpus (or SLOTSEARCH_CHECKPOINT / "
              "SLOTSEARCH_CORPUS)", file=sys.stderr)
        return 2
    cp = load_checkpoint(args.checkpoint)
    scenes = load_corpus(os.path.join(args.corpus, f"{args.split}.jsonl"))
    rng = np.random.default_rng(args.seed) if args.seed is not None else None
    service = RetrievalService(cp.to_model(), scenes, top_k=args.top_k,
                               max_turns=args.max_turns, capacity=args.capacity,
                               rng=rng)
    serve(service, args.port, args.host)
    return 0


def _cmd_gradcheck(_args) -> int:
    from .gradsuite import TOLERANCE, gradient_suite
    results = gradient_suite()
    width = max(len(name) for name in results)
    for name, err in sorted(results.items()):
        print(f"{name:<{width}}  {err:.3e}")
    worst = max(results.values())
    ok = worst < TOLERANCE
    print(f"max relative error {worst:.3e} "
          f"({'below' if ok else 'ABOVE'} tolerance {TOLERANCE:g})")
    return 0 if ok else 2


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "simulate": _cmd_simulate,
    "serve": _cmd_serve,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
