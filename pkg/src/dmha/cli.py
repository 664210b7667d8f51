"""Batch command-line surface: synth, train, extract, score, eval, gradcheck."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import gradcheck as gc
from . import metrics as mt
from . import model as mdl
from . import pooling as pl
from . import synthdata as sd
from . import trainer as tr
from .config import RunConfig, apply_overrides, load_config


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for key in ("seed",):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "pooling", None) is not None:
        overrides["pooling"] = args.pooling
    if getattr(args, "heads", None) is not None:
        overrides["heads"] = args.heads
    if getattr(args, "epochs", None) is not None:
        overrides["max_epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        overrides["batch_size"] = args.batch_size
    if getattr(args, "lr", None) is not None:
        overrides["lr"] = args.lr
    return apply_overrides(cfg, **overrides).validate()


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    manifest = sd.generate_corpus(args.out_dir, args.speakers, args.utts,
                                  duration_s=args.duration, seed=cfg.seed)
    utts = tr.load_manifest(manifest)
    trials = sd.make_trials(utts, args.num_target, args.num_nontarget,
                            seed=cfg.seed)
    trials_path = os.path.join(args.out_dir, "trials.txt")
    mt.write_trials(trials_path, trials)
    print(f"wrote {len(utts)} utterances to {manifest}")
    print(f"wrote {len(trials)} trials to {trials_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    dataset = tr.load_manifest(args.data)
    n_spk = len({u.speaker for u in dataset})
    result = tr.train(cfg.train_config(), dataset, cfg.model_config(n_spk),
                      args.out_dir, fconfig=cfg.feature_config(),
                      resume=args.resume)
    last = result.log_rows[-1]
    print(f"trained {result.epochs_run} epochs; final train_loss="
          f"{last[1]:.4f} val_loss={last[2]:.4f}")
    print(f"best checkpoint: {result.best_path}")
    return 0


def _extract_embeddings(checkpoint, manifest):
    model, meta = tr.load_model(checkpoint)
    cfg = RunConfig()  # feature defaults; the front-end is fixed
    embeddings = {}
    weights = {}
    for u in tr.load_manifest(manifest):
        mel = tr.FeatureCache([u], cfg.feature_config())(u.utt_id)
        import dmha.autodiff as ad
        with ad.no_grad():
            out = model.forward(mel[None], training=False)
        embeddings[u.utt_id] = out["embedding"].data[0].copy()
        hw = out["head_weights"]
        weights[u.utt_id] = (out["weights"].data[0],
                             None if hw is None else hw.data[0])
    return embeddings, weights


def cmd_extract(args) -> int:
    embeddings, weights = _extract_embeddings(args.checkpoint, args.data)
    mdl.write_embeddings(args.out, embeddings)
    if args.dump_weights:
        os.makedirs(args.dump_weights, exist_ok=True)
        for uid, (w, hw) in weights.items():
            with open(os.path.join(args.dump_weights, uid + ".weights"),
                      "w") as f:
                f.write(pl.format_weights(w, hw))
    print(f"wrote {len(embeddings)} embeddings to {args.out}")
    return 0


def cmd_score(args) -> int:
    trials = mt.read_trials(args.trials)
    embeddings = mdl.read_embeddings(args.embeddings)
    mt.score_trials(trials, embeddings)
    mt.write_scores(args.out, trials)
    print(f"wrote {len(trials)} scores to {args.out}")
    return 0


def cmd_eval(args) -> int:
    trials = mt.read_trials(args.trials)
    if args.embeddings:
        embeddings = mdl.read_embeddings(args.embeddings)
    else:
        if not (args.checkpoint and args.data):
            raise ValueError("eval needs --embeddings or --checkpoint with --data")
        embeddings, _ = _extract_embeddings(args.checkpoint, args.data)
    report = mt.evaluate_trials(trials, embeddings)
    if args.scores_out:
        mt.write_scores(args.scores_out, trials)
    sys.stdout.write(mt.format_report(report))
    return 0


def cmd_gradcheck(args) -> int:
    seeds = tuple(range(args.num_seeds))
    results = gc.run_gradcheck(seeds=seeds)
    sys.stdout.write(gc.format_table(results))
    return 0 if all(err <= gc.TOLERANCE for _, err in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dmha",
        description="Speaker verification with double multi-head attention pooling")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-dir", default="out")

    sp = sub.add_parser("synth", help="generate a synthetic corpus + trials")
    common(sp)
    sp.add_argument("--speakers", type=int, default=16)
    sp.add_argument("--utts", type=int, default=10)
    sp.add_argument("--duration", type=float, default=4.0)
    sp.add_argument("--num-target", type=int, default=200)
    sp.add_argument("--num-nontarget", type=int, default=200)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a speaker classifier")
    common(sp)
    sp.add_argument("--data", required=True, help="manifest tsv")
    sp.add_argument("--pooling", choices=pl.POOLING_KINDS, default=None)
    sp.add_argument("--heads", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--resume", default=None, help="checkpoint to resume from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("extract", help="extract embeddings from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="manifest tsv")
    sp.add_argument("--out", required=True, help="embedding file")
    sp.add_argument("--dump-weights", default=None,
                    help="directory for attention-weight dumps")
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("score", help="cosine-score a trial list")
    common(sp)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--trials", required=True)
    sp.add_argument("--out", required=True, help="score file")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("eval", help="EER / minDCF over a trial list")
    common(sp)
    sp.add_argument("--trials", required=True)
    sp.add_argument("--embeddings", default=None)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--data", default=None, help="manifest tsv")
    sp.add_argument("--scores-out", default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference layer checks")
    common(sp)
    sp.add_argument("--num-seeds", type=int, default=5)
    sp.set_defaults(func=cmd_gradcheck)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
