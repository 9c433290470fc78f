"""Command-line surface: gen-data, train, predict, eval, ablate."""
from __future__ import annotations

import argparse
import os
import sys

from .errors import (
    AlignmentError,
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    FileFormatError,
)
from .harness import (
    TrainConfig,
    ablate,
    ablation_table_csv,
    apply_env_seed,
    gt_parses,
    load_params,
    load_predictions,
    load_train_config,
    predict,
    save_params,
    split_corpus,
    train,
)
from .metrics import full_report
from .synthdata import CorpusSpec, generate_corpus, load_corpus, save_corpus


class _Parser(argparse.ArgumentParser):
    # usage problems exit with status 1; data problems exit with 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _parse_threshold(text):
    try:
        if "," in text:
            values = tuple(float(x) for x in text.split(","))
        else:
            values = float(text)
    except ValueError:
        raise ConfigError(f"threshold must be a number or comma list, got {text!r}")
    flat = values if isinstance(values, tuple) else (values,)
    if any(not 0.0 < v < 1.0 for v in flat):
        raise ConfigError(f"thresholds must lie strictly inside (0,1), got {text!r}")
    return values


def _load_config(args):
    config = load_train_config(args.config) if args.config else TrainConfig()
    if getattr(args, "seed", None) is not None:
        config = TrainConfig.from_mapping({**config.to_mapping(), "seed": args.seed})
    return apply_env_seed(config)


def _cmd_gen_data(args):
    n_eval = args.eval_videos if args.eval_out else 0
    spec = CorpusSpec(
        n_videos=args.n_videos + n_eval,
        segments=args.segments,
        classes=args.classes,
        dim=args.dim,
        event_rate=args.event_rate,
        p_audio_only=args.p_audio_only,
        p_visual_only=args.p_visual_only,
        p_audible_visible=args.p_audible_visible,
        leak=args.leak,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    corpus = generate_corpus(spec)
    if n_eval:
        # held-out videos come from the same feature prototypes
        train_part, eval_part = split_corpus(corpus, eval_fraction=n_eval / spec.n_videos)
        save_corpus(train_part, args.out)
        save_corpus(eval_part, args.eval_out)
        print(f"wrote {train_part.n_videos} videos to {args.out}")
        print(f"wrote {eval_part.n_videos} held-out videos to {args.eval_out}")
    else:
        save_corpus(corpus, args.out)
        print(f"wrote {corpus.n_videos} videos to {args.out}")
    return 0


def _cmd_train(args):
    config = _load_config(args)
    corpus = load_corpus(args.corpus)
    eval_corpus = load_corpus(args.eval_corpus) if args.eval_corpus else None
    params, log = train(corpus, config, eval_corpus=eval_corpus)
    os.makedirs(args.out, exist_ok=True)
    params_path = os.path.join(args.out, "params.json")
    log_path = os.path.join(args.out, "trainlog.json")
    save_params(params, params_path)
    import json

    with open(log_path, "w", encoding="utf-8") as fh:
        json.dump(log.to_mapping(), fh, indent=2)
    last = log.epochs[-1].losses
    print(f"trained {config.epochs} epochs; final mean total loss {last.total:.6f}")
    print(f"params: {params_path}")
    print(f"log: {log_path}")
    return 0


def _cmd_predict(args):
    params = load_params(args.params)
    corpus = load_corpus(args.corpus)
    predict(
        params,
        corpus,
        branch=args.branch,
        unimodal_only=args.unimodal_only,
        out_path=args.out,
    )
    print(f"wrote predictions for {len(corpus.samples)} videos to {args.out}")
    return 0


def _cmd_eval(args):
    preds = load_predictions(args.pred)
    corpus = load_corpus(args.gt)
    report = full_report(preds, gt_parses(corpus), thresholds=args.threshold)
    text = report.to_text()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def _cmd_ablate(args):
    config = _load_config(args)
    corpus = load_corpus(args.corpus)
    eval_corpus = load_corpus(args.eval_corpus) if args.eval_corpus else None
    axes = [a for a in (args.axes.split(",") if args.axes else []) if a]
    rows = ablate(corpus, config, axes, eval_corpus=eval_corpus)
    csv_text = ablation_table_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    sys.stdout.write(csv_text)
    return 0


def build_parser():
    parser = _Parser(prog="coleaf", description="Weakly supervised audio-visual video parsing")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[], help="generate a synthetic corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--n-videos", type=int, default=500)
    gen.add_argument("--segments", type=int, default=10)
    gen.add_argument("--classes", type=int, default=5)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--event-rate", type=float, default=2.5)
    gen.add_argument("--p-audio-only", type=float, default=0.3)
    gen.add_argument("--p-visual-only", type=float, default=0.3)
    gen.add_argument("--p-audible-visible", type=float, default=0.4)
    gen.add_argument("--leak", type=float, default=0.0)
    gen.add_argument("--noise-sigma", type=float, default=0.1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--eval-out", help="also write a held-out corpus from the same prototypes")
    gen.add_argument("--eval-videos", type=int, default=0)
    gen.set_defaults(func=_cmd_gen_data)

    tr = sub.add_parser("train", help="train both branches on a corpus")
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--eval-corpus")
    tr.add_argument("--config")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out", required=True, help="output directory for params and log")
    tr.set_defaults(func=_cmd_train)

    pr = sub.add_parser("predict", help="write segment probabilities for a corpus")
    pr.add_argument("--params", required=True)
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--branch", choices=("anchor", "reference"), default="anchor")
    pr.add_argument("--unimodal-only", action="store_true")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=_cmd_predict)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--threshold", type=_parse_threshold, default=0.5)
    ev.add_argument("--out")
    ev.set_defaults(func=_cmd_eval)

    ab = sub.add_parser("ablate", help="train and compare configuration variants")
    ab.add_argument("--corpus", required=True)
    ab.add_argument("--eval-corpus")
    ab.add_argument("--config")
    ab.add_argument("--seed", type=int)
    ab.add_argument("--axes", default="", help="comma-separated config switches to toggle")
    ab.add_argument("--out")
    ab.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    except ConfigError as err:
        # bad flag values are usage errors
        sys.stderr.write(f"coleaf: error: {err}\n")
        return 1
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError) as err:
        path = getattr(err, "filename", None)
        sys.stderr.write(f"coleaf: error: cannot read {path or err}\n")
        return 2
    except (
        FileFormatError,
        AlignmentError,
        ConfigError,
        DimensionError,
        ContractError,
        DivergenceError,
    ) as err:
        sys.stderr.write(f"coleaf: error: {err}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
