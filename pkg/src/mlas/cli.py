"""``mlas`` command line: synth, pretrain, train, embed, eval, gradcheck.

Exit codes: 0 ok, 1 configuration error, 2 input/output error,
3 training divergence, 4 gradient check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .data import load_dataset, load_feedback, save_dataset, save_feedback
from .errors import (
    ConfigError,
    DivergenceError,
    EncodingError,
    LengthError,
    ParseError,
    SchemaError,
    ShapeError,
    UnknownIdError,
)
from .evaluation import evaluate, format_table, load_embeddings, load_truth, save_embeddings, save_report, save_truth
from .metric import embed_all, pretrain, train
from .synth import generate

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE, EXIT_GRADCHECK = 0, 1, 2, 3, 4

DATASET = "dataset.jsonl"
FEEDBACK = "feedback.csv"
TRUTH = "truth.csv"
PRETRAINED = "pretrained.json"
CHECKPOINT = "model.json"
REPORT = "train_report.jsonl"
EMB_BEFORE = "embeddings_before.jsonl"
EMB_AFTER = "embeddings_after.jsonl"
EVAL_REPORT = "eval_report.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors share the configuration exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _header(cfg) -> str:
    return "config " + json.dumps(cfg.to_dict(), sort_keys=True)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    return out


def _input(args, name, default):
    value = getattr(args, name, None)
    return Path(value) if value else Path(args.out_dir) / default


def _load_data(args, need_feedback=True):
    dataset = load_dataset(_input(args, "dataset", DATASET))
    feedback = load_feedback(_input(args, "feedback", FEEDBACK), dataset) if need_feedback else None
    return dataset, feedback


def _check_model(model, dataset):
    if model.attr_dim != dataset.u or model.item_dim != dataset.r:
        raise ShapeError(f"model expects (u, r) = ({model.attr_dim}, {model.item_dim}), "
                         f"dataset has ({dataset.u}, {dataset.r})")


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args, cfg):
    out = _out_dir(args)
    dataset, truth, feedback = generate(cfg.synth_spec())
    header = _header(cfg)
    save_dataset(dataset, out / DATASET, header)
    save_feedback(feedback, out / FEEDBACK, header)
    save_truth(truth, out / TRUTH, header)
    n_sim = sum(t.label == 0 for t in feedback)
    print(f"n={len(dataset)} u={dataset.u} r={dataset.r} T={dataset.T} "
          f"feedback={len(feedback)} (similar={n_sim}, dissimilar={len(feedback) - n_sim})")
    print(f"wrote {out / DATASET}, {out / FEEDBACK}, {out / TRUTH}")
    return EXIT_OK


def cmd_pretrain(args, cfg):
    out = _out_dir(args)
    dataset, _ = _load_data(args, need_feedback=False)
    tc = cfg.training_config()
    history = []
    model = pretrain(cfg.init_model(dataset.u, dataset.r), dataset, tc, history)
    config = cfg.to_dict()
    save_checkpoint(model, out / PRETRAINED, config)
    save_embeddings(embed_all(model, dataset), out / EMB_BEFORE, config)
    if history:
        print(f"pre-training loss {history[0]:.6f} -> {history[-1]:.6f} over {len(history)} epochs")
    print(f"wrote {out / PRETRAINED}, {out / EMB_BEFORE}")
    return EXIT_OK


def cmd_train(args, cfg):
    out = _out_dir(args)
    dataset, feedback = _load_data(args)
    tc = cfg.training_config()
    if args.init:
        model, _ = load_checkpoint(args.init)
        _check_model(model, dataset)
    else:
        model = cfg.init_model(dataset.u, dataset.r)
        if not args.no_pretrain:
            model = pretrain(model, dataset, tc)
    config = cfg.to_dict()
    config["no_pretrain"] = bool(args.no_pretrain)
    save_embeddings(embed_all(model, dataset), out / EMB_BEFORE, config)
    trained, report = train(model, feedback, dataset, tc)
    save_checkpoint(trained, out / CHECKPOINT, config)
    report.save(out / REPORT, config)
    save_embeddings(embed_all(trained, dataset), out / EMB_AFTER, config)
    if report.train_loss:
        print(f"train loss {report.train_loss[0]:.6f} -> {report.train_loss[-1]:.6f}; "
              f"{report.iterations} epochs, stop: {report.stop_reason}, best epoch: {report.best_epoch}")
    else:
        print("no training epochs run")
    print(f"wrote {out / CHECKPOINT}, {out / REPORT}, {out / EMB_BEFORE}, {out / EMB_AFTER}")
    return EXIT_OK


def cmd_embed(args, cfg):
    out = _out_dir(args)
    dataset, _ = _load_data(args, need_feedback=False)
    model, _ = load_checkpoint(_input(args, "checkpoint", CHECKPOINT))
    _check_model(model, dataset)
    target = Path(args.output) if args.output else out / EMB_AFTER
    save_embeddings(embed_all(model, dataset), target, cfg.to_dict())
    print(f"wrote {len(dataset)} embeddings to {target}")
    return EXIT_OK


def cmd_eval(args, cfg):
    out = _out_dir(args)
    files = args.embeddings or [out / EMB_BEFORE, out / EMB_AFTER]
    if len(files) > 2:
        raise UsageError("eval takes one or two embedding files")
    truth = load_truth(_input(args, "truth", TRUTH))
    feedback = ()
    fb_path = _input(args, "feedback", FEEDBACK)
    if args.feedback or fb_path.exists():
        # feedback ids only need to resolve against the embedded items
        dataset_ids = _IdSet(truth.assignment)
        feedback = load_feedback(fb_path, dataset_ids)
    ev = cfg.eval
    reports = []
    for path in files:
        embeddings, _ = load_embeddings(path)
        label = Path(path).stem.removeprefix("embeddings_")
        reports.append(evaluate(embeddings, truth, feedback, k=ev.k, seed=cfg.seed, max_iters=ev.max_iters,
                                n_init=ev.n_init, label=label, config=cfg.to_dict()))
    print(format_table(reports))
    target = Path(args.output) if args.output else out / EVAL_REPORT
    save_report(reports, target, cfg.to_dict())
    print(f"wrote {target}")
    return EXIT_OK


class _IdSet:
    """Just enough of a dataset for feedback validation."""

    def __init__(self, ids):
        self._ids = set(ids)

    def __contains__(self, id_):
        return id_ in self._ids


def cmd_gradcheck(args, cfg):
    gc = cfg.gradcheck
    n = args.instances if args.instances is not None else gc.n_instances
    rows = gradcheck.run(n_instances=n, seed=cfg.seed, activation=gc.activation, corrupt=args.corrupt)
    failures = [(v, t, e) for v, t, e in rows if not e < gradcheck.TOLERANCE]
    print(f"{'variant':<12} {'tensor':<20} {'max rel err':>12}  status")
    for variant, tensor, err in rows:
        status = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{variant:<12} {tensor:<20} {err:>12.3e}  {status}")
    if failures:
        for variant, tensor, err in failures:
            print(f"gradient check failed: {variant} {tensor} max relative error {err:.3e}", file=sys.stderr)
        return EXIT_GRADCHECK
    print(f"all {len(rows)} tensors below {gradcheck.TOLERANCE:g}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration file")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--out-dir", default=".", help="directory for inputs and outputs (default: .)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value; may repeat")

    parser = _Parser(prog="mlas", description="Metric learning on attributed sequences.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset, feedback and truth")

    p = sub.add_parser("pretrain", parents=[common], help="reconstruction pre-training only")
    p.add_argument("--dataset")

    p = sub.add_parser("train", parents=[common], help="pre-train (optional) and train on feedback")
    p.add_argument("--dataset")
    p.add_argument("--feedback")
    p.add_argument("--init", help="start from this checkpoint instead of a fresh model")
    p.add_argument("--no-pretrain", action="store_true", help="skip reconstruction pre-training")

    p = sub.add_parser("embed", parents=[common], help="embed a dataset with a checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--output")

    p = sub.add_parser("eval", parents=[common], help="k-means + NMI evaluation of embeddings")
    p.add_argument("--embeddings", nargs="+", help="one or two embedding files (default: before and after)")
    p.add_argument("--truth")
    p.add_argument("--feedback")
    p.add_argument("--output")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    p.add_argument("--instances", type=int, help="random instances per variant")
    p.add_argument("--corrupt", metavar="TENSOR", help=argparse.SUPPRESS)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.showwarning = _show_warning
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        return COMMANDS[args.command](args, cfg)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, ParseError, SchemaError, EncodingError, LengthError, UnknownIdError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ShapeError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
