"""Command-line entry point: ``misca {train,eval,predict,gradcheck,inspect,synth}``.

Configuration comes from an optional flat ``key = value`` file (``--config``)
overridden by flags; ``--set key=value`` reaches any training field without a
dedicated flag. The effective configuration is echoed as ``# key=value`` lines
at the top of every text artifact.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import torch

from . import plotting
from .coattention import dump_stack
from .corpus import CorpusError, build_hierarchy, dump_hierarchy, load_splits, make_batches, parse_corpus, split_path, Vocabularies
from .decoders import predict_intents
from .model import ConfigError, Dims, build_model
from .synthetic import generate, tiny_corpus, write_splits
from .training import (
    TrainConfig,
    TrainingDiverged,
    evaluate_model,
    grid_search,
    model_from_checkpoint,
    model_gradcheck,
    predict,
    read_checkpoint,
    save_checkpoint,
    train,
)

logger = logging.getLogger("misca")

GRADCHECK_DIMS = Dims(word_dim=3, word_hidden=2, sa_dim=3, char_dim=2, char_hidden=2, task_hidden=2, d_a=3, d_p=2, d_s=3, d=3)

# flag dest -> TrainConfig field
FLAG_FIELDS = {
    "levels": "levels",
    "lam": "lam",
    "word_dim": "word_dim",
    "lr": "lr",
    "epochs": "epochs",
    "seed": "seed",
    "ablation": "ablation",
    "batch_size": "batch_size",
    "hard_bio": "hard_bio",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def _convert(key: str, raw: str):
    types = TrainConfig.field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    kind = types[key]
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def read_config_file(path) -> Dict[str, object]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    out: Dict[str, object] = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = _convert(key, value)
        except ConfigError as e:
            raise ConfigError(f"{path}:{n}: {e}") from None
    return out


def effective_config(args, base: Optional[TrainConfig] = None) -> TrainConfig:
    values: Dict[str, object] = dict(base.to_dict()) if base else {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip()] = _convert(key.strip(), value)
    for dest, key in FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is not None and v is not False:
            values[key] = v
    return TrainConfig.from_dict(values)


def config_echo(cfg: TrainConfig, **extra) -> List[str]:
    lines = [f"# {k}={v}" for k, v in cfg.to_dict().items()]
    return lines + [f"# {k}={v}" for k, v in extra.items()]


def _write(path: Path, lines: Sequence[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _need(args, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)}")


def _load(args):
    _need(args, "checkpoint", "dataset_dir")
    ckpt = read_checkpoint(args.checkpoint)
    cfg = effective_config(args, TrainConfig.from_dict(dict(ckpt.config)))
    model, cfg, vocabs = model_from_checkpoint(ckpt, cfg)
    samples = parse_corpus(split_path(args.dataset_dir, args.split))
    return ckpt, model, cfg, vocabs, samples


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    _need(args, "dataset_dir")
    cfg = effective_config(args)
    splits = load_splits(args.dataset_dir, ("train", "dev"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.tsv"
    with log_path.open("w", encoding="utf-8") as log:
        if args.grid:
            result = grid_search(cfg, splits["train"], splits["dev"], log=log).best
        else:
            result = train(cfg, splits["train"], splits["dev"], log=log)
    save_checkpoint(result.checkpoint, out / "best.ckpt")
    dump_hierarchy(build_hierarchy(splits["train"], result.config.levels), out / "hierarchy.txt")
    _write(out / "config.txt", [f"{k} = {v}" for k, v in result.config.to_dict().items()])
    report, _ = evaluate_model(result.model, splits["dev"], result.vocabs, hard_bio=result.config.hard_bio)
    _write(out / "dev_metrics.kv", config_echo(result.config, best_epoch=result.best_epoch) + report.to_kv().splitlines())
    plotting.training_curves(result.history, out / "curves.png", title=f"{result.config.ablation}, best epoch {result.best_epoch}")
    print(f"best_epoch={result.best_epoch} val_overall_acc={result.checkpoint.val_overall_accuracy:.6f} seconds={result.seconds:.1f}")
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    _, model, cfg, vocabs, samples = _load(args)
    report, _ = evaluate_model(model, samples, vocabs, hard_bio=cfg.hard_bio)
    sys.stdout.write(report.to_table())
    if args.out:
        out = Path(args.out)
        echo = config_echo(cfg, checkpoint=args.checkpoint, split=args.split)
        _write(out / f"metrics_{args.split}.kv", echo + report.to_kv().splitlines())
        if report.per_slot:
            plotting.per_slot_f1(report.per_slot, out / f"per_slot_f1_{args.split}.png")
        print(f"wrote {out}")
    return 0


def format_predictions(samples, preds) -> List[str]:
    lines: List[str] = []
    for s, p in zip(samples, preds):
        lines += [f"{tok}\t{gold}\t{pred}" for tok, gold, pred in zip(s.tokens, s.slot_tags, p.tags)]
        lines.append(f"INTENTS gold={'#'.join(s.intents)} pred={'#'.join(sorted(p.intents))}")
        lines.append("")
    return lines


def cmd_predict(args) -> int:
    _, model, cfg, vocabs, samples = _load(args)
    preds = predict(model, samples, vocabs, hard_bio=cfg.hard_bio)
    lines = config_echo(cfg, checkpoint=args.checkpoint, split=args.split) + [""] + format_predictions(samples, preds)
    path = Path(args.output) if args.output else Path(args.out or ".") / f"predictions_{args.split}.txt"
    _write(path, lines[:-1])
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = effective_config(args, TrainConfig(levels=2, **{f.name: getattr(GRADCHECK_DIMS, f.name) for f in fields(Dims)}))
    samples = tiny_corpus()
    hierarchy = build_hierarchy(samples, cfg.levels)
    vocabs = Vocabularies.build(samples)
    model = build_model(hierarchy, vocabs, cfg.dims, cfg.ablation, cfg.seed)
    # nonzero transitions so their gradient is exercised away from the init point
    with torch.no_grad():
        model.crf.transitions.uniform_(-0.1, 0.1, generator=torch.Generator().manual_seed(cfg.seed))
    batch = make_batches(samples, vocabs, hierarchy, len(samples))[0]
    report = model_gradcheck(model, batch, cfg, step=args.step, tol=args.tol)
    text = "\n".join(config_echo(cfg)) + "\n" + report.format()
    sys.stdout.write(text)
    if args.out:
        _write(Path(args.out) / "gradcheck.tsv", text.rstrip("\n").splitlines())
    return 0 if report.ok else 1


def cmd_inspect(args) -> int:
    _, model, cfg, vocabs, samples = _load(args)
    if model.coattention is None:
        raise ConfigError("checkpoint was trained without co-attention; nothing to inspect")
    if not 0 <= args.index < len(samples):
        raise UsageError(f"--index {args.index} out of range for {len(samples)} utterances")
    sample = samples[args.index]
    h = model.hierarchy
    batch = make_batches([sample], vocabs, h, 1)[0]
    model.eval()
    with torch.no_grad():
        out = model(batch)
    labels: Dict[int, List[str]] = {1: list(h.intent_labels)}
    if model.ablation == "full":
        for k, level in enumerate(h.slot_levels, 2):
            labels[k] = list(level)
    labels[out.stack.length] = list(sample.tokens)
    dest = Path(args.out or ".")
    dest.mkdir(parents=True, exist_ok=True)
    dump_path = dest / f"coattention_{args.split}_{args.index}.txt"
    dump_stack(out.stack, dump_path, labels)
    text = dump_path.read_text(encoding="utf-8")
    _, _, sets = predict_intents(out.intent_logits, out.count_logits, h.intent_labels)
    head = config_echo(cfg, checkpoint=args.checkpoint, split=args.split, index=args.index)
    head.append(f"# utterance={' '.join(sample.tokens)}")
    head.append(f"# gold_intents={'#'.join(sample.intents)} pred_intents={'#'.join(sorted(sets[0]))}")
    dump_path.write_text("\n".join(head) + "\n" + text, encoding="utf-8")
    for t in range(2, out.stack.length + 1):
        plotting.heatmap(
            out.stack.C_at(t)[0].numpy(),
            dest / f"C_{t}_{args.split}_{args.index}.png",
            labels.get(t - 1),
            labels.get(t),
            title=f"C_{t}",
        )
    print(f"wrote {dump_path}")
    return 0


def cmd_synth(args) -> int:
    write_splits(args.out_dir, generate(args.train, args.dev, args.test, args.seed))
    print(f"wrote {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any training field")
    common.add_argument("--levels", type=int, choices=(1, 2))
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--word-dim", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--ablation")
    common.add_argument("--batch-size", type=int)
    common.add_argument("--hard-bio", action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset-dir")
    data.add_argument("--checkpoint")
    data.add_argument("--split", default="test")
    data.add_argument("--out")

    ap = argparse.ArgumentParser(prog="misca", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, data], help="train and keep the best-validation checkpoint")
    p.add_argument("--grid", action="store_true", help="search word_dim x lambda")
    p.set_defaults(func=cmd_train, out="run")

    p = sub.add_parser("eval", parents=[common, data], help="metrics of a checkpoint on one split")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common, data], help="write a prediction file")
    p.add_argument("--output", help="prediction file path (default OUT/predictions_SPLIT.txt)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of a tiny model")
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", parents=[common, data], help="dump co-attention matrices for one utterance")
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_inspect, split="dev")

    p = sub.add_parser("synth", help="write a generated train/dev/test corpus")
    p.add_argument("out_dir")
    p.add_argument("--train", type=int, default=20)
    p.add_argument("--dev", type=int, default=10)
    p.add_argument("--test", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, CorpusError, UsageError, TrainingDiverged, FileNotFoundError) as e:
        print(f"misca {args.command}: error: {e}", file=sys.stderr)
        return 2
