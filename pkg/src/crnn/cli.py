"""Command-line entry point.

Subcommands: gen-data, train-cnn, extract-features, train-crnn, eval, decode,
gradcheck.  Settings come from ``--config`` first and individual flags
second.  Exit codes: 0 success, 1 usage error, 2 data or format error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import __version__
from .checkpoint import Checkpoint, cnn_from, model_checkpoint, stack_from, standardizer_from
from .config import Config
from .data import RenderSpec, generate_dataset, load_dataset, save_dataset
from .decode import best_path_decode
from .errors import FormatError, UsageError
from .features import CnnTrainConfig, train_cnn
from .metrics import format_report
from .numerics import Rng
from .pipeline import CrnnModel, cnn_baseline_decode, crop_set, extract_features, fit_on, standardized
from .recurrent import init_stack
from .train import CrnnTrainConfig, check_stack_gradients, gradcheck_instance, train_crnn

log = logging.getLogger("crnn")

GRADCHECK_THRESHOLD = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _digits(target) -> str:
    return "".join(str(c) for c in target)


def _config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "layers", None) is not None:
        cfg = cfg.with_layers(args.layers)
    for flag in ("seed", "epochs", "lr"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = replace(cfg, **{flag: value})
    return cfg.validate()


def _write_tensor_file(path, tensors, text) -> None:
    try:
        Checkpoint(tensors, text).save(path)
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from None


def _load_features(path, samples) -> None:
    feats = Checkpoint.load(path)
    for s in samples:
        if s.name not in feats.tensors:
            raise FormatError(f"{path}: no features for sample {s.name}")
        f = feats.tensors[s.name]
        if f.ndim != 2:
            raise FormatError(f"{path}: features for {s.name} are not [T, D]")
        s.features = f


# --------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    spec = RenderSpec(num_digits=(cfg.min_digits, cfg.max_digits), jitter=cfg.jitter, noise_level=cfg.noise)
    count = args.count if args.count is not None else cfg.num_samples
    samples = generate_dataset(count, cfg.seed, spec, start=args.start)
    save_dataset(args.out, samples)
    print(f"samples\t{len(samples)}")
    return 0


def cmd_train_cnn(args) -> int:
    cfg = _config(args)
    samples = load_dataset(args.data)
    if not samples:
        raise FormatError(f"{args.data}: dataset is empty")
    frames, labels = crop_set(samples, cfg.window)
    tc = CnnTrainConfig(
        lr=cfg.lr if args.lr is not None else cfg.cnn_lr,
        momentum=cfg.cnn_momentum,
        epochs=cfg.epochs if args.epochs is not None else cfg.cnn_epochs,
        batch_size=cfg.cnn_batch_size,
        val_fraction=cfg.val_fraction,
        seed=cfg.seed,
    )
    res = train_cnn(frames, labels, tc)
    for h in res.history:
        print(f"{h['epoch']}\t{h['loss']:.6f}\t{h['val_acc']:.6f}")
    model_checkpoint(cnn=res.params, config_text=cfg.to_text()).save(args.out)
    print(f"best_epoch\t{res.best_epoch}\nbest_val_acc\t{res.best_val_acc:.6f}")
    return 0


def cmd_extract_features(args) -> int:
    cfg = _config(args)
    cnn = cnn_from(Checkpoint.load(args.model))
    samples = load_dataset(args.data)
    extract_features(samples, cnn, cfg.window, cfg.stride)
    _write_tensor_file(
        args.out,
        {s.name: s.features for s in samples},
        f"kind=features\nwindow={cfg.window}\nstride={cfg.stride}\n",
    )
    print(f"samples\t{len(samples)}")
    return 0


def cmd_train_crnn(args) -> int:
    cfg = _config(args)
    cnn = cnn_from(Checkpoint.load(args.model))
    train = load_dataset(args.data)
    if not train:
        raise FormatError(f"{args.data}: dataset is empty")
    _load_features(args.features, train)
    val = None
    if args.val_data:
        if not args.val_features:
            raise UsageError("--val-data requires --val-features")
        val = load_dataset(args.val_data)
        _load_features(args.val_features, val)
    std = fit_on(train)
    train_s = standardized(train, std)
    val_s = standardized(val, std) if val else None
    params = init_stack(Rng(cfg.seed), train_s[0].features.shape[1], cfg.hidden, cfg.num_classes)
    tc = CrnnTrainConfig(
        lr=cfg.lr,
        momentum=cfg.momentum,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        clip=cfg.clip,
        val_fraction=cfg.val_fraction,
        seed=cfg.seed,
    )
    log_fh = open(args.log, "a", encoding="utf-8", newline="\n") if args.log else None

    def on_epoch(rec):
        line = rec.log_line()
        print(line, flush=True)
        if log_fh is not None:
            log_fh.write(line + "\n")
            log_fh.flush()

    try:
        res = train_crnn(train_s, params, tc, val_samples=val_s, on_epoch=on_epoch)
    finally:
        if log_fh is not None:
            log_fh.close()
    best = res.best_by_ctc if args.select == "ctc" else res.best_by_label
    model_checkpoint(cnn, best, std, cfg.to_text()).save(args.out)
    print(f"best_ctc_epoch\t{res.best_ctc_epoch}\nbest_label_epoch\t{res.best_label_epoch}")
    return 0


def _model(path) -> CrnnModel:
    ckpt = Checkpoint.load(path)
    cfg = Config.from_text(ckpt.text, f"{path} config") if ckpt.text else Config()
    return CrnnModel(cnn_from(ckpt), stack_from(ckpt), standardizer_from(ckpt), window=cfg.window, stride=cfg.stride)


def cmd_eval(args) -> int:
    samples = load_dataset(args.data)
    if not samples:
        raise FormatError(f"{args.data}: dataset is empty")
    if args.baseline:
        cfg = _config(args)
        cnn = cnn_from(Checkpoint.load(args.model))
        hyps = [cnn_baseline_decode(s, cnn, cfg.window, cfg.stride) for s in samples]
    else:
        hyps = _model(args.model).decode_all(samples)
    try:
        sys.stdout.write(format_report(list(zip(hyps, [s.target for s in samples]))))
    except UsageError as exc:
        raise FormatError(str(exc)) from None
    return 0


def cmd_decode(args) -> int:
    if args.probs:
        probs = Checkpoint.load(args.probs)
        for name, y in probs.tensors.items():
            if y.ndim != 2:
                raise FormatError(f"{args.probs}: section {name} is not [T, K]")
            print(f"{name}\t{_digits(best_path_decode(y))}")
        return 0
    if not (args.model and args.data):
        raise UsageError("decode needs --probs, or --model and --data")
    model = _model(args.model)
    samples = load_dataset(args.data)
    for s, hyp in zip(samples, model.decode_all(samples)):
        print(f"{s.name}\t{_digits(hyp)}")
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    report = check_stack_gradients(gradcheck_instance(seed), eps=args.eps)
    sys.stdout.write(str(report))
    passed = report.max_rel_error < GRADCHECK_THRESHOLD
    print(f"status\t{'pass' if passed else 'fail'}")
    return 0 if passed else 2


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crnn", description="CNN + bidirectional LSTM + CTC digit-string recogniser")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, *extra):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        if "train" in extra:
            sp.add_argument("--layers", type=int, choices=(1, 2))
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--lr", type=float)
        return sp

    sp = common(sub.add_parser("gen-data", help="render a synthetic dataset"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int)
    sp.add_argument("--start", type=int, default=0, help="index of the first sample")
    sp.set_defaults(func=cmd_gen_data)

    sp = common(sub.add_parser("train-cnn", help="train the frame CNN on glyph crops"), "train")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_cnn)

    sp = common(sub.add_parser("extract-features", help="cache CNN features for a dataset"))
    sp.add_argument("--model", required=True, help="checkpoint holding CNN parameters")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract_features)

    sp = common(sub.add_parser("train-crnn", help="train the recurrent stack with CTC"), "train")
    sp.add_argument("--model", required=True, help="CNN checkpoint to bundle")
    sp.add_argument("--data", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--val-data")
    sp.add_argument("--val-features")
    sp.add_argument("--select", choices=("ctc", "label"), default="label", help="model selection criterion")
    sp.add_argument("--log", help="append per-epoch lines to this file")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_crnn)

    sp = common(sub.add_parser("eval", help="report accuracy on a dataset"))
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--baseline", action="store_true", help="frame-wise CNN with repeat merging")
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("decode", help="best-path decode"))
    sp.add_argument("--model")
    sp.add_argument("--data")
    sp.add_argument("--probs", help="tensor file of [T, K] probability sections")
    sp.set_defaults(func=cmd_decode)

    sp = common(sub.add_parser("gradcheck", help="finite-difference check of BPTT gradients"))
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
