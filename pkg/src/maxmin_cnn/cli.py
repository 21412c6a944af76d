"""Command-line interface: train, eval, gradcheck, params, compare.

Exit codes: 0 success, 1 check failure, 2 configuration error,
3 data error, 4 training divergence.
"""
import argparse
import json
import os
import sys

import numpy as np

import importlib

from . import data as D
from . import models
from .errors import ConfigError, DataError, DivergenceError, MaxMinError

# the package re-exports train() the function, so fetch the module explicitly
T = importlib.import_module(".train", __package__)

FETCH_HELP = """\
Dataset files were not found. Place them under --data-dir (or $DATA_DIR):
  MNIST (IDX format, decompressed):
    train-images-idx3-ubyte, train-labels-idx1-ubyte,
    t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte
    from http://yann.lecun.com/exdb/mnist/ (gunzip the four .gz files)
  CIFAR-10 (binary version):
    data_batch_1.bin .. data_batch_5.bin, test_batch.bin
    from https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"""


def _parse_filters(text, n=3):
    try:
        filters = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--filters must be comma-separated integers, got {text!r}")
    if len(filters) != n or any(f < 1 for f in filters):
        raise ConfigError(f"--filters needs {n} positive counts, got {text!r}")
    return filters


def load_dataset(name, data_dir, train_subset=None, seed=0, val_fraction=0.1):
    """Returns (train, val, test) splits for mnist or cifar10."""
    if not data_dir:
        raise DataError("no data directory given (use --data-dir or $DATA_DIR)\n" + FETCH_HELP)
    if name == "mnist":
        paths = [os.path.join(data_dir, p) for p in
                 ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                  "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")]
        if not all(os.path.exists(p) for p in paths):
            raise DataError(f"missing MNIST files in {data_dir}\n" + FETCH_HELP)
        full = D.load_mnist(paths[0], paths[1])
        test = D.load_mnist(paths[2], paths[3])
    else:
        batches = [os.path.join(data_dir, f"data_batch_{i}.bin") for i in range(1, 6)]
        test_path = os.path.join(data_dir, "test_batch.bin")
        if not all(os.path.exists(p) for p in batches + [test_path]):
            raise DataError(f"missing CIFAR-10 files in {data_dir}\n" + FETCH_HELP)
        full = D.load_cifar10(batches)
        test = D.load_cifar10([test_path])
    if train_subset:
        full = full.subset(np.arange(min(train_subset, len(full))))
    train_split, val_split = D.split_train_val(full, val_fraction, seed)
    return train_split, val_split, test


def build_net(dataset, arch, filters=None, boost=False, seed=0, dtype=np.float64):
    if dataset == "mnist":
        if boost:
            raise ConfigError("--boost applies to cifar10 only")
        return models.build_mnist(arch, filters or (64, 64, 64), seed=seed, dtype=dtype)
    return models.build_cifar(arch, filters or (32, 32, 64), boost=boost, seed=seed, dtype=dtype)


def _print_config(args):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config: {json.dumps(resolved, default=str)}")


def cmd_train(args):
    _print_config(args)
    filters = _parse_filters(args.filters) if args.filters else None
    dtype = np.float32 if args.float32 else np.float64
    net = build_net(args.dataset, args.arch, filters, boost=args.boost,
                    seed=args.seed, dtype=dtype)
    train_split, val_split, test = load_dataset(
        args.dataset, args.data_dir, train_subset=args.subset, seed=args.seed)
    if dtype is np.float32:
        for split in (train_split, val_split, test):
            split.images = split.images.astype(np.float32)
    config = T.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        learning_rate=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
        patience=args.patience, lr_factor=args.lr_factor,
        augment=args.boost, hflip=args.dataset != "mnist", zca=args.boost,
        checkpoint_every=args.checkpoint_every, out_dir=args.out, eval_test=True,
    )
    net, metrics = T.train(net, train_split, val_split, config, test_data=test)
    if metrics:
        last = metrics[-1]
        print(f"final: val_acc={last.val_acc:.4f} test_acc={last.test_acc:.4f} "
              f"params={net.param_count()}")
    return 0


def cmd_eval(args):
    _print_config(args)
    filters = _parse_filters(args.filters) if args.filters else None
    if args.dataset == "mnist":
        spec = models.mnist_spec(args.arch, filters or (64, 64, 64))
    else:
        spec = models.cifar_spec(args.arch, filters or (32, 32, 64), boost=args.boost)
    net = models.load_weights(args.weights, spec)
    _, _, test = load_dataset(args.dataset, args.data_dir, seed=args.seed)
    acc = T.evaluate(net, test)
    print(f"test_acc={acc:.6f} n={len(test)}")
    return 0


def cmd_gradcheck(args):
    _print_config(args)
    filters = _parse_filters(args.filters) if args.filters else None
    net = build_net(args.dataset, args.arch, filters, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    shape = (2,) + net.spec.input_shape
    x = rng.random(shape)
    labels = rng.integers(0, net.spec.num_classes, size=2)
    report = T.grad_check(net, x, labels, tolerance=args.tolerance,
                          samples_per_layer=args.samples, seed=args.seed)
    print(report)
    return 0 if report.passed else 1


def cmd_params(args):
    _print_config(args)
    filters = _parse_filters(args.filters) if args.filters else None
    net = build_net(args.dataset, args.arch, filters, boost=args.boost, seed=args.seed)
    for i, (layer, descs) in enumerate(zip(net.layers, net.spec.layers)):
        count = sum(v.size for _, v, _ in layer.params())
        if count:
            print(f"layer {i} {descs['kind']}: {count}")
    print(f"total: {net.param_count()}")
    return 0


def cmd_compare(args):
    _print_config(args)
    budgets = [tuple(int(v) for v in b.split("-")) for b in args.budgets.split(",")]
    rows = []
    for base_filters in budgets:
        mm_filters = models.matched_maxmin_filters(models.cifar_spec, base_filters)
        nets = {}
        accs = {}
        counts = {}
        for arch, filters in (("baseline", base_filters), ("maxmin", mm_filters)):
            net = models.build_cifar(arch, filters, seed=args.seed)
            counts[arch] = net.param_count()
            train_split, val_split, test = load_dataset(
                "cifar10", args.data_dir, train_subset=args.subset, seed=args.seed)
            config = T.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                                   seed=args.seed, learning_rate=args.lr,
                                   weight_decay=args.weight_decay)
            net, _ = T.train(net, train_split, val_split, config)
            accs[arch] = T.evaluate(net, test)
            nets[arch] = net
        rows.append((f"{'-'.join(map(str, base_filters))}",
                     f"{counts['baseline']}/{counts['maxmin']}",
                     f"{accs['baseline']:.4f}", f"{accs['maxmin']:.4f}"))
    print(f"{'budget':>12} {'params base/maxmin':>22} {'base_acc':>9} {'maxmin_acc':>10}")
    for row in rows:
        print(f"{row[0]:>12} {row[1]:>22} {row[2]:>9} {row[3]:>10}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("budget,baseline_params,maxmin_params,baseline_acc,maxmin_acc\n")
            for row in rows:
                base_p, mm_p = row[1].split("/")
                fh.write(f"{row[0]},{base_p},{mm_p},{row[2]},{row[3]}\n")
    return 0


def _add_common(p, dataset=True):
    if dataset:
        p.add_argument("--dataset", choices=("mnist", "cifar10"), required=True)
    p.add_argument("--arch", choices=("baseline", "maxmin"), default="baseline")
    p.add_argument("--filters", help="comma-separated conv filter counts, e.g. 32,32,64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", default=os.environ.get("DATA_DIR"))


def make_parser():
    parser = argparse.ArgumentParser(prog="maxmin-cnn")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a preset and write checkpoints + metrics")
    _add_common(p)
    p.add_argument("--boost", action="store_true",
                   help="augmentation + ZCA + dropout + per-pool LRN (cifar10)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--lr-factor", type=float, default=0.1)
    p.add_argument("--subset", type=int, help="limit training images (desk-scale runs)")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--float32", action="store_true", help="single-precision training")
    p.add_argument("--out", default="runs/latest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved weights on the test split")
    _add_common(p)
    p.add_argument("--boost", action="store_true")
    p.add_argument("--weights", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of a preset's gradients")
    _add_common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="print per-layer and total parameter counts")
    _add_common(p)
    p.add_argument("--boost", action="store_true")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("compare", help="train parameter-matched baseline/maxmin pairs")
    _add_common(p, dataset=False)
    p.add_argument("--dataset", choices=("cifar10",), default="cifar10")
    p.add_argument("--budgets", required=True,
                   help="comma-separated baseline filter triples, e.g. 8-8-16,32-32-64")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--subset", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) == "train":
            if args.epochs is None:
                args.epochs = 250 if args.dataset == "mnist" else 60
            if args.weight_decay is None:
                args.weight_decay = 1e-3 if args.dataset == "mnist" else 1e-4
        return args.func(args)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MaxMinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
