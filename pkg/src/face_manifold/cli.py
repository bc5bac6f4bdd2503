"""Command-line front end: ``face-manifold <subcommand> ...``.

Every subcommand takes a single ``--seed``; all of its randomness is derived
from that seed with ``derive_rng(seed, purpose, *index)``.  JSON outputs start
with a run manifest (subcommand, resolved config, paths, seed, version).
Thread count never enters an output file, so 1-thread and N-thread runs
produce identical bytes.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import derive_rng
from .autoencoder import build, denoise_batch, load_weights, save_weights
from .dataset import (
    CorruptionConfig,
    ParamDataset,
    build_dataset,
    denormalize_shape,
    load_dataset,
    normalize_shape,
    save_dataset,
    split,
    unique_clean,
)
from .evaluator import default_sigma_grid, diversity_report, generate_synthetic, noise_sweep
from .morphable_model import (
    Group,
    export_obj,
    load_model,
    make_toy_model,
    sample_normal_batch,
    save_model,
    synthesize_face,
)
from .trainer import TrainConfig, evaluate_mse, train

THREADS_ENV = "FACE_MANIFOLD_THREADS"


# --- argument types (a bad value is a usage error, exit 2) ----------------------

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonnegative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text):
    value = float(text)
    if not (value > 0 and np.isfinite(value)):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text}")
    return value


def _fraction(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return value


def _named_path(text):
    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {text!r}")
    return name, path


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env is None:
        return 1
    try:
        return _positive_int(env)
    except (ValueError, argparse.ArgumentTypeError):
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")


class UsageError(Exception):
    pass


def manifest(subcommand, config, inputs, outputs, seed):
    return {
        "subcommand": subcommand,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seed": seed,
        "version": __version__,
    }


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _raw(dataset):
    return denormalize_shape(dataset) if dataset.normalization != 1.0 else dataset


# --- subcommands ---------------------------------------------------------------------

def cmd_make_model(args):
    model = make_toy_model(vertex_count=args.vertices, p_id=args.p_id, p_exp=args.p_exp,
                           scale_decay=args.decay, seed=derive_rng(args.seed, "model"))
    save_model(model, args.out)
    print(f"wrote {args.out}: {model.vertex_count} vertices, P_id={model.p_id}, P_exp={model.p_exp}")


def cmd_make_dataset(args):
    model = load_model(args.model)
    group = Group.parse(args.group)
    clean = sample_normal_batch(model, group, args.samples, derive_rng(args.seed, "clean"))
    threads = _threads(args)
    ds = build_dataset(clean, CorruptionConfig(args.sigma, args.copies, args.seed), group, threads)
    if group is Group.IDENTITY:
        ds = normalize_shape(ds)
    train_set, test_set = split(ds, args.test_fraction, args.seed)
    save_dataset(train_set, args.out_train)
    save_dataset(test_set, args.out_test)
    print(f"wrote {len(train_set)} train pairs to {args.out_train}, "
          f"{len(test_set)} test pairs to {args.out_test}")


def cmd_train(args):
    train_set = load_dataset(args.train)
    test_set = load_dataset(args.test)
    config = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                         batch_size=args.batch_size, seed=args.seed, shuffle=not args.no_shuffle)
    threads = _threads(args)
    weights, history = train(build(train_set.param_count), train_set, test_set, config,
                             threads=threads, log=print)
    save_weights(weights, args.out)
    out_mse, in_mse = evaluate_mse(weights, test_set, threads)
    if args.metrics:
        payload = {
            "manifest": manifest(
                "train",
                {"epochs": config.epochs, "learning_rate": config.learning_rate,
                 "batch_size": config.batch_size, "shuffle": config.shuffle},
                {"train": args.train, "test": args.test},
                {"weights": args.out, "metrics": args.metrics},
                args.seed,
            ),
            "train_loss": history.train_loss,
            "test_loss": history.test_loss,
            "test_output_mse": out_mse,
            "test_input_mse": in_mse,
        }
        if not args.no_timing:
            payload["timing"] = {"epoch_seconds": history.epoch_seconds,
                                 "total_seconds": sum(history.epoch_seconds)}
        _write_json(args.metrics, payload)
    print(f"test MSE {in_mse:.5g} -> {out_mse:.5g}; wrote {args.out}")


def cmd_generate(args):
    model = load_model(args.model)
    shape_w = load_weights(args.shape_weights, model.p_id)
    exp_w = load_weights(args.exp_weights, model.p_exp)
    if args.export_obj and args.export_obj > args.count:
        raise UsageError(f"--export-obj {args.export_obj} exceeds --count {args.count}")
    shape_ds, exp_ds = generate_synthetic(model, shape_w, exp_w, args.count, args.k_shape,
                                          args.k_exp, args.seed, _threads(args))
    save_dataset(shape_ds, args.out_shape)
    save_dataset(exp_ds, args.out_exp)
    print(f"wrote {args.count} pairs per group to {args.out_shape} and {args.out_exp}")
    if args.export_obj:
        out_dir = Path(args.obj_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        zero_id, zero_exp = np.zeros(model.p_id), np.zeros(model.p_exp)
        for i in range(args.export_obj):
            meshes = {
                "shape_noisy": synthesize_face(model, shape_ds.noisy[i], zero_exp),
                "shape_denoised": synthesize_face(model, shape_ds.clean[i], zero_exp),
                "exp_noisy": synthesize_face(model, zero_id, exp_ds.noisy[i]),
                "exp_denoised": synthesize_face(model, zero_id, exp_ds.clean[i]),
            }
            for tag, mesh in meshes.items():
                (out_dir / f"face{i:03d}_{tag}.obj").write_text(export_obj(mesh))
        print(f"wrote {4 * args.export_obj} OBJ files to {out_dir}")


def _diversity_samples(path):
    ds = _raw(load_dataset(path))
    # generated sets keep the network output in the clean column; sampled sets
    # repeat each clean vector once per noisy copy
    return unique_clean(ds)


def cmd_evaluate(args):
    if not (args.sweep or args.scatter or args.diversity):
        raise UsageError("evaluate needs at least one of --sweep, --scatter, --diversity")
    threads = _threads(args)
    if args.sweep:
        if not (args.weights and args.dataset):
            raise UsageError("--sweep needs --weights and --dataset")
        ds = _raw(load_dataset(args.dataset))
        weights = load_weights(args.weights, ds.param_count)
        if args.sigmas:
            sigmas = sorted(args.sigmas)
        elif args.sigma_train:
            sigmas = default_sigma_grid(args.sigma_train, args.points)
        else:
            raise UsageError("--sweep needs --sigma-train or --sigmas")
        result = noise_sweep(weights, unique_clean(ds), sigmas, args.copies, args.seed,
                             ds.group, threads)
        result.write_csv(args.sweep)
        print(f"wrote {len(result.sigma)} sweep rows to {args.sweep}")
    if args.scatter or args.diversity:
        if not args.data:
            raise UsageError("--scatter/--diversity need at least one --data NAME=PATH")
        report = diversity_report([(n, _diversity_samples(p)) for n, p in args.data],
                                  args.sample_count)
        if args.scatter:
            report.write_scatter_csv(args.scatter, cap=args.scatter_cap)
            print(f"wrote scatter projections to {args.scatter}")
        if args.diversity:
            m = manifest(
                "evaluate",
                {"sample_count": args.sample_count, "scatter_cap": args.scatter_cap},
                dict(args.data),
                {"diversity": args.diversity},
                args.seed,
            )
            Path(args.diversity).write_text(report.to_json(m) + "\n")
            print(f"wrote diversity report to {args.diversity}")


def cmd_denoise(args):
    ds = load_dataset(args.input)
    weights = load_weights(args.weights, ds.param_count)
    raw = _raw(ds)
    if ds.group is Group.IDENTITY:
        out = denoise_batch(weights, raw.noisy / 1e5, _threads(args)) * 1e5
    else:
        out = denoise_batch(weights, raw.noisy, _threads(args))
    save_dataset(ParamDataset(ds.group, out, raw.noisy), args.out)
    print(f"wrote {len(out)} denoised vectors to {args.out}")


# --- parser --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="face-manifold",
                                     description="Denoising autoencoders for morphable-model parameters.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=_nonnegative_int, default=0)
        p.add_argument("--threads", type=_positive_int, default=None,
                       help=f"worker threads (default: ${THREADS_ENV} or 1)")
        return p

    p = command("make-model", cmd_make_model, "write a procedural toy morphable model")
    p.add_argument("--vertices", type=_positive_int, default=642)
    p.add_argument("--p-id", type=_positive_int, default=199)
    p.add_argument("--p-exp", type=_positive_int, default=29)
    p.add_argument("--decay", type=_positive_float, default=0.8)
    p.add_argument("--out", required=True)

    p = command("make-dataset", cmd_make_dataset, "sample, corrupt and split a training set")
    p.add_argument("--model", required=True)
    p.add_argument("--group", choices=["expression", "shape", "identity"], required=True)
    p.add_argument("--samples", type=_positive_int, default=400)
    p.add_argument("--sigma", type=_positive_float, required=True)
    p.add_argument("--copies", type=_positive_int, default=50)
    p.add_argument("--test-fraction", type=_fraction, default=0.1)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)

    p = command("train", cmd_train, "train a denoising autoencoder")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--epochs", type=_positive_int, default=10)
    p.add_argument("--learning-rate", type=_positive_float, default=0.001)
    p.add_argument("--batch-size", type=_positive_int, default=128)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="metrics JSON path")
    p.add_argument("--no-timing", action="store_true",
                   help="leave wall-clock times out of the metrics file")

    p = command("generate", cmd_generate, "denoise uniformly drawn parameters into a synthetic set")
    p.add_argument("--model", required=True)
    p.add_argument("--shape-weights", required=True)
    p.add_argument("--exp-weights", required=True)
    p.add_argument("--count", type=_nonnegative_int, default=2000)
    p.add_argument("--k-shape", type=_positive_float, default=10.0)
    p.add_argument("--k-exp", type=_positive_float, default=15.0)
    p.add_argument("--out-shape", required=True)
    p.add_argument("--out-exp", required=True)
    p.add_argument("--export-obj", type=_nonnegative_int, default=0, metavar="N",
                   help="also write N faces as noisy/denoised OBJ meshes")
    p.add_argument("--obj-dir", default="meshes")

    p = command("evaluate", cmd_evaluate, "noise sweeps, PCA scatter and diversity reports")
    p.add_argument("--sweep", metavar="CSV")
    p.add_argument("--weights")
    p.add_argument("--dataset")
    p.add_argument("--sigma-train", type=_positive_float)
    p.add_argument("--sigmas", type=_positive_float, nargs="+")
    p.add_argument("--points", type=_positive_int, default=9)
    p.add_argument("--copies", type=_positive_int, default=1)
    p.add_argument("--scatter", metavar="CSV")
    p.add_argument("--scatter-cap", type=_positive_int, default=70)
    p.add_argument("--diversity", metavar="JSON")
    p.add_argument("--data", type=_named_path, action="append", metavar="NAME=PATH")
    p.add_argument("--sample-count", type=_positive_int, default=2000)

    p = command("denoise", cmd_denoise, "denoise the noisy column of a dataset file")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
