"""Command-line entry point: ``freqdrop <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .. import data as D
from ..errors import ConfigError, DataError, NumericError, ParameterError, ShapeError
from ..kernels import FilterFamily, KernelParams, dump_kernel, make_kernel
from ..network import load_checkpoint
from .compare import compare, load_run_records
from .config import Method, TrainConfig, load_config, parse_config_text
from .evaluate import evaluate
from .experiment import run_experiment
from .metrics import records_to_csv, write_records
from .plots import robustness_figure
from .train import train

log = logging.getLogger("freqdrop")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _base_config(path):
    return load_config(path) if path else TrainConfig().validate()


def _parse_grid(text):
    """``all``, ``none``, or comma-separated ``kind`` / ``kind:severity`` items."""
    text = (text or "none").strip().lower()
    if text == "all":
        return D.corruption_grid()
    if text == "none":
        return []
    grid = []
    for item in text.split(","):
        kind, _, sev = item.partition(":")
        if sev:
            grid.append(D.CorruptionSpec(D.CorruptionKind.parse(kind), int(sev)))
        else:
            grid.extend(D.corruption_grid([D.CorruptionKind.parse(kind)]))
    return grid


def _run_identity(ckpt: Path, args):
    """Run id, method and seed for an eval: flags, else the run's saved config."""
    run_id, method, seed = args.run_id, args.method, args.seed
    cfg_path = ckpt.parent / "run.cfg"
    if cfg_path.exists() and (method is None or seed is None or run_id is None):
        items = parse_config_text(cfg_path.read_text())
        method = method or items.get("train.method")
        seed = seed if seed is not None else int(items.get("train.seed", 0))
        run_id = run_id or items.get("train.run_id") or ckpt.parent.name
    return run_id or ckpt.stem, method or "unknown", seed or 0


def cmd_train(args):
    cfg = _base_config(args.config).with_overrides(args.method, args.seed, args.epochs, args.out)
    result = train(cfg, out_dir=cfg.out_dir)
    last = {r.phase: r for r in result.records}
    summary = ", ".join(f"{p} acc {r.accuracy:.4f}" for p, r in last.items())
    print(f"{cfg.name}: {cfg.epochs} epochs in {result.seconds:.1f}s" + (f" ({summary})" if summary else ""))
    print(f"checkpoint: {result.paths['checkpoint']}")
    print(f"metrics: {result.paths['metrics']}")


def cmd_eval(args):
    ckpt = Path(args.ckpt)
    tensors = load_checkpoint(ckpt)
    ds = D.load_dataset(args.data)
    run_id, method, seed = _run_identity(ckpt, args)
    records = evaluate(tensors, ds, _parse_grid(args.grid), run_id=run_id, method=method, seed=seed,
                       epoch=args.epoch, corruption_seed=args.corruption_seed, keep_cbs=args.keep_cbs)
    if args.out:
        write_records(args.out, records)
        print(f"{len(records)} records written to {args.out}")
    else:
        sys.stdout.write(records_to_csv(records))


def cmd_gen_data(args):
    if args.spec != "shortcut":
        raise ConfigError(f"unknown dataset spec {args.spec!r}")
    d = _base_config(args.config).data
    n = args.n or {"train": d.n_train, "val": d.n_val, "test": d.n_test}[args.split]
    ds = D.gen_shortcut_dataset(d.spec, n, args.split, args.seed, rho=args.rho)
    D.save_dataset(args.out, ds)
    print(f"{len(ds)} {args.split} samples written to {args.out}")


def cmd_corrupt(args):
    ds = D.load_dataset(getattr(args, "in"))
    spec = D.CorruptionSpec(D.CorruptionKind.parse(args.kind), args.severity)
    D.save_dataset(args.out, D.corrupt(ds, spec, args.seed))
    print(f"{spec.kind.value} severity {spec.severity} ({spec.parameter}) written to {args.out}")


def cmd_kernel_dump(args):
    family = FilterFamily.parse(args.family)
    params = KernelParams(family, args.sigma, args.size, lam=args.lam, psi=args.psi, gamma=args.gamma, theta=args.theta)
    text = dump_kernel(make_kernel(params, zero_dc=not args.raw_log))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_compare(args):
    records = load_run_records(args.runs, args.eval_name)
    out = Path(args.out)
    text_path = Path(args.text) if args.text else out.with_suffix(".txt")
    rows, text = compare(records, out, text_path)
    sys.stdout.write(text)
    if not args.no_plot:
        plot_path = Path(args.plot) if args.plot else out.with_name(out.stem + "_robustness.png")
        if any(r.phase == "corrupt" for r in rows):
            robustness_figure(rows, plot_path)
            print(f"figure: {plot_path}")
    print(f"comparison: {out}")


def cmd_experiment(args):
    base = _base_config(args.config).with_overrides(epochs=args.epochs)
    if args.n_train or args.n_test:
        d = base.data
        d.n_train = args.n_train or d.n_train
        d.n_test = args.n_test or d.n_test
        d.validate()
    methods = [Method.parse(m) for m in args.methods.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    res = run_experiment(base, args.out, methods, seeds, grid=not args.no_grid, plot=not args.no_plot)
    sys.stdout.write(res.text)
    print(f"training {res.train_seconds:.1f}s, robustness evaluation {res.robustness_seconds:.1f}s")
    for m in methods:
        line = f"{m.value:9s} correlated {res.mean('correlated', m.value):.4f}  decorrelated {res.mean('decorrelated', m.value):.4f}"
        if res.corrupted:
            line += f"  corrupted {res.mean('corrupted', m.value):.4f}"
        print(line)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqdrop", description="Frequency Dropout experiments on a small numpy CNN.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one run from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--method", choices=[m.value for m in Method])
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", help="output directory (default: train.out_dir)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--grid", default="none", help="all, none, or kind[:severity],... (default: none)")
    s.add_argument("--out", help="metrics CSV path (default: stdout)")
    s.add_argument("--run-id")
    s.add_argument("--method")
    s.add_argument("--seed", type=int)
    s.add_argument("--epoch", type=int, default=0)
    s.add_argument("--corruption-seed", type=int, default=0)
    s.add_argument("--keep-cbs", action="store_true", help="keep the final CBS smoothing at inference")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    s.add_argument("--spec", default="shortcut")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", choices=["train", "val", "test"], default="train")
    s.add_argument("--n", type=int, help="number of samples (default: from config)")
    s.add_argument("--rho", type=float, help="override the split's grating correlation")
    s.add_argument("--config", help="take data.* settings from this config")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("corrupt", help="apply one corruption to a dataset file")
    s.add_argument("--in", required=True)
    s.add_argument("--kind", required=True)
    s.add_argument("--severity", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("kernel-dump", help="print a filter kernel")
    s.add_argument("--family", required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--lam", "--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--psi", type=float, default=0.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--theta", type=float, default=0.0)
    s.add_argument("--raw-log", action="store_true", help="skip the zero-DC correction of LoG kernels")
    s.add_argument("--out")
    s.set_defaults(func=cmd_kernel_dump)

    s = sub.add_parser("compare", help="compare evaluated runs across seeds")
    s.add_argument("--runs", required=True)
    s.add_argument("--out", required=True, help="comparison CSV path")
    s.add_argument("--eval-name", default="eval.csv", help="per-run metrics file to read")
    s.add_argument("--text", help="aligned text table path (default: next to the CSV)")
    s.add_argument("--plot", help="robustness figure path (default: next to the CSV)")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("experiment", help="train, evaluate and compare all methods and seeds")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--methods", default=",".join(m.value for m in Method))
    s.add_argument("--seeds", default="0,1")
    s.add_argument("--epochs", type=int)
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-test", type=int)
    s.add_argument("--no-grid", action="store_true", help="skip the corruption grid")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ConfigError, ParameterError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
