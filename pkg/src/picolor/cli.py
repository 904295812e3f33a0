"""Command-line entry point (``picolor``).

Exit codes: 0 success, 1 usage (bad flag, missing file), 2 validation
(bad config, bad data, incompatible checkpoint), 3 runtime failure.
"""

import argparse
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("picolor")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _existing(path):
    if not Path(path).exists():
        raise UsageError(f"no such file or directory: {path}")
    return path


def _git_describe():
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, timeout=10, cwd=Path(__file__).resolve().parent)
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _write_run_json(out, args, run=None, started=None, extra=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": args.command,
        "argv": sys.argv[1:],
        "git_describe": _git_describe(),
        "wallclock_s": round(time.perf_counter() - started, 3) if started else None,
        "threads": args.threads,
    }
    if run is not None:
        record["config"] = run.values
        record["config_hash"] = run.content_hash()
        record["provenance"] = run.provenance
    record.update(extra or {})
    (out / "run.json").write_text(json.dumps(record, indent=1, sort_keys=True, default=str))


def _load_data(run, path):
    from .data import load_dataset

    limit = run["data.limit"] or None
    return load_dataset(path, run["data.resolution"], run["model.factor"], run["data.heldout_fraction"], limit)


def _load_model(ckpt_path):
    from .training import load_checkpoint

    state = load_checkpoint(_existing(ckpt_path))
    return state


# ---------------------------------------------------------------- commands

def cmd_train(args):
    from .config import load_config
    from .data import write_manifest
    from .training import train

    started = time.perf_counter()
    run = load_config(_existing(args.config) if args.config else None, args.set)
    print(run.describe())
    ds = _load_data(run, _existing(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(ds, out / "manifest.json")
    state = train(run, ds, out, resume=_existing(args.resume) if args.resume else None)
    final = state.metrics[-1] if state.metrics else {}
    _write_run_json(out, args, run, started, {"iteration": state.iteration, "final": final})
    print(json.dumps({"iteration": state.iteration, "heldout_bpd": final.get("heldout_bpd")}))
    return EXIT_OK


def cmd_colorize(args):
    from .evaluation import colorize

    started = time.perf_counter()
    state = _load_model(args.ckpt)
    if state.run["model.variant"] != "full":
        raise ValueError("colorize samples from the full model; use the embedding-only MAP via eval tools")
    res = colorize(state.model, _existing(args.input), args.samples, args.seed, args.out, args.weights,
                   stem=Path(args.input).stem)
    _write_run_json(args.out, args, state.run, started)
    for k, (nll, sat) in enumerate(zip(res.nll, res.saturation)):
        print(f"sample {k}: nll {nll:.3f} nats, saturation {sat:.2f}%")
    return EXIT_OK


def cmd_sample_grid(args):
    from .evaluation import sample_grid

    started = time.perf_counter()
    state = _load_model(args.ckpt)
    ds = _load_data(state.run, _existing(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = sample_grid(state.model, ds, args.n, args.seed, out / "grid.png", variant=args.weights)
    _write_run_json(out, args, state.run, started)
    print(path)
    return EXIT_OK


def cmd_eval(args):
    from .evaluation import evaluate_bpd

    state = _load_model(args.ckpt)
    ds = _load_data(state.run, _existing(args.data))
    rep = evaluate_bpd(state.model, ds, args.weights, args.split, state.run["training.batch_size"],
                       state.run.content_hash(), args.table)
    print(rep.to_json())
    return EXIT_OK


def cmd_ablate(args):
    from .ablation import ablate
    from .config import load_config

    started = time.perf_counter()
    run = load_config(_existing(args.config) if args.config else None, args.set)
    ds = _load_data(run, _existing(args.data))
    report, _ = ablate(run, ds, args.out, n_saturation=args.n_saturation)
    _write_run_json(args.out, args, run, started)
    keys = ("gated_bpd", "ungated_bpd", "control_bpd", "gating_ordering_holds", "saturation",
            "saturation_ordering_holds")
    print(json.dumps({k: report.get(k) for k in keys}, indent=1))
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest

    ok = run_selftest(quick=args.quick)
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_pmf_csv(args):
    from . import colorspace as cs
    from .mixture import MixtureParams, pmf_enumerate

    state = _load_model(args.ckpt)
    model = state.model
    pix = cs.read_png(_existing(args.input))
    if pix.ndim == 2:
        L = cs.gray_to_luminance(pix)
        h, w = L.shape
        chroma = np.zeros((1, 2, h // model.factor, w // model.factor))
    else:
        from .data import image_to_example

        lum, chroma, _, _, _ = image_to_example(pix, model.factor)
        L = (lum[0] + 1.0) * 50.0
        chroma = chroma[None]
    p = model.params(args.weights)
    lum = cs.normalize_luminance(L)[None, None]
    field = model.mixture_field(p, lum, chroma) if state.run["model.variant"] == "full" \
        else model.mixture_field(p, lum)
    hh, ww = field.shape[2:]
    if not (0 <= args.row < hh and 0 <= args.col < ww):
        raise ValueError(f"pixel ({args.row}, {args.col}) is outside the {hh}x{ww} chroma grid")
    params = MixtureParams.from_channels(field.data[0, :, args.row, args.col], axis=0)
    grid = pmf_enumerate(params, model.n_levels, model.floor)
    np.savetxt(args.out, grid, delimiter=",", fmt="%.8e")
    print(f"wrote {args.out} (sum {grid.sum():.12f})")
    return EXIT_OK


def cmd_causality_mask(args):
    from . import colorspace as cs
    from .selftest import causality_check

    dep, expected = causality_check(args.grid, seed=args.seed)
    img = np.where(dep, 0, 255).astype(np.uint8)
    img = np.repeat(np.repeat(img, args.scale, 0), args.scale, 1)
    cs.write_png(args.out, np.repeat(img[..., None], 3, axis=2))
    ok = bool(np.array_equal(dep, expected))
    print(f"dependency matrix {'matches' if ok else 'DOES NOT match'} the strict raster-order mask; wrote {args.out}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_make_synthetic(args):
    from .synthetic import write_folder

    paths = write_folder(args.out, args.n, args.size, args.seed, args.noise)
    print(f"wrote {len(paths)} images to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="picolor", description="Probabilistic colorization with an autoregressive chroma model.")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (default: $PIC_THREADS or library default)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resume")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("colorize", help="sample colorizations of a grayscale PNG")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--samples", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--weights", choices=("raw", "polyak"), default="polyak")
    s.set_defaults(func=cmd_colorize)

    s = sub.add_parser("sample-grid", help="montage of inputs, samples and ground truth")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--weights", choices=("raw", "polyak"), default="polyak")
    s.set_defaults(func=cmd_sample_grid)

    s = sub.add_parser("eval", help="bits per dimension on a dataset split")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--weights", choices=("raw", "polyak"), default="polyak")
    s.add_argument("--split", choices=("train", "heldout"), default="heldout")
    s.add_argument("--table", help="write a per-image CSV here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="gating and embedding-only ablations")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n-saturation", type=int, default=32)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("selftest", help="run the invariant checks")
    s.add_argument("--quick", action="store_true")
    s.set_defaults(func=cmd_selftest)

    s = sub.add_parser("pmf-csv", help="dump one pixel's 256x256 PMF as CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True, help="color PNG (teacher-forced context) or grayscale PNG")
    s.add_argument("--row", type=int, default=0)
    s.add_argument("--col", type=int, default=0)
    s.add_argument("--weights", choices=("raw", "polyak"), default="polyak")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pmf_csv)

    s = sub.add_parser("causality-mask", help="impulse-traced dependency matrix as a PNG")
    s.add_argument("--grid", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_causality_mask)

    s = sub.add_parser("make-synthetic", help="write a folder of procedural training scenes")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=1.0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def _thread_count(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("PIC_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"PIC_THREADS must be an integer, got {env!r}") from None
    return None


def main(argv=None):
    from .checkpoint import CheckpointError
    from .config import ConfigError

    try:
        args = build_parser().parse_args(argv)
        threads = _thread_count(args)
        args.threads = threads
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return args.func(args)
        return args.func(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # anything else is a runtime failure with its own exit code
        log.exception("runtime failure")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
