"""Compare the compiled kernels with the numpy fallback.

Times im2col, col2im, the fused mixture NLL (value and gradient) and one
forward+backward training step of the desk-scale model, once per available
backend, and prints the best-of-N time per call with the speedup.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import timeit

import numpy as np

from picolor import kernels
from picolor.config import load_config
from picolor.synthetic import make_dataset
from picolor.training import loss_and_grads, make_model


def conv_case(rng):
    xp = rng.normal(size=(16, 64, 18, 18))
    cols = kernels.im2col(xp, 3, 3, 1, 1, 16, 16)
    return {
        "im2col 16x64x16x16 k3": lambda: kernels.im2col(xp, 3, 3, 1, 1, 16, 16),
        "col2im 16x64x16x16 k3": lambda: kernels.col2im(cols, xp.shape, 1, 1),
    }


def mixture_case(rng):
    field = rng.normal(size=(16, 60, 16, 16))
    field[:, 30:50] = rng.uniform(-6, -1, (16, 20, 16, 16))
    a, b = rng.integers(0, 256, (16, 16, 16)), rng.integers(0, 256, (16, 16, 16))
    return {"mixture_nll 16x16x16 K=10": lambda: kernels.mixture_nll(field, a, b, 256, -7.0)}


def model_case():
    run = load_config(None, ["model.embedding=desk", "model.ar_blocks=4", "model.ar_channels=64",
                             "training.precision=f32"])
    ds = make_dataset(16, size=32, factor=2, seed=0, heldout_fraction=0.0)
    batch = ds.batch(ds.manifest.ids())
    model = make_model(run)
    model.initialize(batch)
    return {"desk model forward+backward, batch 16": lambda: loss_and_grads(model, batch)}


def bench(cases, repeat):
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the timings here")
    args = parser.parse_args(argv)

    results = {}
    for name in kernels.available():
        kernels.use(name)
        rng = np.random.default_rng(0)
        cases = {**conv_case(rng), **mixture_case(rng), **model_case()}
        results[name] = bench(cases, args.repeat)
    kernels.use("auto")

    width = max(len(k) for k in results["numpy"])
    print(f"{'case':<{width}}  " + "  ".join(f"{b:>10}" for b in results) + "   speedup")
    for case, base in results["numpy"].items():
        row = "  ".join(f"{results[b][case] * 1e3:8.2f}ms" for b in results)
        fast = results.get("cython", {}).get(case)
        print(f"{case:<{width}}  {row}   {base / fast:6.1f}x" if fast else f"{case:<{width}}  {row}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
