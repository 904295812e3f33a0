"""End-to-end invariant checks behind ``picolor selftest``.

Each check returns ``(passed, detail)``; :func:`run_selftest` prints one line
per check. ``quick`` shrinks grid sizes and sample counts so the whole run
stays around a minute.
"""

import time

import numpy as np

from . import autograd as ag
from . import checkpoint as ckpt_io
from . import colorspace as cs
from .data import decode_cifar10
from .mixture import MixtureParams, mixture_nll, pmf_enumerate, sample
from .model import ColorizationModel, ModelConfig
from .nn import GatedResBlock, randomize_gains
from .params import ParameterStore
from .pixelcnn import ARConfig, PixelCNN, causal_mask, dependency_matrix


def _rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


def numeric_grad(f, x, step=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + step
        up = f()
        x[idx] = old - step
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * step)
    return g


def check_gradients(quick=True):
    rng = np.random.default_rng(11)
    worst = 0.0
    x = rng.normal(size=(2, 3, 5, 5))
    k = rng.normal(size=(4, 3, 3, 3))
    for stride, dil in ((1, 1), (2, 1), (1, 2)):
        def f():
            return ag.tsum(ag.square(ag.conv2d(ag.Tensor(x), ag.Tensor(k), None, stride, dil, "same"))).item()
        with ag.Tape() as tape:
            xt, kt = ag.Tensor(x, requires_grad=True), ag.Tensor(k, requires_grad=True)
            loss = ag.tsum(ag.square(ag.conv2d(xt, kt, None, stride, dil, "same")))
            g = tape.backward(loss)
        worst = max(worst, _rel_err(g[xt], numeric_grad(f, x)), _rel_err(g[kt], numeric_grad(f, k)))
    store = ParameterStore()
    blk = GatedResBlock(store, "b", 2, "down", (2, 3), cond_channels=2, rng=rng)
    randomize_gains(store, rng)
    xb, cb = rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(1, 2, 3, 3))
    names = store.names() if not quick else ["b.conv1.direction", "b.conv2.gain", "b.cond.bias"]
    for name in names:
        def f():
            return ag.tsum(blk(store.tensors(), ag.Tensor(xb), cond=ag.Tensor(cb))).item()
        with ag.Tape() as tape:
            p = store.tensors(requires_grad=True)
            g = tape.backward(ag.tsum(blk(p, ag.Tensor(xb), cond=ag.Tensor(cb))))
        worst = max(worst, _rel_err(g[p[name]], numeric_grad(f, store[name].value)))
    return bool(worst < 1e-5), f"worst relative error {worst:.2e}"


def causality_check(grid=8, seed=0, channels=16, blocks=2):
    """Dependency matrix of a randomly weighted network versus the strict raster mask."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    net = PixelCNN(ARConfig(n_resblocks=blocks, channels=channels), store, cond_channels=4, rng=rng)
    randomize_gains(store, rng)
    chroma = rng.uniform(-1, 1, (1, 2, grid, grid))
    emb = rng.normal(size=(1, 4, grid, grid))
    dep = dependency_matrix(net, store.tensors(), chroma, emb)
    return dep, causal_mask(grid, grid)


def check_causality(quick=True):
    grid = 8 if quick else 16
    trials = 2 if quick else 20
    for t in range(trials):
        dep, mask = causality_check(grid, seed=t)
        if np.any(dep & ~mask):
            i, j = np.argwhere(dep & ~mask)[0]
            return False, f"trial {t}: output pixel {i} depends on input pixel {j}"
    return True, f"{trials} trials on {grid}x{grid}, no dependence on current or future pixels"


def random_params(rng, k=10, spread=1.0):
    return MixtureParams(
        rng.normal(0, 2, k), rng.uniform(-1.2, 1.2, k), rng.uniform(-1.2, 1.2, k),
        rng.uniform(-6, -1, k) * spread, rng.uniform(-6, -1, k) * spread, rng.normal(0, 0.5, k),
    )


def check_pmf(quick=True):
    rng = np.random.default_rng(5)
    worst_sum, worst_nll = 0.0, 0.0
    for _ in range(5 if quick else 100):
        p = random_params(rng)
        grid = pmf_enumerate(p)
        worst_sum = max(worst_sum, abs(grid.sum() - 1.0))
        a, b = rng.integers(0, 256, 2)
        worst_nll = max(worst_nll, abs(mixture_nll(p, a, b) + np.log(grid[a, b])))
    ok = bool(worst_sum < 1e-8 and worst_nll < 1e-10)
    return ok, f"|sum - 1| <= {worst_sum:.1e}, |nll + log pmf| <= {worst_nll:.1e}"


def check_sampling(quick=True):
    # Histogram noise grows with the square root of the effective support, so
    # the draw uses narrow components: at 200k samples a distribution spread
    # over more than ~125 cells cannot reach TV 0.01 even when exact.
    rng = np.random.default_rng(8)
    n = 200_000
    p = MixtureParams(rng.normal(0, 3, 10), rng.uniform(-0.9, 0.9, 10), rng.uniform(-0.9, 0.9, 10),
                      rng.uniform(-6.5, -5.5, 10), rng.uniform(-6.5, -5.5, 10), rng.normal(0, 0.3, 10))
    grid = pmf_enumerate(p)
    tiled = MixtureParams(*(np.broadcast_to(getattr(p, f), (n, 10)) for f in
                            ("logits", "mu_a", "mu_b", "log_scale_a", "log_scale_b", "coeff_ba")))
    a, b = sample(tiled, np.random.default_rng(9))
    hist = np.bincount(a * 256 + b, minlength=256 * 256).reshape(256, 256) / n
    tv = 0.5 * np.abs(hist - grid).sum()
    return bool(tv < 0.01), f"TV {tv:.4f} over {n} samples (limit 0.01)"


def check_lab(quick=True):
    g = np.arange(256, dtype=np.uint8)
    grays = np.stack([g, g, g], axis=-1)[None]
    gray_ok = np.array_equal(cs.lab_to_rgb(cs.rgb_to_lab(grays)), grays)
    rng = np.random.default_rng(2)
    rgb = rng.integers(0, 256, (1, 2000 if quick else 10_000, 3), dtype=np.uint8)
    err = np.abs(cs.lab_to_rgb(cs.rgb_to_lab(rgb)).astype(int) - rgb).max()
    return bool(gray_ok and err <= 1), f"gray levels exact: {gray_ok}, max color error {err}"


def check_cifar(quick=True):
    rng = np.random.default_rng(4)
    pix = rng.integers(0, 256, (2, 3, 32, 32), dtype=np.uint8)
    blob = b"".join(bytes([250 + i]) + pix[i].tobytes() for i in range(2))
    labels, images = decode_cifar10(blob)
    ok = list(labels) == [250, 251] and np.array_equal(images, pix.transpose(0, 2, 3, 1))
    try:
        decode_cifar10(blob[:-1])
        ok = False
    except ValueError:
        pass
    return ok, "2-record fixture decoded bit-exactly; short file rejected"


def check_checkpoint(quick=True):
    model = ColorizationModel(ModelConfig("toy", ARConfig(1, 8)), seed=1)
    randomize_gains(model.store, np.random.default_rng(1))
    blob = ckpt_io.encode(model.store, 7, "ab" * 32)
    again = ckpt_io.encode(ckpt_io.decode(blob).store, 7, "ab" * 32)
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0x10
    try:
        ckpt_io.decode(bytes(flipped))
        detected = False
    except ckpt_io.CheckpointError:
        detected = True
    return blob == again and detected, f"{len(blob)} bytes, round trip identical, corruption detected: {detected}"


CHECKS = [
    ("gradients", check_gradients),
    ("causality", check_causality),
    ("pmf normalization", check_pmf),
    ("sampling TV", check_sampling),
    ("lab round trip", check_lab),
    ("cifar decode", check_cifar),
    ("checkpoint round trip", check_checkpoint),
]


def run_selftest(quick=False, out=print):
    ok = True
    for name, fn in CHECKS:
        t = time.perf_counter()
        try:
            passed, detail = fn(quick)
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        ok &= passed
        out(f"[{'PASS' if passed else 'FAIL'}] {name:<22} {detail} ({time.perf_counter() - t:.1f}s)")
    out("selftest " + ("passed" if ok else "FAILED"))
    return ok
