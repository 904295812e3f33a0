"""Optimization loop: teacher-forced NLL, Adam with per-iteration decay, Polyak shadows.

The data order is a pure function of ``(seed, epoch)`` and the learning rate a
pure function of the iteration, so a checkpoint holding the parameter store and
the iteration count is enough to continue a run bit-exactly.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import checkpoint as ckpt_io
from .config import RunConfig
from .data import epoch_permutation, epoch_seed, permutation_hash
from .mixture import bits_per_dim
from .model import ColorizationModel, EmbeddingOnlyModel
from .params import adam_step, global_norm, polyak_update
from .seeding import rng_for

log = logging.getLogger(__name__)

DTYPES = {"f32": np.float32, "f64": np.float64}
AUDIT_TOLERANCE = 1e-4
AUDIT_STEP = 1e-5
KEEP_EPOCH_CHECKPOINTS = 2  # older per-epoch files are deleted as training proceeds


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration, value, checkpoint=None):
        self.iteration = iteration
        self.checkpoint = checkpoint
        kept = f"; last good checkpoint {checkpoint}" if checkpoint else ""
        super().__init__(f"non-finite loss {value} at iteration {iteration}{kept}")


class GradientAuditError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 1
    max_iterations: int = 0
    lr: float = 0.001
    lr_decay: float = 0.99995
    beta1: float = 0.95
    beta2: float = 0.9995
    adam_eps: float = 1e-8
    polyak_decay: float = 0.9995
    seed: int = 0
    precision: str = "f64"
    grad_clip: float = 0.0
    eval_weights: str = "polyak"
    grad_audit: bool = True
    log_every: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def dtype(self):
        return DTYPES[self.precision]

    @classmethod
    def from_run(cls, run):
        v = run.values
        return cls(
            batch_size=v["training.batch_size"], epochs=v["training.epochs"],
            max_iterations=v["training.max_iterations"], lr=v["training.lr"],
            lr_decay=v["training.lr_decay"], beta1=v["training.beta1"], beta2=v["training.beta2"],
            adam_eps=v["training.adam_eps"], polyak_decay=v["training.polyak_decay"], seed=v["seed"],
            precision=v["training.precision"], grad_clip=v["training.grad_clip"],
            eval_weights=v["training.eval_weights"], grad_audit=v["training.grad_audit"],
            log_every=v["training.log_every"],
        )


def learning_rate(config, iteration):
    """Closed-form schedule ``lr * decay ** iteration``."""
    return config.lr * config.lr_decay ** iteration


@dataclass
class TrainState:
    model: object
    run: RunConfig
    config: TrainConfig
    iteration: int = 0
    metrics: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    @property
    def store(self):
        return self.model.store

    @property
    def lr(self):
        return learning_rate(self.config, self.iteration)


def make_model(run, dtype=None):
    """Build the model described by a :class:`RunConfig` (weights from its seed)."""
    dtype = dtype or DTYPES[run["training.precision"]]
    cls = EmbeddingOnlyModel if run["model.variant"] == "embedding_only" else ColorizationModel
    return cls(run.model_config(), seed=run["seed"], dtype=dtype)


def loss_and_grads(model, batch, variant="raw"):
    """Summed batch NLL (nats) and a name -> gradient dict."""
    with ag.Tape() as tape:
        p = model.params(variant, requires_grad=True)
        loss = model.loss(p, batch)
        g = tape.backward(loss)
    return loss.item(), {name: g[t] for name, t in p.items()}


def loss_batch(model, batch, variant="raw"):
    """Summed teacher-forced NLL in nats, without gradients."""
    return model.loss(model.params(variant), batch).item()


def evaluate_nats(model, dataset, ids, batch_size=64, variant="polyak"):
    """Total NLL (nats) and predicted dimension count over ``ids`` in fixed order."""
    total, dims = 0.0, 0
    for start in range(0, len(ids), batch_size):
        batch = dataset.batch(ids[start:start + batch_size])
        total += float(np.sum(model.pixel_nll(model.params(variant), batch).data, dtype=np.float64))
        dims += batch.n_dims
    return total, dims


def gradient_audit(model, batch, n_params=5, seed=0, step=AUDIT_STEP, tolerance=AUDIT_TOLERANCE):
    """Central-difference check of the analytic gradient in 64-bit.

    Five parameters with a nonzero gradient are drawn at random; for each the
    coordinate with the largest analytic gradient is perturbed. Returns a list
    of ``(name, index, analytic, numeric, rel_error)``; raises
    :class:`GradientAuditError` if any relative error exceeds ``tolerance``.
    """
    twin = type(model)(model.config, seed=0, dtype=np.float64)
    for name, e in twin.store.items():
        e.value[...] = model.store[name].value
    _, grads = loss_and_grads(twin, batch)
    live = [n for n in twin.store.names() if np.any(grads[n] != 0.0)]
    rng = rng_for(seed, "grad-audit")
    chosen = sorted(rng.choice(len(live), size=min(n_params, len(live)), replace=False))
    rows = []
    for i in chosen:
        name = live[i]
        value = twin.store[name].value
        idx = np.unravel_index(int(np.argmax(np.abs(grads[name]))), value.shape)
        old = value[idx]
        value[idx] = old + step
        up = loss_batch(twin, batch)
        value[idx] = old - step
        down = loss_batch(twin, batch)
        value[idx] = old
        numeric = (up - down) / (2.0 * step)
        analytic = float(grads[name][idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-300)
        rows.append((name, tuple(int(j) for j in idx), analytic, numeric, rel))
    bad = [r for r in rows if r[4] >= tolerance]
    if bad:
        name, idx, a, n, rel = bad[0]
        raise GradientAuditError(
            f"gradient audit failed for {name}{list(idx)}: analytic {a:.6g}, numeric {n:.6g}, rel. error {rel:.3g}"
        )
    return rows


def save_checkpoint(state, path):
    return ckpt_io.save(path, state.store, state.iteration, state.run.content_hash(), state.run.to_text())


def load_checkpoint(path, run=None):
    """Rebuild a :class:`TrainState` from a checkpoint.

    With ``run`` the checkpoint must carry the same config hash; without it the
    configuration embedded in the checkpoint is used.
    """
    from .config import parse_config

    raw = ckpt_io.load(path)
    if run is None:
        run = parse_config(raw.config_text, source="checkpoint")
    elif raw.config_hash != run.content_hash():
        raise ckpt_io.ConfigMismatchError(
            f"checkpoint config hash {raw.config_hash[:12]} does not match run config {run.content_hash()[:12]}"
        )
    model = make_model(run, dtype=raw.store.dtype)
    ckpt_io.check_architecture(raw.store, model.store.shapes())
    model.store = raw.store
    return TrainState(model, run, TrainConfig.from_run(run), iteration=raw.iteration)


def _prune_epoch_checkpoints(paths, keep=KEEP_EPOCH_CHECKPOINTS):
    """Delete all but the newest ``keep`` per-epoch checkpoints written by this run."""
    epochs = [p for p in paths if Path(p).name.startswith("epoch_")]
    for p in epochs[:-keep]:
        Path(p).unlink(missing_ok=True)
        paths.remove(p)


def _append_jsonl(path, record):
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def train(run, dataset, out_dir, resume=None, model=None, initialized=False, on_epoch=None):
    """Train per ``run`` and return the final :class:`TrainState`.

    ``model`` may be passed pre-built (``initialized=True`` skips the
    data-dependent init, e.g. for a transplanted embedding). ``resume`` is a
    checkpoint path whose config hash must match ``run``.
    """
    cfg = TrainConfig.from_run(run)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    train_ids = dataset.split_ids("train")
    heldout_ids = dataset.manifest.ids("heldout")
    per_epoch = math.ceil(len(train_ids) / cfg.batch_size)
    total = per_epoch * cfg.epochs
    if cfg.max_iterations:
        total = min(total, cfg.max_iterations)

    def order_for(epoch):
        return epoch_permutation(train_ids, epoch_seed(cfg.seed, epoch))

    if resume is not None:
        state = load_checkpoint(resume, run)
        log.info("resumed from %s at iteration %d", resume, state.iteration)
    else:
        state = TrainState(model if model is not None else make_model(run), run, cfg)
        if metrics_path.exists():
            metrics_path.unlink()
        if not initialized:
            first = order_for(0)[:cfg.batch_size]
            state.model.initialize(dataset.batch(first))
    model = state.model

    if cfg.grad_audit:
        probe = dataset.batch(order_for(0)[:2])
        rows = gradient_audit(model, probe, seed=cfg.seed)
        worst = max(r[4] for r in rows) if rows else 0.0
        log.info("gradient audit passed on %d parameters (worst rel. error %.2e)", len(rows), worst)
        _append_jsonl(out / "audit.jsonl", {"iteration": state.iteration, "worst_rel_error": worst,
                                            "checked": [[r[0], list(r[1]), r[4]] for r in rows]})

    start_time = time.perf_counter()
    last_good = None
    order, order_epoch = None, -1
    while state.iteration < total:
        it = state.iteration
        epoch, pos = divmod(it, per_epoch)
        if epoch != order_epoch:
            order, order_epoch = order_for(epoch), epoch
            log.debug("epoch %d order hash %s", epoch, permutation_hash(order))
        batch = dataset.batch(order[pos * cfg.batch_size:(pos + 1) * cfg.batch_size])
        loss, grads = loss_and_grads(model, batch)
        if not np.isfinite(loss):
            raise TrainingDiverged(it, loss, last_good)
        if cfg.grad_clip > 0.0:
            norm = global_norm(grads)
            if norm > cfg.grad_clip:
                log.warning("iteration %d: clipping gradient norm %.3g to %.3g", it, norm, cfg.grad_clip)
                scale = cfg.grad_clip / norm
                grads = {k: g * scale for k, g in grads.items()}
        lr = learning_rate(cfg, it)
        adam_step(model.store, grads, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        polyak_update(model.store, cfg.polyak_decay)
        state.iteration = it + 1
        record = {
            "iteration": state.iteration, "epoch": epoch, "lr": lr,
            "train_nats_per_dim": loss / batch.n_dims, "heldout_bpd": None,
            "wallclock_s": round(time.perf_counter() - start_time, 3),
        }
        if state.iteration % cfg.log_every == 0:
            log.info("iter %d  epoch %d  lr %.3g  nats/dim %.4f", state.iteration, epoch, lr,
                     record["train_nats_per_dim"])
        epoch_done = state.iteration % per_epoch == 0 or state.iteration == total
        if epoch_done:
            if heldout_ids:
                nats, dims = evaluate_nats(model, dataset, heldout_ids, cfg.batch_size, cfg.eval_weights)
                record["heldout_bpd"] = bits_per_dim(nats, dims)
                log.info("epoch %d heldout bpd %.4f (%s weights)", epoch, record["heldout_bpd"], cfg.eval_weights)
            path = out / ("final.pic" if state.iteration == total else f"epoch_{epoch:04d}.pic")
            save_checkpoint(state, path)
            state.checkpoints.append(str(path))
            last_good = str(path)
            _prune_epoch_checkpoints(state.checkpoints)
            if on_epoch is not None:
                on_epoch(state, record)
        state.metrics.append(record)
        _append_jsonl(metrics_path, record)
    return state
