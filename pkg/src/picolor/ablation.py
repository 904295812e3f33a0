"""Gating and autoregressive-component ablations under one seed and data order.

Four runs share the seed, so they see the same initial batch and the same
per-epoch permutations:

* ``gated``: the full model as configured, with gated residual blocks;
* ``ungated``: the same with plain residual blocks;
* ``control``: gated, but the embedding is replaced by zeros;
* ``embedding_only``: the gated run's trained embedding plus a fresh 1x1
  mixture head, finetuned without the autoregressive network and decoded by
  per-pixel MAP.
"""

import json
import logging
from pathlib import Path

from . import colorspace as cs
from . import evaluation as ev
from .data import epoch_permutation, epoch_seed
from .training import make_model, train

log = logging.getLogger(__name__)


def _report(state, dataset, batch_size):
    run = state.run
    return ev.evaluate_bpd(state.model, dataset, run["training.eval_weights"], "heldout", batch_size,
                           run.content_hash())


def ablate(run, dataset, out_dir, n_saturation=32, variants=("gated", "ungated", "control", "embedding_only")):
    """Train the requested variants and write ``ablation.json`` plus a comparison montage."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = run.with_overrides(model__variant="full", model__gating=True, model__zero_embedding=False)
    bs = base["training.batch_size"]
    weights = base["training.eval_weights"]
    seed = base["seed"]
    configs = {
        "gated": base,
        "ungated": base.with_overrides(model__gating=False),
        "control": base.with_overrides(model__zero_embedding=True),
        "embedding_only": base.with_overrides(model__variant="embedding_only"),
    }
    report = {"seed": seed, "variants": {}, "order_hash": {}}
    states = {}
    for name in variants:
        cfg = configs[name]
        log.info("ablation: training %s", name)
        if name == "embedding_only":
            if "gated" not in states:
                raise ValueError("the embedding-only variant finetunes the gated run's embedding")
            model = make_model(cfg)
            model.load_embedding_from(states["gated"].store, weights)
            order = epoch_permutation(dataset.split_ids("train"), epoch_seed(seed, 0))
            model.initialize(dataset.batch(order[:bs]), head_only=True)
            state = train(cfg, dataset, out / name, model=model, initialized=True)
        else:
            state = train(cfg, dataset, out / name)
        states[name] = state
        rep = _report(state, dataset, bs)
        (out / name / "eval.json").write_text(rep.to_json())
        report["variants"][name] = json.loads(rep.to_json())
        report["order_hash"][name] = ev.run_order_hash(dataset, seed, cfg["training.epochs"])

    if "gated" in states and "ungated" in states:
        audit = ev.ablation_param_audit(states["gated"].model, states["ungated"].model)
        report["param_audit"] = audit
        log.info("parameter counts: gated %d, ungated %d (difference %d, all in gate halves)",
                 audit["gated"], audit["ungated"], audit["difference"])
        report["gated_bpd"] = report["variants"]["gated"]["bits_per_dim"]
        report["ungated_bpd"] = report["variants"]["ungated"]["bits_per_dim"]
        report["gating_ordering_holds"] = report["gated_bpd"] <= report["ungated_bpd"]

    if "gated" in states and "embedding_only" in states:
        ids = dataset.manifest.ids("heldout")[:n_saturation]
        full_sat, full_vals = ev.sample_saturation(states["gated"].model, dataset, ids, seed, weights)
        map_sat, map_vals = ev.sample_saturation(states["embedding_only"].model, dataset, ids, seed, weights)
        report["saturation"] = {"full_samples_pct": full_sat, "embedding_only_map_pct": map_sat,
                                "n_images": len(ids), "seed": seed}
        report["saturation_ordering_holds"] = full_sat >= map_sat
        report["variants"]["gated"]["mean_saturation"] = full_sat
        report["variants"]["embedding_only"]["mean_saturation"] = map_sat
        _comparison_montage(states, dataset, ids[:8], seed, weights, out / "comparison.png")
        _saturation_table(ids, full_vals, map_vals, out / "saturation.csv")

    if "control" in states and "gated" in states:
        report["control_bpd"] = report["variants"]["control"]["bits_per_dim"]
        report["embedding_helps"] = report["variants"]["gated"]["bits_per_dim"] < report["control_bpd"]

    (out / "ablation.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report, states


def _saturation_table(ids, full_vals, map_vals, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("filename,full_sample_saturation,embedding_only_map_saturation\n")
        for eid, f, m in zip(ids, full_vals, map_vals):
            fh.write(f"{eid},{f:.4f},{m:.4f}\n")
    return path


def _comparison_montage(states, dataset, ids, seed, weights, path):
    """Rows of: grayscale input, full-model sample, embedding-only MAP, ground truth."""
    tiles = []
    for i, eid in enumerate(ids):
        rgb = dataset.images[eid]
        L = cs.rgb_to_lab(rgb).L
        sample = ev.colorize(states["gated"].model, L, 1, seed + i, variant=weights).samples[0]
        mapped = ev.map_colorize_embedding_only(states["embedding_only"].model, L, weights)
        tiles += [ev.gray_tile(L), cs.lab_to_rgb(cs.upsample_chroma(sample)),
                  cs.lab_to_rgb(cs.upsample_chroma(mapped)), rgb]
    cs.write_png(path, ev.montage(tiles))
    return path
