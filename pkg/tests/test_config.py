import pytest

from picolor.config import SCHEMA, ConfigError, RunConfig, load_config, parse_config

# a valid value different from the default for every key
ALTERNATES = {
    "seed": "7",
    "model.variant": "embedding_only",
    "model.embedding": "toy",
    "model.factor": "4",
    "model.gating": "false",
    "model.ar_blocks": "2",
    "model.ar_channels": "32",
    "model.n_mixtures": "5",
    "model.log_scale_floor": "-6.5",
    "model.zero_embedding": "true",
    "data.resolution": "16",
    "data.heldout_fraction": "0.2",
    "data.limit": "100",
    "training.batch_size": "8",
    "training.epochs": "3",
    "training.max_iterations": "50",
    "training.lr": "0.002",
    "training.lr_decay": "0.99999",
    "training.beta1": "0.9",
    "training.beta2": "0.999",
    "training.adam_eps": "1e-7",
    "training.polyak_decay": "0.99",
    "training.precision": "f32",
    "training.grad_clip": "100",
    "training.eval_weights": "raw",
    "training.grad_audit": "false",
    "training.log_every": "5",
    "sampling.n_samples": "8",
}


def test_alternates_cover_the_schema():
    assert set(ALTERNATES) == set(SCHEMA)


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    cfg = load_config(path)
    assert cfg.values == {k: s.default for k, s in SCHEMA.items()}
    assert cfg.content_hash() == RunConfig().content_hash()
    assert set(cfg.provenance.values()) == {"default"}


def test_same_text_same_hash(tmp_path):
    text = "seed = 4\nmodel.embedding = toy\n"
    assert parse_config(text).content_hash() == parse_config(text).content_hash()


@pytest.mark.parametrize("key", sorted(SCHEMA))
def test_hash_changes_iff_setting_affects_numerics(key):
    base = RunConfig()
    changed = RunConfig().set(key, ALTERNATES[key])
    assert changed[key] != base[key]
    assert (changed.content_hash() != base.content_hash()) == SCHEMA[key].numeric


def test_lr_decay_above_one_rejected_with_line():
    with pytest.raises(ConfigError, match=r"training.lr_decay \(line 3\).*out of range"):
        parse_config("seed = 1\n\ntraining.lr_decay = 1.5\n")


def test_unknown_key_rejected_with_line():
    with pytest.raises(ConfigError, match=r"unknown config key 'training.lrr' \(line 2\)"):
        parse_config("# comment\ntraining.lrr = 0.1\n")


@pytest.mark.parametrize("line,pattern", [
    ("training.batch_size = eight", "training.batch_size"),
    ("model.gating = maybe", "boolean"),
    ("model.factor = 3", "allowed: 1, 2, 4"),
    ("model.ar_channels = 33", "out of range"),
    ("just some words", "key = value"),
])
def test_bad_lines_rejected(line, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(line)


def test_comments_and_blank_lines_ignored():
    cfg = parse_config("# header\n\n  seed = 9   # trailing\n")
    assert cfg["seed"] == 9 and cfg.provenance["seed"] == "file"


def test_text_round_trip():
    cfg = RunConfig()
    for key, raw in ALTERNATES.items():
        if key not in ("model.variant", "model.factor"):
            cfg.set(key, raw)
    again = parse_config(cfg.to_text())
    assert again.values == cfg.values
    assert again.content_hash() == cfg.content_hash()


def test_flags_override_file_with_provenance(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 3\ntraining.lr = 0.002\n")
    cfg = load_config(path, ["training.lr=0.005"])
    assert cfg["seed"] == 3 and cfg["training.lr"] == 0.005
    assert cfg.provenance["seed"] == "file" and cfg.provenance["training.lr"] == "flag"
    assert "[flag]" in cfg.describe() and "[default]" in cfg.describe()


def test_malformed_override_rejected():
    with pytest.raises(ConfigError, match="key=value"):
        load_config(None, ["training.lr"])


def test_missing_file_is_reported(tmp_path):
    with pytest.raises(FileNotFoundError, match="cannot read config"):
        load_config(tmp_path / "absent.cfg")


def test_stride_product_must_match_factor():
    with pytest.raises(ConfigError, match="stride product 2"):
        parse_config("model.embedding = toy\nmodel.factor = 4\n").model_config()


@pytest.mark.parametrize("name", ["toy", "desk", "cifar", "ilsvrc"])
def test_shipped_configs_load(name):
    cfg = load_config(f"configs/{name}.cfg")
    cfg.model_config()
