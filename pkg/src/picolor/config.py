"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, dotted keys group settings::

    seed = 3
    model.embedding = desk
    training.batch_size = 16   # smaller batches for CPU runs

Every key has a documented default; unknown keys, unparsable values and
out-of-range values are rejected with the key and line number. The content
hash covers every key that can change numerical results.
"""

import hashlib
from dataclasses import dataclass, field

from .embedding import EmbeddingConfig
from .model import ModelConfig
from .pixelcnn import ARConfig


class ConfigError(ValueError):
    """A configuration file or override could not be accepted."""


@dataclass(frozen=True)
class Setting:
    type: type
    default: object
    doc: str
    check: object = None  # predicate on the parsed value
    numeric: bool = True  # participates in the content hash


def _positive(v):
    return v > 0


def _choice(*options):
    def check(v):
        return v in options
    check.options = options
    return check


def _valid_embedding(v):
    try:
        EmbeddingConfig.parse(v)
    except ValueError:
        return False
    return True


SCHEMA = {
    "seed": Setting(int, 0, "root seed; every random stream is derived from it", lambda v: v >= 0),
    "model.variant": Setting(str, "full", "full model or the embedding-only ablation",
                             _choice("full", "embedding_only")),
    "model.embedding": Setting(str, "desk", "embedding preset (cifar, ilsvrc, desk, toy) or layer string",
                               _valid_embedding),
    "model.factor": Setting(int, 2, "chroma subsampling factor", _choice(1, 2, 4)),
    "model.gating": Setting(bool, True, "gated residual blocks in both networks"),
    "model.ar_blocks": Setting(int, 4, "residual blocks per autoregressive stream", lambda v: v >= 0),
    "model.ar_channels": Setting(int, 160, "autoregressive stream width (even)", lambda v: v > 0 and v % 2 == 0),
    "model.n_mixtures": Setting(int, 10, "logistic mixture components", _positive),
    "model.log_scale_floor": Setting(float, -7.0, "lower clamp on mixture log-scales"),
    "model.zero_embedding": Setting(bool, False, "replace the embedding by zeros (control runs)"),
    "data.resolution": Setting(int, 32, "image side after crop/resize", _positive),
    "data.heldout_fraction": Setting(float, 0.1, "fraction of images held out", lambda v: 0.0 <= v < 1.0),
    "data.limit": Setting(int, 0, "use only the first N images (0 = all)", lambda v: v >= 0),
    "training.batch_size": Setting(int, 64, "images per optimizer step", _positive),
    "training.epochs": Setting(int, 1, "passes over the training split", _positive),
    # a stopping rule: it decides where a run ends, not what any step computes,
    # so a resumed run may extend it without a hash mismatch
    "training.max_iterations": Setting(int, 0, "stop after this many steps (0 = no limit)", lambda v: v >= 0,
                                       numeric=False),
    "training.lr": Setting(float, 0.001, "initial Adam learning rate", _positive),
    "training.lr_decay": Setting(float, 0.99995, "multiplicative decay per iteration", lambda v: 0.0 < v <= 1.0),
    "training.beta1": Setting(float, 0.95, "Adam first-moment decay", lambda v: 0.0 <= v < 1.0),
    "training.beta2": Setting(float, 0.9995, "Adam second-moment decay", lambda v: 0.0 <= v < 1.0),
    "training.adam_eps": Setting(float, 1e-8, "Adam denominator epsilon", _positive),
    "training.polyak_decay": Setting(float, 0.9995, "shadow-weight moving-average decay", lambda v: 0.0 <= v < 1.0),
    "training.precision": Setting(str, "f64", "floating-point width of parameters and activations",
                                  _choice("f32", "f64")),
    "training.grad_clip": Setting(float, 0.0, "global-norm clip threshold (0 = off)", lambda v: v >= 0.0),
    "training.eval_weights": Setting(str, "polyak", "weights used for heldout evaluation",
                                     _choice("raw", "polyak")),
    "training.grad_audit": Setting(bool, True, "finite-difference spot check at run start", numeric=False),
    "training.log_every": Setting(int, 10, "console progress interval in iterations", _positive, numeric=False),
    "sampling.n_samples": Setting(int, 4, "samples per input image", _positive, numeric=False),
}


def _parse_value(setting, text):
    if setting.type is bool:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if setting.type is int:
        return int(text, 10)
    if setting.type is float:
        return float(text)
    return text


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: s.default for k, s in SCHEMA.items()})
    provenance: dict = field(default_factory=lambda: {k: "default" for k in SCHEMA})

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key, raw, source="flag", line=None):
        where = f" (line {line})" if line is not None else ""
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}{where}")
        setting = SCHEMA[key]
        if isinstance(raw, str):
            try:
                value = _parse_value(setting, raw)
            except ValueError as exc:
                raise ConfigError(f"{key}{where}: {exc}") from None
        else:
            value = raw
            if setting.type is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, setting.type) or (setting.type is int and isinstance(value, bool)):
                raise ConfigError(f"{key}{where}: expected {setting.type.__name__}, got {value!r}")
        if setting.check is not None and not setting.check(value):
            options = getattr(setting.check, "options", None)
            hint = f"; allowed: {', '.join(map(str, options))}" if options else ""
            raise ConfigError(f"{key}{where}: value {value!r} is out of range{hint}")
        self.values[key] = value
        self.provenance[key] = source
        return self

    def content_hash(self):
        """SHA-256 over every numerics-affecting setting."""
        lines = [f"{k}={self.values[k]!r}" for k in sorted(SCHEMA) if SCHEMA[k].numeric]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()

    def to_text(self):
        """Serialize every setting; :func:`parse_config` reads it back unchanged."""
        out = []
        for k in sorted(SCHEMA):
            v = self.values[k]
            out.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(out) + "\n"

    def describe(self):
        """Resolved settings with where each value came from."""
        width = max(map(len, SCHEMA))
        return "\n".join(
            f"{k:<{width}} = {self.values[k]!s:<12} [{self.provenance[k]}]" for k in sorted(SCHEMA)
        )

    def model_config(self):
        v = self.values
        ar = ARConfig(
            n_resblocks=v["model.ar_blocks"], channels=v["model.ar_channels"], gating=v["model.gating"],
            n_mixtures=v["model.n_mixtures"], log_scale_floor=v["model.log_scale_floor"],
        )
        cfg = ModelConfig(embedding=v["model.embedding"], ar=ar, factor=v["model.factor"],
                          gating=v["model.gating"], zero_embedding=v["model.zero_embedding"])
        if cfg.embedding_config().factor != cfg.factor:
            raise ConfigError(
                f"model.embedding has stride product {cfg.embedding_config().factor} "
                f"but model.factor is {cfg.factor}"
            )
        return cfg

    def with_overrides(self, **overrides):
        """Copy with ``section__key=value`` keyword overrides (``__`` stands for ``.``)."""
        other = RunConfig(dict(self.values), dict(self.provenance))
        for k, v in overrides.items():
            other.set(k.replace("__", "."), v, source="override")
        return other


def parse_config(text, source="file"):
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        cfg.set(key, raw, source=source, line=lineno)
    return cfg


def load_config(path=None, overrides=None):
    """Read ``path`` (or start from defaults) and apply ``key=value`` flag overrides."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise FileNotFoundError(f"cannot read config {path!r}: {exc.strerror}") from None
        cfg = parse_config(text)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        cfg.set(key, raw, source="flag")
    return cfg
