"""Training configuration and its flat ``key = value`` file format.

Example::

    [train]
    mode = dmsg
    epochs = 200
    lr = 0.001
    loss_weights = 1, 20, 1, 1

    [data]
    classes_per_task = 2
    split_ratios = 0.6, 0.2, 0.2

Section names are for readability only; every key maps onto a
:class:`TrainConfig` field and must be unique across sections.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field

MODES = ("dmsg", "finetune", "joint")
OPTIMIZERS = ("adam", "sgd")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "dmsg"
    epochs: int = 200
    lr: float = 1e-3
    weight_decay: float = 1e-3
    optimizer: str = "adam"
    # new-task, replay, adversarial, reconstruction
    w_new: float = 1.0
    lambda_rp: float = 20.0
    lambda_mise: float = 1.0
    lambda_cgse: float = 1.0
    buffer_size: int = 60
    batch_new: int = 0            # 0 = full batch
    batch_buffer: int = 0         # 0 = derived from the node-count ratio
    fanout: int = 0               # neighbours sampled per hop in mini-batch mode; 0 = all
    hidden: int = 256
    dropout: float = 0.0
    head_init_scale: float = 0.1
    classes_per_task: int = 2
    split_ratios: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    split_seed: int = None        # None = same as seed
    max_pairs: int = 0            # 0 = all buffer pairs in the reconstruction loss
    select_before_training: bool = False
    freeze_buffer_embeddings: bool = False
    class_order: tuple = None
    save_checkpoints: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.epochs < 1 or self.lr <= 0:
            raise ConfigError("epochs and lr must be positive")
        for name in ("weight_decay", "w_new", "lambda_rp", "lambda_mise", "lambda_cgse"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("buffer_size", "hidden", "classes_per_task"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("batch_new", "batch_buffer", "fanout", "max_pairs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if len(self.split_ratios) != 3:
            raise ConfigError("split_ratios needs three values")

    @property
    def loss_weights(self):
        return (self.w_new, self.lambda_rp, self.lambda_mise, self.lambda_cgse)

    @property
    def effective_split_seed(self):
        return self.seed if self.split_seed is None else self.split_seed

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        if self.class_order is not None:
            d["class_order"] = list(self.class_order)
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(name, raw):
    raw = raw.strip()
    default = _FIELDS[name].default
    try:
        if name in ("split_ratios",):
            return tuple(float(x) for x in raw.split(","))
        if name == "class_order":
            return None if raw.lower() in ("", "none") else tuple(int(x) for x in raw.split(","))
        if name == "split_seed":
            return None if raw.lower() in ("", "none") else int(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_overrides(pairs):
    """Turn ``{"key": "text"}`` into typed field values (``loss_weights`` expands)."""
    out = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key == "loss_weights":
            try:
                w = [float(x) for x in raw.split(",")]
            except ValueError:
                raise ConfigError(f"bad value for loss_weights: {raw!r}") from None
            if len(w) != 4:
                raise ConfigError("loss_weights needs four values (new, rp, mise, cgse)")
            out.update(w_new=w[0], lambda_rp=w[1], lambda_mise=w[2], lambda_cgse=w[3])
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def load_config(path, **overrides):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    pairs = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key in pairs:
                raise ConfigError(f"key {key!r} appears in more than one section")
            pairs[key] = raw
    values = parse_overrides(pairs)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def dump_config(cfg):
    """Render ``cfg`` in the file format accepted by :func:`load_config`."""
    d = cfg.to_dict()
    lines = ["[train]"]
    for k, v in d.items():
        if isinstance(v, (list, tuple)):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
