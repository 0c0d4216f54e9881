"""Run configuration: one flat ``key=value`` file governs every stage."""

import dataclasses
from dataclasses import dataclass, fields

from ..exceptions import ConfigError
from .split import SplitConfig
from .synthetic import GeneratorConfig


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _strs(text):
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"

    # synthetic data
    n_users: int = 5000
    n_geo_cells: int = 50
    n_source_items: int = 2000
    n_target_items: int = 500
    n_topics: int = 10
    n_destinations: int = 25
    n_categories: int = 5
    preference_strength: float = 0.8
    cold_fraction: float = 0.1
    travel_fraction: float = 0.6
    location_rate: float = 0.9
    source_events_mean: float = 12.0
    target_clicks_mean: float = 4.0
    impressions_per_click: float = 1.5
    test_clicks_mean: float = 3.0
    zipf_exponent: float = 1.0
    window_days: int = 30
    test_days: int = 7

    # split
    validation_fraction: float = 0.2
    train_negative_ratio: float = 0.0
    validation_negative_ratio: float = 0.0

    # skip-gram
    embed_dim: int = 32
    sgns_window: int = 5
    sgns_negatives: int = 5
    sgns_epochs: int = 5
    sgns_learning_rate: float = 0.025
    min_count: int = 1

    # relations
    n_clusters: int = 50
    kmeans_max_iter: int = 100
    group_len: int = 10
    n_recall: int = 20

    # model
    latent_dims: tuple = (32,)
    hidden: tuple = (64, 32)
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 0.001
    optimizer: str = "adam"

    # evaluation
    eval_k: tuple = (30, 50, 100, 200)
    hr_average: str = "micro"
    models: tuple = ("lhrm", "hot", "maxcov")

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.embed_dim < 1 or self.group_len < 1 or self.n_clusters < 1:
            raise ConfigError("embed_dim, group_len and n_clusters must be >= 1")
        if not self.latent_dims or min(self.latent_dims) < 1:
            raise ConfigError("latent_dims must list positive widths")
        if not self.eval_k or min(self.eval_k) < 1:
            raise ConfigError("eval_k must list positive cutoffs")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.hr_average not in ("micro", "macro"):
            raise ConfigError(f"hr_average must be micro or macro, got {self.hr_average!r}")
        bad = set(self.models) - {"lhrm", "hot", "maxcov"}
        if bad:
            raise ConfigError(f"unknown models: {sorted(bad)}")

    def generator(self):
        names = {f.name for f in fields(GeneratorConfig)}
        return GeneratorConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def splitter(self):
        return SplitConfig(self.window_days, self.validation_fraction, self.train_negative_ratio,
                           self.validation_negative_ratio, self.seed)

    def sgns(self, seed_offset=0):
        return dict(dim=self.embed_dim, window=self.sgns_window, negatives=self.sgns_negatives,
                    epochs=self.sgns_epochs, learning_rate=self.sgns_learning_rate,
                    min_count=self.min_count, seed=self.seed + seed_offset)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # ---- key=value IO

    @classmethod
    def parse_value(cls, key, text):
        types = {f.name: f.type for f in fields(cls)}
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        default = cls.__dataclass_fields__[key].default
        try:
            if key in ("latent_dims", "hidden", "eval_k"):
                return _ints(text)
            if key == "models":
                return _strs(text)
            if isinstance(default, bool):
                return str(text).lower() in ("1", "true", "yes")
            if isinstance(default, int):
                return int(text)
            if isinstance(default, float):
                return float(text)
            return str(text)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {text!r}") from None

    @classmethod
    def from_mapping(cls, mapping, base=None):
        values = dataclasses.asdict(base) if base is not None else {}
        for k, v in mapping.items():
            values[k] = cls.parse_value(k, v) if isinstance(v, str) else v
        return cls(**values)

    @classmethod
    def load(cls, path, overrides=None):
        mapping = {}
        try:
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ConfigError(f"{path}:{lineno}: expected key=value")
                    k, v = line.split("=", 1)
                    mapping[k.strip()] = v.strip()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        mapping.update(overrides or {})
        return cls.from_mapping(mapping)

    def dumps(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())
