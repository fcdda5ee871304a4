"""Experiment configuration: YAML loading with strict keys and line-numbered errors.

Layout (every section optional, defaults shown by ``ExperimentConfig().to_dict()``)::

    track: synthetic            # synthetic | digits | custom-manifest
    seeds: [0, 1, 2]
    data:
      root: null                # falls back to $OPENDG_DATA_ROOT
      manifest: null            # custom-manifest track only
      known_classes: [0, 1, 2, 3, 4, 5]
      source: domain0
      n_domains: 3
      n_per_class: 60
      image_size: 32
      synth_seed: 0
    model: {arch: toy, split_depth: default, width: 32, embed_dim: 64, pretrained: false, norm: group}
    train: {learning_rate: 0.01, epochs: 20, batch_size: 32, weights: [1, 1, 1], ...}
    eval:
      targets: [domain1, domain2]
    ablation:
      axis: null                # see opendg.sweeps.AXES
      known_counts: [2, 3, 4, 5, 6, 7, 8]
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from opendg.losses import LossWeights
from opendg.stylesynth import NoiseSpec, StyleBand
from opendg.train import TrainConfig

TRACKS = ("synthetic", "digits", "custom-manifest")
DATA_ROOT_ENV = "OPENDG_DATA_ROOT"


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line`` when known."""


@dataclass
class DataConfig:
    root: str | None = None
    manifest: str | None = None
    known_classes: list = field(default_factory=lambda: list(range(6)))
    source: str = "domain0"
    n_domains: int = 3
    n_per_class: int = 60
    image_size: int = 32
    synth_seed: int = 0
    digits_limit: int = 2000

    def resolved_root(self) -> Path | None:
        root = self.root or os.environ.get(DATA_ROOT_ENV)
        return Path(root) if root else None


@dataclass
class ModelConfig:
    arch: str = "toy"
    split_depth: str = "default"
    width: int = 32
    embed_dim: int = 64
    pretrained: bool = False
    open_set: bool = True
    norm: str = "group"  # toy encoder only: batch | group | none


@dataclass
class EvalConfig:
    targets: list = field(default_factory=lambda: ["domain1", "domain2"])


@dataclass
class AblationConfig:
    axis: str | None = None
    known_counts: list = field(default_factory=lambda: [2, 3, 4, 5, 6, 7, 8])


def desk_train_config(**overrides) -> TrainConfig:
    """Toy-track training defaults sized for a single CPU core."""
    kw = dict(learning_rate=0.01, epochs=20, batch_size=32, disc_delay_epochs=10.0, disc_warmup_epochs=4.0)
    kw.update(overrides)
    return TrainConfig(**kw)


@dataclass
class ExperimentConfig:
    track: str = "synthetic"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=desk_train_config)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self) -> "ExperimentConfig":
        if self.track not in TRACKS:
            raise ConfigError(f"track must be one of {TRACKS}, got {self.track!r}")
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if not self.data.known_classes:
            raise ConfigError("known_classes must be nonempty")
        if len(set(self.data.known_classes)) != len(self.data.known_classes):
            raise ConfigError("known_classes has duplicates")
        if self.track == "custom-manifest":
            if not self.data.manifest:
                raise ConfigError("custom-manifest track needs data.manifest")
            if not Path(self.data.manifest).exists():
                raise ConfigError(f"manifest not found: {self.data.manifest}")
        if self.track == "digits":
            root = self.data.resolved_root()
            if root is None:
                raise ConfigError(f"digits track needs data.root or ${DATA_ROOT_ENV}")
            if not root.is_dir():
                raise ConfigError(f"data root not found: {root}")
        if self.source_in_targets():
            raise ConfigError("the source domain cannot also be an evaluation target")
        return self

    def source_in_targets(self) -> bool:
        return self.data.source in self.eval.targets

    @property
    def num_known(self) -> int:
        return len(self.data.known_classes)

    def to_dict(self) -> dict:
        return {
            "track": self.track,
            "seeds": list(self.seeds),
            "data": dataclasses.asdict(self.data),
            "model": dataclasses.asdict(self.model),
            "train": self.train.to_dict(),
            "eval": dataclasses.asdict(self.eval),
            "ablation": dataclasses.asdict(self.ablation),
        }

    def dump(self, path) -> Path:
        """Write the effective config (all defaults filled in) atomically as YAML."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        os.replace(tmp, path)
        return path

    def replace(self, **sections) -> "ExperimentConfig":
        new = copy.deepcopy(self)
        for k, v in sections.items():
            setattr(new, k, v)
        return new

    def with_train(self, **kw) -> "ExperimentConfig":
        return self.replace(train=dataclasses.replace(self.train, **kw))


SECTIONS = {"data": DataConfig, "model": ModelConfig, "eval": EvalConfig, "ablation": AblationConfig}
TOP_KEYS = {"track", "seeds", *SECTIONS, "train"}


def _train_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    if "weights" in d:
        w = d["weights"]
        d["weights"] = LossWeights.parse(w) if isinstance(w, str) else LossWeights(*w)
    for key in ("band_mu", "band_sigma"):
        if key in d:
            d[key] = StyleBand(*d[key])
    if "noise" in d:
        d["noise"] = NoiseSpec(*d["noise"])
    return desk_train_config(**d)


def _where(src: str, node) -> str:
    return f"{src}:{node.start_mark.line + 1}"


def _check_keys(node, allowed, src: str, section: str) -> None:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(src, node)}: section {section!r} must be a mapping")
    for key_node, _ in node.value:
        if key_node.value not in allowed:
            raise ConfigError(
                f"{_where(src, key_node)}: unknown key {key_node.value!r} in {section}"
                f" (allowed: {', '.join(sorted(allowed))})"
            )


def _value_nodes(node) -> dict:
    return {k.value: v for k, v in node.value}


def parse_config(text: str, src: str = "<config>") -> ExperimentConfig:
    """Parse YAML text into a validated :class:`ExperimentConfig`."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{src}{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if root is None:
        return ExperimentConfig().validate()
    _check_keys(root, TOP_KEYS, src, "top level")
    nodes = _value_nodes(root)
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    for name, node in nodes.items():
        if name in SECTIONS:
            _check_keys(node, {f.name for f in dataclasses.fields(SECTIONS[name])}, src, name)
        elif name == "train":
            _check_keys(node, train_fields, src, name)
    raw = yaml.safe_load(text) or {}

    def build(name, fn, default):
        if name not in raw or raw[name] is None:
            return default
        try:
            return fn(raw[name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{_where(src, nodes[name])}: bad {name!r}: {exc}") from None

    cfg = ExperimentConfig(
        track=build("track", str, "synthetic"),
        seeds=build("seeds", lambda v: [int(s) for s in (v if isinstance(v, list) else [v])], [0, 1, 2]),
        data=build("data", lambda v: DataConfig(**v), DataConfig()),
        model=build("model", lambda v: ModelConfig(**v), ModelConfig()),
        train=build("train", _train_from_dict, desk_train_config()),
        eval=build("eval", lambda v: EvalConfig(**v), EvalConfig()),
        ablation=build("ablation", lambda v: AblationConfig(**v), AblationConfig()),
    )
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{src}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    return parse_config(path.read_text(), str(path))


def config_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
