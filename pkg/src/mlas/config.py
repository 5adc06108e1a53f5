"""Run configuration shared by every command-line subcommand.

The file format is JSON with four optional sections plus a top-level seed::

    {
      "seed": 0,
      "synth": {"n_groups": 2, "u": 6, "r": 10, "n_feedback": 40},
      "model": {"variant": "balanced", "attnet_units": [10], "seqnet_units": 10},
      "training": {"margin": 3.0, "learning_rate": 0.05},
      "eval": {"k": null, "n_init": 10}
    }

Missing keys take their defaults, unknown keys are rejected. Overrides of
the form ``section.key=value`` (value parsed as JSON, else taken as a plain
string) are applied after the file. The single top-level seed drives data
generation, initialisation, shuffling and clustering alike.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .fusion import FusionVariant, init_fusion
from .metric import TrainingConfig
from .synth import SynthSpec, default_spec


@dataclass
class SynthSection:
    n_groups: int = 2
    u: int = 6
    r: int = 10
    length_range: list = field(default_factory=lambda: [5, 12])
    n_per_group: int = 50
    n_feedback: int = 40
    similar_fraction: float = 0.5
    attribute_separation: float = 2.0
    attribute_spread: float = 0.3
    transition_divergence: float = 0.9
    nuisance_scale: float = 5.0


@dataclass
class ModelSection:
    variant: str = "balanced"
    attnet_units: list = field(default_factory=lambda: [10])
    seqnet_units: int = 10
    output: int = 10
    activation: str = "tanh"


@dataclass
class EvalSection:
    k: int | None = None
    max_iters: int = 300
    n_init: int = 10


@dataclass
class GradcheckSection:
    n_instances: int = 10
    activation: str = "tanh"


def _training_defaults() -> dict:
    d = asdict(TrainingConfig())
    d.pop("seed")
    return d


SECTIONS = {
    "synth": SynthSection,
    "model": ModelSection,
    "eval": EvalSection,
    "gradcheck": GradcheckSection,
}


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthSection = field(default_factory=SynthSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: dict = field(default_factory=_training_defaults)
    eval: EvalSection = field(default_factory=EvalSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(doc) - {"seed", "training", *SECTIONS}
        if unknown:
            raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
        cfg = cls()
        if "seed" in doc:
            cfg.seed = doc["seed"]
        for name, section in doc.items():
            if name == "seed":
                continue
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            for key, value in section.items():
                cfg.set(f"{name}.{key}", value)
        return cfg

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "synth": asdict(self.synth),
            "model": asdict(self.model),
            "training": dict(self.training),
            "eval": asdict(self.eval),
            "gradcheck": asdict(self.gradcheck),
        }

    def set(self, dotted: str, value) -> None:
        if dotted == "seed":
            self.seed = value
            return
        name, _, key = dotted.partition(".")
        if name == "training":
            if key not in self.training:
                raise ConfigError(f"unknown training option {key!r}; valid: {sorted(self.training)}")
            self.training[key] = value
            return
        if name not in SECTIONS or not key:
            raise ConfigError(f"unknown option {dotted!r}")
        section = getattr(self, name)
        if key not in {f.name for f in fields(section)}:
            raise ConfigError(f"unknown option {dotted!r}")
        setattr(section, key, value)

    def apply_override(self, text: str) -> None:
        key, sep, raw = text.partition("=")
        if not sep:
            raise ConfigError(f"override {text!r} must look like section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        self.set(key.strip(), value)

    # -- resolved objects ---------------------------------------------------

    def training_config(self) -> TrainingConfig:
        try:
            return TrainingConfig(seed=self.seed, **self.training)
        except TypeError as exc:
            raise ConfigError(f"bad training configuration: {exc}") from None

    def synth_spec(self) -> SynthSpec:
        s = self.synth
        try:
            return default_spec(n_groups=s.n_groups, u=s.u, r=s.r, length_range=tuple(s.length_range),
                                n_per_group=s.n_per_group, n_feedback=s.n_feedback,
                                similar_fraction=s.similar_fraction, attribute_separation=s.attribute_separation,
                                attribute_spread=s.attribute_spread, transition_divergence=s.transition_divergence,
                                nuisance_scale=s.nuisance_scale, seed=self.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synth configuration: {exc}") from None

    def variant(self) -> FusionVariant:
        return FusionVariant.parse(self.model.variant)

    def init_model(self, attr_dim: int, item_dim: int):
        m = self.model
        try:
            units = [int(v) for v in m.attnet_units]
        except (TypeError, ValueError):
            raise ConfigError(f"model.attnet_units must be a list of integers, got {m.attnet_units!r}") from None
        return init_fusion(self.variant(), attr_dim, item_dim, units, int(m.seqnet_units), int(m.output),
                           m.activation, self.seed)

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        self.training_config()
        self.variant()


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """File values, then ``overrides``, then an explicit ``seed``."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from None
        cfg = RunConfig.from_dict(doc)
    for text in overrides:
        cfg.apply_override(text)
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg
