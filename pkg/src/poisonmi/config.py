"""Experiment configuration: strict JSON schema, validation and presets.

A config is a JSON object with the sections ``dataset``, ``model``,
``attack``, ``training``, ``defense`` and ``audit`` plus top-level ``name``
and ``seed``.  Missing keys take defaults; unknown keys are rejected.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .defenses import DEFENSES, DefenseConfig, DpsgdConfig, MmdConfig
from .errors import ConfigError
from .model import NORM_KINDS
from .nn import SgdConfig
from .norm import LABEL_POLICIES, EncodingSpec
from .poison import VARIANTS, AttackConfig

# per-purpose seed derivation: seed XOR role tag
ROLE_TAGS = {
    "data": 0x0DA7A,
    "init": 0x1417,
    "train": 0x7A41,
    "shadow": 0x5AD0,
    "audit": 0xA0D1,
    "game": 0x6A3E,
    "teacher": 0x7EAC,
}


def derive_seed(seed: int, role: str) -> int:
    return (int(seed) ^ ROLE_TAGS[role]) & 0x7FFFFFFFFFFFFFFF


@dataclass
class DatasetSection:
    source: str = "blobs"
    csv: str | None = None
    split_ratio: float | None = None
    num_classes: int = 8
    dim: int = 32
    per_class_members: int = 64
    per_class_nonmembers: int = 64
    per_class_test: int = 64
    class_spread: float = 1.5
    within_spread: float = 1.0


@dataclass
class ModelSection:
    hidden: list = field(default_factory=lambda: [256, 256])
    norm: str = "dual"
    dropout: float = 0.0


@dataclass
class AttackSection:
    variant: str = "dual-norm"
    mean: float = 0.0
    stdev: float = 0.1
    tolerance: float = 0.1
    label_policy: str = "same-label"
    replacement_ratio: float | None = None
    beta: float | None = None
    cache_encodings: bool = False


@dataclass
class TrainingSection:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: list = field(default_factory=lambda: [[60, 5.0], [120, 5.0], [160, 5.0]])


@dataclass
class DefenseSection:
    kind: str = "none"
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    mmd_lambda: float = 7.0
    mmd_bandwidth: float = 1.0
    softlabel_teachers: int = 2


@dataclass
class AuditSection:
    fpr_levels: list = field(default_factory=lambda: [0.001, 0.01])
    shadow_models: int = 16
    shadow_targets: int = 200
    checkpoint_epochs: list = field(default_factory=list)
    perturb_magnitude: float | None = None


@dataclass
class ExperimentConfig:
    name: str = "paper-default"
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    attack: AttackSection = field(default_factory=AttackSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    audit: AuditSection = field(default_factory=AuditSection)

    # -- conversions -----------------------------------------------------
    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def encoding_spec(self):
        a = self.attack
        return EncodingSpec(a.mean, a.stdev, a.tolerance, a.label_policy)

    def attack_config(self, seed=None):
        a, t = self.attack, self.training
        return AttackConfig(
            variant=a.variant,
            spec=self.encoding_spec(),
            replacement_ratio=a.replacement_ratio,
            beta=a.beta,
            epochs=t.epochs,
            batch_size=t.batch_size,
            seed=derive_seed(self.seed, "train") if seed is None else seed,
            cache_encodings=a.cache_encodings,
        )

    def sgd_config(self):
        t = self.training
        return SgdConfig(t.learning_rate, t.momentum, t.weight_decay, [tuple(s) for s in t.schedule])

    def defense_config(self):
        d = self.defense
        return DefenseConfig(
            kind=d.kind,
            dpsgd=DpsgdConfig(d.clip_norm, d.noise_multiplier),
            mmd=MmdConfig(d.mmd_lambda, d.mmd_bandwidth),
            softlabel_teachers=d.softlabel_teachers,
        )

    def dims(self, d_in=None, num_classes=None):
        return [d_in or self.dataset.dim, *self.model.hidden, num_classes or self.dataset.num_classes]


_SECTIONS = {
    "dataset": DatasetSection,
    "model": ModelSection,
    "attack": AttackSection,
    "training": TrainingSection,
    "defense": DefenseSection,
    "audit": AuditSection,
}


def _build_section(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**data)


def from_dict(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top = {"name", "seed", *_SECTIONS}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {k: data[k] for k in ("name", "seed") if k in data}
    for key, cls in _SECTIONS.items():
        kwargs[key] = _build_section(cls, data.get(key, {}), key)
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data)


def validate(cfg: ExperimentConfig):
    """Raise :class:`ConfigError` on any inconsistent combination."""
    ds, m, a, t, d, au = cfg.dataset, cfg.model, cfg.attack, cfg.training, cfg.defense, cfg.audit
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if ds.source not in ("blobs", "csv"):
        raise ConfigError("dataset.source must be 'blobs' or 'csv'")
    if ds.source == "csv" and not ds.csv:
        raise ConfigError("dataset.csv path required when source is 'csv'")
    if ds.dim < 2:
        raise ConfigError("dataset.dim must be >= 2")
    if ds.num_classes < 2:
        raise ConfigError("dataset.num_classes must be >= 2")
    if min(ds.per_class_members, ds.per_class_nonmembers, ds.per_class_test) < 0:
        raise ConfigError("per-class counts must be >= 0")
    if m.norm not in NORM_KINDS:
        raise ConfigError(f"model.norm must be one of {NORM_KINDS}")
    if not m.hidden or any(int(h) < 1 for h in m.hidden):
        raise ConfigError("model.hidden must list positive widths")
    if not 0 <= m.dropout < 1:
        raise ConfigError("model.dropout must be in [0, 1)")
    if a.variant not in VARIANTS:
        raise ConfigError(f"attack.variant must be one of {VARIANTS}")
    if a.label_policy not in LABEL_POLICIES:
        raise ConfigError(f"attack.label_policy must be one of {LABEL_POLICIES}")
    if a.variant == "dual-norm" and m.norm != "dual":
        raise ConfigError("dual-norm variant requires model.norm = 'dual'")
    if a.variant in ("basic", "mgda", "fixed-coef") and m.norm == "dual":
        raise ConfigError(f"{a.variant} variant does not use dual norm layers")
    if d.kind not in DEFENSES:
        raise ConfigError(f"defense.kind must be one of {DEFENSES}")
    if d.kind == "dpsgd" and a.variant == "mgda":
        raise ConfigError("DP-SGD cannot be combined with the mgda variant")
    if d.kind == "mmd" and ds.per_class_test == 0 and ds.source == "blobs":
        raise ConfigError("MMD defense uses the test split as its reference set; it cannot be empty")
    if not au.fpr_levels or any(not 0 < f <= 1 for f in au.fpr_levels):
        raise ConfigError("audit.fpr_levels must lie in (0, 1]")
    if au.shadow_models < 4 or au.shadow_models % 2:
        raise ConfigError("audit.shadow_models must be even and >= 4")
    if au.perturb_magnitude is not None and not au.perturb_magnitude > 0:
        raise ConfigError("audit.perturb_magnitude must be > 0")
    if t.epochs < 0 or t.batch_size < 1:
        raise ConfigError("training.epochs must be >= 0 and batch_size >= 1")
    try:
        cfg.attack_config()
        cfg.sgd_config()
        cfg.defense_config()
        cfg.encoding_spec()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# ---------------------------------------------------------------------------
# presets

_PRESETS = {
    "paper-default": {},
    "clean": {"name": "clean", "model": {"norm": "standard"}, "attack": {"variant": "clean"}},
    "basic": {"name": "basic", "model": {"norm": "standard"}, "attack": {"variant": "basic"}},
    "norm-free": {
        "name": "norm-free",
        "model": {"norm": "none"},
        "attack": {"variant": "basic", "mean": 0.3, "stdev": 1.5},
    },
    "replacement-30": {
        "name": "replacement-30",
        "attack": {"variant": "replacement", "replacement_ratio": 0.3},
    },
}

PRESETS = tuple(_PRESETS)


def preset(name: str, **overrides) -> ExperimentConfig:
    """Return a named preset; ``overrides`` are ``section={key: value}`` dicts."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(_PRESETS)}")
    data = copy.deepcopy(_PRESETS[name])
    data.setdefault("name", name)
    for section, values in overrides.items():
        if isinstance(values, dict):
            data.setdefault(section, {}).update(values)
        else:
            data[section] = values
    return from_dict(data)
