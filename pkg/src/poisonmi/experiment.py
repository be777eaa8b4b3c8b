"""Glue between configs, datasets, training and auditing."""
from __future__ import annotations

import numpy as np

from . import audit
from .config import ExperimentConfig, derive_seed
from .data import Dataset, gen_blobs, load_csv
from .defenses import DefenseConfig
from .errors import ConfigError
from .model import Model, build_mlp
from .poison import AttackConfig, train


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    ds = cfg.dataset
    if ds.source == "csv":
        return load_csv(ds.csv, ds.num_classes, split_ratio=ds.split_ratio, seed=derive_seed(cfg.seed, "data"))
    return gen_blobs(
        ds.num_classes, ds.dim, ds.per_class_members, ds.per_class_nonmembers, ds.per_class_test,
        ds.class_spread, ds.within_spread, seed=derive_seed(cfg.seed, "data"),
    )


def build_model(cfg: ExperimentConfig, dim, num_classes, seed=None) -> Model:
    return build_mlp(
        cfg.dims(dim, num_classes), cfg.model.norm, cfg.model.dropout,
        spec=cfg.encoding_spec(), seed=derive_seed(cfg.seed, "init") if seed is None else seed,
    )


def teacher_soft_labels(cfg: ExperimentConfig, x, y, num_classes, folds=2):
    """Soft labels for every member from a teacher that never saw it.

    Members are split into ``folds`` parts; the teacher for part k is a clean
    model trained on the other parts and labels part k with its softmax.
    """
    rng = np.random.default_rng(derive_seed(cfg.seed, "teacher"))
    part = rng.permutation(len(x)) % folds
    soft = np.zeros((len(x), num_classes))
    norm = "standard" if cfg.model.norm == "dual" else cfg.model.norm
    for k in range(folds):
        held = part == k
        teacher = build_mlp(
            cfg.dims(x.shape[1], num_classes), norm, cfg.model.dropout, seed=derive_seed(cfg.seed, "teacher") + k
        )
        att = AttackConfig("clean", epochs=cfg.training.epochs, batch_size=cfg.training.batch_size,
                           seed=derive_seed(cfg.seed, "teacher") + 100 + k)
        train(teacher, x[~held], y[~held], att, cfg.sgd_config(), num_classes)
        soft[held] = teacher.predict_proba(x[held])
    return soft


def train_from_config(cfg: ExperimentConfig, ds: Dataset, on_epoch_end=None, seed=None):
    """Train one model per ``cfg`` on ``ds.members``; returns ``(model, TrainReport)``."""
    model = build_model(cfg, ds.dim, ds.num_classes)
    defense: DefenseConfig = cfg.defense_config()
    kwargs = {}
    if defense.kind == "mmd":
        if len(ds.test_x) == 0:
            raise ConfigError("MMD defense needs a non-empty test split as reference set")
        kwargs["validation"] = ds.test_x
    if defense.kind == "softlabel":
        kwargs["soft_targets"] = teacher_soft_labels(
            cfg, ds.members_x, ds.members_y, ds.num_classes, defense.softlabel_teachers
        )
    report = train(
        model, ds.members_x, ds.members_y, cfg.attack_config(seed), cfg.sgd_config(), ds.num_classes,
        defense=defense, test=ds.test if len(ds.test_x) else None, on_epoch_end=on_epoch_end, **kwargs,
    )
    return model, report


def audit_model(model: Model, cfg: ExperimentConfig, ds: Dataset, obfuscate=False, perturb=None, score_kind=None):
    """Standard and stealthy MI reports for a trained model."""
    levels = tuple(cfg.audit.fpr_levels)
    members = (ds.members_x, ds.members_y)
    nonmembers = (ds.nonmembers_x, ds.nonmembers_y)
    rng = np.random.default_rng(derive_seed(cfg.seed, "audit"))
    obf = np.random.default_rng(derive_seed(cfg.seed, "audit") + 1) if obfuscate else None
    kind = score_kind or ("rank" if obfuscate else "logit-scaled")
    std = audit.run_standard_mi(model, members, nonmembers, kind, levels, obfuscate_rng=obf)
    stl = audit.run_stealthy_mi(
        model, members, nonmembers, cfg.encoding_spec(), ds.num_classes, kind, levels,
        perturb=perturb if perturb is not None else cfg.audit.perturb_magnitude, rng=rng, obfuscate_rng=obf,
    )
    return std, stl


def run_experiment(cfg: ExperimentConfig, ds: Dataset | None = None):
    """Train and audit; returns a dict with the model, train report and both MI reports."""
    ds = ds if ds is not None else build_dataset(cfg)
    model, report = train_from_config(cfg, ds)
    std, stl = audit_model(model, cfg, ds)
    acc = model.accuracy(ds.test_x, ds.test_y) if len(ds.test_x) else float("nan")
    meta = {"run_id": cfg.name, "variant": cfg.attack.variant, "defense": cfg.defense.kind, "test_acc": acc}
    std.meta.update(meta)
    stl.meta.update(meta)
    return {"model": model, "train": report, "standard": std, "stealthy": stl, "test_acc": acc, "dataset": ds}


def shadow_experiment(cfg: ExperimentConfig, ds: Dataset, target_model: Model, targets_x, targets_y, n_models=None):
    """LiRA over a shadow ensemble (clean variant) for the given targets.

    Members and nonmembers that are not targets form the background pool, so
    each shadow trains on as many samples as the target model when the
    targets are drawn evenly from both splits.
    """
    n_models = n_models or cfg.audit.shadow_models
    clean = cfg.attack_config()
    norm = "standard" if cfg.model.norm == "dual" else cfg.model.norm

    def train_fn(x, y, seed):
        m = build_mlp(cfg.dims(ds.dim, ds.num_classes), norm, cfg.model.dropout, seed=seed)
        att = AttackConfig("clean", epochs=clean.epochs, batch_size=clean.batch_size, seed=seed + 1)
        train(m, x, y, att, cfg.sgd_config(), ds.num_classes)
        return m

    pool_x = np.vstack([ds.members_x, ds.nonmembers_x])
    pool_y = np.concatenate([ds.members_y, ds.nonmembers_y])
    is_target = {np.asarray(row, dtype=np.float64).tobytes() for row in targets_x}
    keep = np.array([row.tobytes() not in is_target for row in pool_x], dtype=bool)
    target_scores = audit.model_scores(target_model, targets_x, targets_y)
    rng = np.random.default_rng(derive_seed(cfg.seed, "shadow"))
    return audit.shadow_lira(targets_x, targets_y, target_scores, train_fn, n_models, rng,
                             background=(pool_x[keep], pool_y[keep]))
