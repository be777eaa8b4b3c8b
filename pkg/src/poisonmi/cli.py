"""Command-line interface: ``poisonmi <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import audit
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, derive_seed, from_dict, load_config, preset
from .data import gen_blobs, load_csv, save_csv
from .errors import PoisonMIError
from .experiment import build_dataset, shadow_experiment, train_from_config
from .model import build_mlp
from .norm import EncodingSpec
from .nn import SgdConfig
from .poison import AttackConfig, train
from .report import emit_report


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _levels(text):
    try:
        levels = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad FPR list {text!r}") from None
    if not levels or any(not 0 < lv <= 1 for lv in levels):
        raise argparse.ArgumentTypeError("FPR levels must lie in (0, 1]")
    return levels


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _config_from_args(args):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = preset(getattr(args, "preset", None) or "paper-default")
    if getattr(args, "seed", None) is not None:
        data = cfg.to_dict()
        data["seed"] = args.seed
        cfg = from_dict(data)
    return cfg


def _dataset(args, cfg):
    if getattr(args, "data", None):
        ds_cfg = cfg.dataset
        return load_csv(args.data, ds_cfg.num_classes, split_ratio=ds_cfg.split_ratio,
                        seed=derive_seed(cfg.seed, "data"))
    return build_dataset(cfg)


def _checkpoint_context(args):
    model, doc = load_checkpoint(args.checkpoint)
    meta = doc.get("meta", {})
    if "config" not in meta:
        raise PoisonMIError("checkpoint carries no embedded config; it was not written by `train`")
    cfg = from_dict(meta["config"])
    if args.data is None and meta.get("data"):
        args.data = meta["data"]
    return model, cfg, meta, _dataset(args, cfg)


def _report_meta(meta, cfg, model, ds):
    acc = model.accuracy(ds.test_x, ds.test_y) if len(ds.test_x) else float("nan")
    return {
        "run_id": meta.get("run_id", cfg.name),
        "variant": cfg.attack.variant,
        "defense": cfg.defense.kind,
        "test_acc": acc,
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    ds = gen_blobs(args.classes, args.dim, args.members, args.nonmembers, args.test,
                   args.class_spread, args.within_spread, seed=args.seed)
    save_csv(ds, args.out, header=not args.no_header)
    print(f"wrote {args.out} ({len(ds.members_x)} members, {len(ds.nonmembers_x)} nonmembers, {len(ds.test_x)} test)")
    return 0


def cmd_train(args):
    cfg = _config_from_args(args)
    ds = _dataset(args, cfg)
    model, report = train_from_config(cfg, ds)
    meta = {"config": cfg.to_dict(), "run_id": args.run_id or cfg.name, "data": args.data}
    save_checkpoint(model, args.out, epoch=cfg.training.epochs, config_hash=cfg.config_hash(), meta=meta)
    out = report.to_dict()
    out["final_test_acc"] = model.accuracy(ds.test_x, ds.test_y) if len(ds.test_x) else None
    if args.report:
        _write_json(out, args.report)
    print(f"wrote {args.out}")
    return 0


def cmd_audit(args):
    model, cfg, meta, ds = _checkpoint_context(args)
    obf = np.random.default_rng(derive_seed(cfg.seed, "audit") + 1) if args.obfuscate else None
    kind = args.score or ("rank" if args.obfuscate else "logit-scaled")
    rep = audit.run_standard_mi(model, ds.split("member"), ds.split("nonmember"), kind, args.fpr, obfuscate_rng=obf)
    rep.meta.update(_report_meta(meta, cfg, model, ds))
    _write_json(rep.to_dict(), args.out)
    return 0


def cmd_attack(args):
    model, cfg, meta, ds = _checkpoint_context(args)
    spec = cfg.encoding_spec()
    if args.mean is not None or args.stdev is not None:
        spec = EncodingSpec(
            spec.mean if args.mean is None else args.mean,
            spec.stdev if args.stdev is None else args.stdev,
            spec.tolerance, spec.label_policy,
        )
    obf = np.random.default_rng(derive_seed(cfg.seed, "audit") + 1) if args.obfuscate else None
    kind = args.score or ("rank" if args.obfuscate else "logit-scaled")
    rep = audit.run_stealthy_mi(
        model, ds.split("member"), ds.split("nonmember"), spec, ds.num_classes, kind, args.fpr,
        perturb=args.perturb, rng=np.random.default_rng(derive_seed(cfg.seed, "audit")), obfuscate_rng=obf,
    )
    rep.meta.update(_report_meta(meta, cfg, model, ds))
    _write_json(rep.to_dict(), args.out)
    return 0


def cmd_shadow(args):
    model, cfg, meta, ds = _checkpoint_context(args)
    k = args.targets or cfg.audit.shadow_targets
    sub = ds.subset_members(min(k, len(ds.members_x), len(ds.nonmembers_x)),
                            np.random.default_rng(derive_seed(cfg.seed, "shadow") + 1))
    tx = np.vstack([sub.members_x, sub.nonmembers_x])
    ty = np.concatenate([sub.members_y, sub.nonmembers_y])
    n = len(sub.members_x)
    scores, _, _ = shadow_experiment(cfg, ds, model, tx, ty, args.models)
    rep = audit.roc_and_tpr(audit.MiScoreSet(scores[:n], scores[n:], "lira", "lira"), args.fpr)
    rep.meta.update(_report_meta(meta, cfg, model, ds))
    out = rep.to_dict()
    out["targets"] = [
        {"index": i, "member": bool(i < n), "label": int(ty[i]), "score": float(scores[i])} for i in range(len(tx))
    ]
    _write_json(out, args.out)
    return 0


def _game_adversary(kind, threshold):
    def coin(model, z, rng, b=None):
        return int(rng.integers(2))

    def oracle(model, z, rng, b=None):
        return b

    def thresh(model, z, rng, b=None):
        s = audit.model_scores(model, z[0][None, :], np.array([z[1]]))[0]
        return 0 if s >= threshold else 1

    return {"coin": coin, "oracle": oracle, "threshold": thresh}[kind]


def cmd_game(args):
    rng = np.random.default_rng(derive_seed(args.seed, "game"))
    centers = rng.normal(0.0, args.class_spread, size=(args.classes, args.dim))

    def sample(r, n=None):
        n = args.train_size if n is None else n
        y = r.integers(args.classes, size=n)
        return centers[y] + r.normal(0.0, 1.0, size=(n, args.dim)), y

    sgd = SgdConfig(0.1, 0.9, 0.0, [])

    def trainer(x, y, r):
        s = int(r.integers(2**31))
        m = build_mlp([args.dim, args.hidden, args.classes], "none", seed=s)
        train(m, x, y, AttackConfig("clean", epochs=args.epochs, batch_size=16, seed=s + 1), sgd, args.classes)
        return m

    rate = audit.run_mi_game(sample, trainer, _game_adversary(args.adversary, args.threshold), args.trials, rng)
    half = 3 * 0.5 / np.sqrt(args.trials)
    _write_json({"adversary": args.adversary, "trials": args.trials, "success_rate": rate,
                 "chance_band_3sigma": [0.5 - half, 0.5 + half]}, args.out)
    return 0


def cmd_report(args):
    by_run = {}
    for path in args.runs:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if "run_id" not in doc or "protocol" not in doc:
            raise PoisonMIError(f"{path}: not an audit/attack/shadow report")
        run = by_run.setdefault(doc["run_id"], {
            "run_id": doc["run_id"], "variant": doc.get("variant", ""), "defense": doc.get("defense", "none"),
            "test_acc": doc.get("test_acc", float("nan")), "reports": {},
        })
        run["reports"][doc["protocol"]] = doc
    emit_report(list(by_run.values()), args.fpr, args.out, args.roc_dir)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="poisonmi", description="Poisoning-assisted membership inference experiments")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="generate a blobs dataset as CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=8)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--members", type=int, default=64, help="per class")
    g.add_argument("--nonmembers", type=int, default=64, help="per class")
    g.add_argument("--test", type=int, default=64, help="per class")
    g.add_argument("--class-spread", type=float, default=1.5)
    g.add_argument("--within-spread", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-header", action="store_true")
    g.set_defaults(func=cmd_gen)

    def add_config(sp):
        grp = sp.add_mutually_exclusive_group()
        grp.add_argument("--config", help="JSON config file")
        grp.add_argument("--preset", choices=PRESETS)
        sp.add_argument("--seed", type=int, help="override the config seed")

    t = sub.add_parser("train", help="train a model from a config")
    add_config(t)
    t.add_argument("--data", help="CSV dataset (default: blobs from the config)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--report", help="write the TrainReport JSON here")
    t.add_argument("--run-id")
    t.set_defaults(func=cmd_train)

    def add_ckpt(sp, fpr_default="0.001,0.01"):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--data", help="CSV dataset (default: the one used for training)")
        sp.add_argument("--fpr", type=_levels, default=_levels(fpr_default))
        sp.add_argument("--out", help="JSON output path (default: stdout)")

    a = sub.add_parser("audit", help="standard MI on the targets themselves")
    add_ckpt(a)
    a.add_argument("--score", choices=audit.SCORE_KINDS)
    a.add_argument("--obfuscate", action="store_true")
    a.set_defaults(func=cmd_audit)

    k = sub.add_parser("attack", help="stealthy MI through encoding samples")
    add_ckpt(k)
    k.add_argument("--score", choices=audit.SCORE_KINDS)
    k.add_argument("--obfuscate", action="store_true")
    k.add_argument("--perturb", type=float, help="perturb targets by this magnitude first")
    k.add_argument("--mean", type=float)
    k.add_argument("--stdev", type=float)
    k.set_defaults(func=cmd_attack)

    s = sub.add_parser("shadow", help="LiRA with a shadow-model ensemble")
    add_ckpt(s)
    s.add_argument("--models", type=int, default=16)
    s.add_argument("--targets", type=int, help="members (and as many nonmembers) to score")
    s.set_defaults(func=cmd_shadow)

    gm = sub.add_parser("game", help="Monte-Carlo membership game")
    gm.add_argument("--adversary", choices=("coin", "threshold", "oracle"), default="coin")
    gm.add_argument("--trials", type=int, default=200)
    gm.add_argument("--threshold", type=float, default=4.0)
    gm.add_argument("--train-size", type=int, default=16)
    gm.add_argument("--epochs", type=int, default=30)
    gm.add_argument("--classes", type=int, default=4)
    gm.add_argument("--dim", type=int, default=8)
    gm.add_argument("--hidden", type=int, default=32)
    gm.add_argument("--class-spread", type=float, default=1.0)
    gm.add_argument("--seed", type=int, default=0)
    gm.add_argument("--out")
    gm.set_defaults(func=cmd_game)

    r = sub.add_parser("report", help="merge run reports into a summary CSV")
    r.add_argument("runs", nargs="+", help="JSON reports from audit/attack/shadow")
    r.add_argument("--out", required=True)
    r.add_argument("--fpr", type=_levels, default=_levels("0.001,0.01"))
    r.add_argument("--roc-dir")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (PoisonMIError, OSError, ValueError, KeyError) as exc:
        print(f"poisonmi {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
