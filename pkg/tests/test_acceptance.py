"""Acceptance criteria, one test each, on the desk configuration at seed 0.

Every test logs a PASS/FAIL line (see the ``acceptance`` fixture) before
asserting, so the summary lists all criteria even when some fail.
"""
import subprocess
import sys
import time

import numpy as np
import pytest

from poisonmi.audit import MiScoreSet, roc_and_tpr, run_standard_mi, run_stealthy_mi, stealthy_scores, tpr_at_fpr
from poisonmi.config import preset
from poisonmi.defenses import obfuscate_output
from poisonmi.encoder import encode_batch, md5_digest
from poisonmi.experiment import audit_model, build_dataset, run_experiment, shadow_experiment
from poisonmi.model import gradient_check, gradient_check_loss
from poisonmi.nn import DenseLayer, Dropout, ReLU
from poisonmi.norm import DualNormLayer, EncodingSpec, NormLayer, route_mask
from poisonmi.poison import mgda_coefficients

from test_encoder import RFC1321

SEED = 0
SPEC = EncodingSpec()
DPSGD = {"kind": "dpsgd", "clip_norm": 1.0, "noise_multiplier": 0.2}


class _Runs:
    """Lazily trained desk-scale runs shared by the whole module."""

    def __init__(self):
        self._cache = {}

    def get(self, key):
        name, defense = key
        key = (name, tuple(sorted(defense.items())) if defense else None)
        if key not in self._cache:
            overrides = {"defense": defense} if defense else {}
            cfg = preset(name, seed=SEED, **overrides)
            t0 = time.perf_counter()
            res = run_experiment(cfg, build_dataset(cfg))
            res["seconds"] = time.perf_counter() - t0
            res["config"] = cfg
            self._cache[key] = res
        return self._cache[key]


@pytest.fixture(scope="module")
def runs():
    return _Runs()


def _tpr(res, protocol="stealthy"):
    return res[protocol].tpr_at_lowest()


# ---------------------------------------------------------------------------


def test_criterion_01_gradient_checks(acceptance):
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    reports = {}
    reports["dense"] = gradient_check([DenseLayer(6, 5, rng), ReLU(), DenseLayer(5, 3, rng)], rng.normal(size=(7, 6)), 1e-5, rng)
    reports["dropout-eval"] = gradient_check([DenseLayer(6, 5, rng), Dropout(0.3, rng)], rng.normal(size=(7, 6)), 1e-5, rng,
                                             training=False)
    bn = NormLayer(5)
    bn.gamma.value = rng.normal(size=5)
    reports["bn-train"] = gradient_check([DenseLayer(6, 5, rng), bn], rng.normal(size=(7, 6)), 1e-5, rng)
    x = np.vstack([rng.normal(size=(5, 6)) * 2 + 1, encode_batch(rng.normal(size=(4, 6)), [0] * 4, SPEC, 3)[0]])
    dual = DualNormLayer(5, SPEC)
    dual.primary.gamma.value = rng.normal(size=5)
    dual.secondary.gamma.value = rng.normal(size=5)
    reports["dual-bn-mixed"] = gradient_check([DenseLayer(6, 5, rng), dual], x, 1e-5, rng, route=route_mask(x, SPEC))
    reports["softmax-ce"] = gradient_check_loss(rng.normal(size=(6, 4)) * 3, rng.integers(4, size=6), 1e-5)
    seconds = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in reports.values())
    ok = all(r.passed for r in reports.values()) and seconds < 10
    acceptance(1, ok, f"max rel error {worst:.2e} (<= 1e-5), {seconds:.2f}s (< 10s)")
    assert ok


def test_criterion_02_encoding_determinism(acceptance):
    md5_ok = all(md5_digest(k).hex() == v for k, v in RFC1321)
    code = (
        "import numpy as np, sys\n"
        "from poisonmi.encoder import encode_batch\nfrom poisonmi.norm import EncodingSpec\n"
        "x = np.random.default_rng(3).normal(size=(50, 32))\n"
        "xs, ys, _ = encode_batch(x, np.arange(50) % 8, EncodingSpec(), 8)\n"
        "sys.stdout.write(xs.tobytes().hex() + ys.tobytes().hex())\n"
    )
    outs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)]
    cross_ok = outs[0] == outs[1] and len(outs[0]) > 0
    x = np.random.default_rng(SEED).normal(size=(10_000, 32))
    xs, _, _ = encode_batch(x, np.zeros(10_000, dtype=int), SPEC, 8)
    dupes = 10_000 - len({row.tobytes() for row in xs})
    ok = md5_ok and cross_ok and dupes == 0
    acceptance(2, ok, f"RFC vectors {'ok' if md5_ok else 'MISMATCH'}, cross-process bitwise {cross_ok}, "
                      f"{dupes} duplicates in 10000")
    assert ok


def test_criterion_03_routing_exactness(acceptance):
    cfg = preset("paper-default", seed=SEED)
    ds = build_dataset(cfg)
    blobs = np.vstack([ds.members_x, ds.nonmembers_x, ds.test_x])
    labels = np.concatenate([ds.members_y, ds.nonmembers_y, ds.test_y])
    enc, _, _ = encode_batch(blobs, labels, SPEC, ds.num_classes)
    extra, _, _ = encode_batch(np.random.default_rng(1).normal(size=(5000, ds.dim)) * 3, np.zeros(5000, int), SPEC, 8)
    enc_frac = np.concatenate([route_mask(enc, SPEC), route_mask(extra, SPEC)]).mean()
    blob_frac = 1.0 - route_mask(blobs, SPEC).mean()
    ok = enc_frac == 1.0 and blob_frac == 1.0
    acceptance(3, ok, f"encodings routed secondary {enc_frac:.2%}, blob samples routed primary {blob_frac:.2%}")
    assert ok


def test_criterion_04_complete_attack(runs, acceptance):
    res = runs.get(("paper-default", None))
    tpr = _tpr(res)
    lowest = res["stealthy"].lowest_fpr
    ok = tpr >= 0.95 and res["seconds"] <= 600
    acceptance(4, ok, f"stealthy TPR {tpr:.4f} at FPR {lowest:.4g} (>= 0.95), train+audit {res['seconds']:.0f}s (<= 600s)")
    assert ok


def test_criterion_05_accuracy_preservation(runs, acceptance):
    clean, dual = runs.get(("clean", None)), runs.get(("paper-default", None))
    drop = 100 * (clean["test_acc"] - dual["test_acc"])
    ok = abs(drop) <= 3.0
    acceptance(5, ok, f"clean acc {clean['test_acc']:.4f}, poisoned acc {dual['test_acc']:.4f}, drop {drop:.2f} points (<= 3)")
    assert ok


def test_criterion_06_stealthiness(runs, acceptance):
    clean, dual = runs.get(("clean", None)), runs.get(("paper-default", None))
    gap = abs(dual["standard"].auc - clean["standard"].auc)
    stl_clean = clean["stealthy"].auc
    ok = gap <= 0.05 and abs(stl_clean - 0.5) <= 0.1
    acceptance(6, ok, f"|standard AUC poisoned {dual['standard'].auc:.4f} - clean {clean['standard'].auc:.4f}| = {gap:.4f} "
                      f"(<= 0.05); stealthy AUC on clean {stl_clean:.4f} (0.5 +- 0.1)")
    assert ok


def test_criterion_07_basic_vs_complete(runs, acceptance):
    dual, basic = runs.get(("paper-default", None)), runs.get(("basic", None))
    assert dual["config"].training.epochs == basic["config"].training.epochs
    diff = _tpr(dual) - _tpr(basic)
    ok = diff >= 0.10
    acceptance(7, ok, f"dual-norm TPR {_tpr(dual):.4f} - basic TPR {_tpr(basic):.4f} = {diff:.4f} (>= 0.10)")
    assert ok


def test_criterion_08_mgda_oracle(acceptance):
    rng = np.random.default_rng(SEED)
    alpha = np.linspace(0, 1, 1001)
    worst = -np.inf
    for _ in range(100):
        d = int(rng.integers(1, 64))
        g1, g2 = rng.normal(size=d) * rng.uniform(0.1, 10), rng.normal(size=d) * rng.uniform(0.1, 10)
        a, b = mgda_coefficients(g1, g2)
        v = a * g1 + b * g2
        comb = alpha[:, None] * g1 + (1 - alpha[:, None]) * g2
        grid = (comb**2).sum(axis=1).min()
        worst = max(worst, float(v @ v) - grid)
    ok = worst <= 1e-9
    acceptance(8, ok, f"max(attained - grid minimum) = {worst:.3e} (<= 1e-9) over 100 pairs")
    assert ok


def _brute(m, n):
    wins = (m[:, None] > n[None, :]).sum() + 0.5 * (m[:, None] == n[None, :]).sum()
    thr = np.unique(np.concatenate([m, n]))[::-1]
    pts = [(0.0, 0.0)] + [(float((n >= t).sum() / len(n)), float((m >= t).sum() / len(m))) for t in thr]
    return wins / (len(m) * len(n)), pts


def test_criterion_09_roc_oracle(acceptance):
    rng = np.random.default_rng(SEED)
    bad = 0
    for _ in range(200):
        nm, nn = int(rng.integers(1, 501)), int(rng.integers(1, 501))
        m = np.round(rng.normal(0.4, 1, nm), int(rng.integers(0, 3)))
        n = np.round(rng.normal(0, 1, nn), int(rng.integers(0, 3)))
        rep = roc_and_tpr(MiScoreSet(m, n), (0.01, 0.1))
        auc, pts = _brute(m, n)
        exact = rep.auc == auc and rep.roc == pts
        exact &= all(rep.tpr_at[lv] == max(t for f, t in pts if f <= lv) for lv in (0.01, 0.1))
        bad += not exact
    ok = bad == 0
    acceptance(9, ok, f"{200 - bad}/200 instances match brute force exactly (n <= 1000, with ties)")
    assert ok


def test_criterion_10_replacement(runs, acceptance):
    rep, dual, clean = runs.get(("replacement-30", None)), runs.get(("paper-default", None)), runs.get(("clean", None))
    fwd_rep, fwd_clean = rep["train"].forward_pass_count, clean["train"].forward_pass_count
    ok = _tpr(rep) >= _tpr(dual) - 0.10 and fwd_rep == fwd_clean
    acceptance(10, ok, f"replacement TPR {_tpr(rep):.4f} vs dual-norm {_tpr(dual):.4f} (>= dual - 0.10); "
                       f"forward passes {fwd_rep} vs clean {fwd_clean} (equal)")
    assert ok


def test_criterion_11_dpsgd(runs, acceptance):
    dp, dual = runs.get(("paper-default", DPSGD)), runs.get(("paper-default", None))
    drop = _tpr(dual) - _tpr(dp)
    ok = drop >= 0.30 and dp["test_acc"] < dual["test_acc"]
    acceptance(11, ok, f"TPR undefended {_tpr(dual):.4f} -> DPSGD {_tpr(dp):.4f}, drop {drop:.4f} (>= 0.30); "
                       f"acc {dual['test_acc']:.4f} -> {dp['test_acc']:.4f} (must drop)")
    assert ok


def test_criterion_12_evasion(runs, acceptance):
    dual, clean = runs.get(("paper-default", None)), runs.get(("clean", None))
    parts, ok = [], True
    for kind in ("mmd", "softlabel"):
        att = runs.get(("paper-default", {"kind": kind}))
        dc = runs.get(("clean", {"kind": kind}))
        evade = abs(_tpr(att) - _tpr(dual)) <= 0.05
        no_leak = dc["standard"].auc <= clean["standard"].auc
        ok &= evade and no_leak
        parts.append(f"{kind}: attacked TPR {_tpr(att):.4f} vs {_tpr(dual):.4f} ({'ok' if evade else 'off'}), "
                     f"clean standard AUC {dc['standard'].auc:.4f} vs {clean['standard'].auc:.4f} "
                     f"({'ok' if no_leak else 'exceeds'})")
    acceptance(12, ok, "; ".join(parts))
    assert ok


def test_criterion_13_countermeasure(runs, acceptance):
    res = runs.get(("paper-default", None))
    ds, model = res["dataset"], res["model"]
    rep = run_stealthy_mi(model, ds.split("member"), ds.split("nonmember"), SPEC, ds.num_classes,
                          perturb=1e-3, rng=np.random.default_rng(SEED))
    ok = abs(rep.auc - 0.5) <= 0.1
    acceptance(13, ok, f"stealthy AUC after 1e-3 perturbation {rep.auc:.4f} (0.5 +- 0.1; unperturbed {res['stealthy'].auc:.4f})")
    assert ok


def test_criterion_14_obfuscation(runs, acceptance):
    res = runs.get(("paper-default", None))
    ds, model, cfg = res["dataset"], res["model"], res["config"]
    _, stl = audit_model(model, cfg, ds, obfuscate=True)
    probs = model.predict_proba(ds.test_x)
    obf = obfuscate_output(probs, np.random.default_rng(SEED))
    acc_obf = float((obf.argmax(axis=1) == ds.test_y).mean())
    ok = stl.auc >= 0.9 and acc_obf == res["test_acc"]
    acceptance(14, ok, f"rank-score stealthy AUC under obfuscation {stl.auc:.4f} (>= 0.9); "
                       f"accuracy {res['test_acc']:.4f} -> {acc_obf:.4f} (unchanged)")
    assert ok


def test_criterion_15_shadow_lira(runs, acceptance):
    res = runs.get(("clean", None))
    ds, model, cfg = res["dataset"], res["model"], res["config"]
    sub = ds.subset_members(200, np.random.default_rng(SEED))
    tx = np.vstack([sub.members_x, sub.nonmembers_x])
    ty = np.concatenate([sub.members_y, sub.nonmembers_y])
    t0 = time.perf_counter()
    scores, _, _ = shadow_experiment(cfg, ds, model, tx, ty, 16)
    seconds = time.perf_counter() - t0
    lira = roc_and_tpr(MiScoreSet(scores[:200], scores[200:], "lira"))
    glob = run_standard_mi(model, (sub.members_x, sub.members_y), (sub.nonmembers_x, sub.nonmembers_y))
    ok = lira.auc >= glob.auc - 0.05 and seconds <= 1200
    acceptance(15, ok, f"LiRA AUC {lira.auc:.4f} vs global-threshold {glob.auc:.4f} (>= -0.05), "
                       f"16 shadows in {seconds:.0f}s (<= 1200s)")
    assert ok


@pytest.mark.parametrize("kind", ["mmd", "softlabel"])
def test_evasion_roc_dominance(runs, kind):
    res = runs.get(("paper-default", {"kind": kind}))
    std, stl = res["standard"], res["stealthy"]
    n = std.n_nonmembers
    for k in range(n + 1):
        assert tpr_at_fpr(stl.roc, k / n) >= tpr_at_fpr(std.roc, k / n)


def test_stealthy_gap_positive(runs):
    res = runs.get(("paper-default", None))
    ds, model = res["dataset"], res["model"]
    sm = stealthy_scores(model, ds.members_x, ds.members_y, SPEC, ds.num_classes)
    sn = stealthy_scores(model, ds.nonmembers_x, ds.nonmembers_y, SPEC, ds.num_classes)
    assert sm.mean() - sn.mean() > 0

