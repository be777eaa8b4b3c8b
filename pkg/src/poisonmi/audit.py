"""Membership-inference scoring, ROC analysis, LiRA and the MI game.

Scores are oriented so that higher means more member-like.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .defenses import obfuscate_output
from .encoder import encode_batch, perturb_features
from .errors import EmptyInputError, InsufficientDataError
from .norm import EncodingSpec

KAPPA = 1e-12
SIGMA_FLOOR = 1e-8
SCORE_KINDS = ("logit-scaled", "loss", "confidence", "rank")


@dataclass
class MiScoreSet:
    member_scores: np.ndarray
    nonmember_scores: np.ndarray
    protocol: str = "standard"
    score_kind: str = "logit-scaled"


@dataclass
class MiReport:
    roc: list
    auc: float
    tpr_at: dict
    protocol: str = "standard"
    score_kind: str = "logit-scaled"
    n_members: int = 0
    n_nonmembers: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def lowest_fpr(self):
        return 1.0 / self.n_nonmembers

    def tpr_at_lowest(self):
        return tpr_at_fpr(self.roc, self.lowest_fpr)

    def to_dict(self):
        return {
            "protocol": self.protocol,
            "score_kind": self.score_kind,
            "auc": self.auc,
            "tpr_at": {format_level(k): v for k, v in self.tpr_at.items()},
            "tpr_at_lowest_fpr": self.tpr_at_lowest(),
            "lowest_fpr": self.lowest_fpr,
            "n_members": self.n_members,
            "n_nonmembers": self.n_nonmembers,
            "roc": [[f, t] for f, t in self.roc],
            **self.meta,
        }


def format_level(level):
    return format(level, "g")


# ---------------------------------------------------------------------------
# score functions


def logit_scaled_score(probs, label):
    """``log(p / (1 - p))`` of the labelled class, with p clipped to [1e-12, 1 - 1e-12]."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        if not 0 <= label < probs.shape[0]:
            raise IndexError(f"label {label} out of range")
        p = min(max(probs[label], KAPPA), 1.0 - KAPPA)
        return math.log(p / (1.0 - p))
    labels = np.asarray(label, dtype=np.int64)
    p = np.clip(probs[np.arange(len(labels)), labels], KAPPA, 1.0 - KAPPA)
    return np.log(p / (1.0 - p))


def score_outputs(probs, labels, kind="logit-scaled"):
    """Vector of member-likeness scores for each row of ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))
    if kind == "logit-scaled":
        return logit_scaled_score(probs, labels)
    if kind == "confidence":
        return probs[rows, labels]
    if kind == "loss":
        return np.log(np.clip(probs[rows, labels], KAPPA, None))
    if kind == "rank":
        # number of classes ranked strictly above the label, negated
        return -(probs > probs[rows, labels][:, None]).sum(axis=1).astype(np.float64)
    raise ValueError(f"unknown score kind {kind!r}")


# ---------------------------------------------------------------------------
# ROC


def roc_counts(members, nonmembers):
    """Integer (false-positive, true-positive) counts at every distinct threshold.

    Predict "member" when ``score >= t``; thresholds run over the union of
    scores in decreasing order, preceded by the empty prediction (0, 0).
    """
    m = np.asarray(members, dtype=np.float64)
    n = np.asarray(nonmembers, dtype=np.float64)
    if m.size == 0 or n.size == 0:
        raise EmptyInputError("ROC needs member and nonmember scores")
    thr = np.unique(np.concatenate([m, n]))[::-1]
    ms = np.sort(m)
    ns = np.sort(n)
    tp = m.size - np.searchsorted(ms, thr, side="left")
    fp = n.size - np.searchsorted(ns, thr, side="left")
    return np.concatenate([[0], fp]), np.concatenate([[0], tp])


def auc_from_counts(fp, tp, n_pos, n_neg):
    # trapezoid in integers: sum dFP * (TP_prev + TP_next) == 2*wins + ties
    twice = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice / (2 * n_pos * n_neg)


def tpr_at_fpr(roc, level):
    best = 0.0
    for f, t in roc:
        if f <= level + 1e-15 and t > best:
            best = t
    return best


def roc_and_tpr(scores: MiScoreSet, fpr_levels=(0.001,)) -> MiReport:
    m, n = scores.member_scores, scores.nonmember_scores
    fp, tp = roc_counts(m, n)
    nm, nn = len(m), len(n)
    roc = [(int(f) / nn, int(t) / nm) for f, t in zip(fp, tp)]
    return MiReport(
        roc=roc,
        auc=auc_from_counts(fp, tp, nm, nn),
        tpr_at={float(lv): tpr_at_fpr(roc, lv) for lv in fpr_levels},
        protocol=scores.protocol,
        score_kind=scores.score_kind,
        n_members=nm,
        n_nonmembers=nn,
    )


# ---------------------------------------------------------------------------
# LiRA


@dataclass
class LiraFit:
    mu_in: np.ndarray
    sigma_in: np.ndarray
    mu_out: np.ndarray
    sigma_out: np.ndarray


def _mean_std(v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 2:
        raise InsufficientDataError("LiRA needs at least 2 scores per side")
    return v.mean(axis=-1), np.maximum(v.std(axis=-1, ddof=1), SIGMA_FLOOR)


def lira_fit(in_scores, out_scores) -> LiraFit:
    """Gaussian fits (unbiased stdev, floored at 1e-8); accepts 1-D lists or per-target rows."""
    mi, si = _mean_std(in_scores)
    mo, so = _mean_std(out_scores)
    return LiraFit(mi, si, mo, so)


def _gauss_logpdf(x, mu, sigma):
    return -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi)


def lira_score(target_score, fit: LiraFit):
    return _gauss_logpdf(target_score, fit.mu_in, fit.sigma_in) - _gauss_logpdf(target_score, fit.mu_out, fit.sigma_out)


def balanced_assignment(n_targets, n_models, rng):
    """Boolean (models x targets) bitmap; every target is IN for exactly half of the models."""
    if n_models < 2 or n_models % 2:
        raise ValueError("shadow model count must be even")
    bits = np.zeros((n_models, n_targets), dtype=bool)
    for t in range(n_targets):
        bits[rng.permutation(n_models)[: n_models // 2], t] = True
    return bits


# ---------------------------------------------------------------------------
# protocols


def model_scores(model, x, y, kind="logit-scaled", obfuscate_rng=None):
    probs = model.predict_proba(np.asarray(x, dtype=np.float64))
    if obfuscate_rng is not None:
        probs = obfuscate_output(probs, obfuscate_rng)
    return score_outputs(probs, y, kind)


def run_standard_mi(model, members, nonmembers, score_kind="logit-scaled", fpr_levels=(0.001,), obfuscate_rng=None):
    """Query the model on the targets themselves and sweep a global threshold."""
    sm = model_scores(model, *members, kind=score_kind, obfuscate_rng=obfuscate_rng)
    sn = model_scores(model, *nonmembers, kind=score_kind, obfuscate_rng=obfuscate_rng)
    return roc_and_tpr(MiScoreSet(sm, sn, "standard", score_kind), fpr_levels)


def stealthy_scores(model, x, y, spec: EncodingSpec, num_classes, score_kind="logit-scaled", obfuscate_rng=None):
    xs, ys, _ = encode_batch(x, y, spec, num_classes)
    return model_scores(model, xs, ys, kind=score_kind, obfuscate_rng=obfuscate_rng)


def run_stealthy_mi(
    model,
    members,
    nonmembers,
    spec: EncodingSpec,
    num_classes,
    score_kind="logit-scaled",
    fpr_levels=(0.001,),
    perturb=None,
    rng=None,
    obfuscate_rng=None,
):
    """Query the model on each target's encoding sample.

    ``perturb`` (a magnitude) applies the countermeasure to every target
    before encoding.
    """
    mx, my = members
    nx, ny = nonmembers
    if perturb is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        mx = perturb_features(mx, perturb, rng)
        nx = perturb_features(nx, perturb, rng)
    sm = stealthy_scores(model, mx, my, spec, num_classes, score_kind, obfuscate_rng)
    sn = stealthy_scores(model, nx, ny, spec, num_classes, score_kind, obfuscate_rng)
    return roc_and_tpr(MiScoreSet(sm, sn, "stealthy", score_kind), fpr_levels)


def run_mi_game(sample_dataset, trainer, adversary, trials, rng):
    """Monte-Carlo estimate of the membership game's success rate.

    ``sample_dataset(rng, n=None) -> (x, y)`` draws a training set (or ``n``
    fresh points) from the data distribution.  ``trainer(x, y, rng) -> model``;
    ``adversary(model, z, rng, b=...) -> bit`` with 0 meaning "member" (``b``
    is passed only so a cheating oracle can be built for sanity checks).
    The model is trained on the sampled set in both branches, so ``z`` is a
    training member exactly when ``b == 0``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    wins = 0
    for _ in range(trials):
        x, y = sample_dataset(rng)
        b = int(rng.integers(2))
        if b == 0:
            i = int(rng.integers(len(x)))
            z = (x[i], y[i])
        else:
            zx, zy = sample_dataset(rng, n=1)
            z = (zx[0], zy[0])
        model = trainer(x, y, rng)
        guess = adversary(model, z, rng, b=b)
        wins += int(guess == b)
    return wins / trials


@dataclass
class ShadowEnsemble:
    membership: np.ndarray  # (models, targets) bool
    scores: np.ndarray  # (models, targets) logit-scaled scores on each target

    def in_scores(self, t):
        return self.scores[self.membership[:, t], t]

    def out_scores(self, t):
        return self.scores[~self.membership[:, t], t]


def shadow_lira(targets_x, targets_y, target_scores, train_fn, n_models, rng, score_kind="logit-scaled",
                background=None):
    """LiRA over ``n_models`` shadows trained on balanced halves of the targets.

    ``train_fn(x, y, seed) -> model`` trains one shadow model.  ``background``
    is an optional ``(x, y)`` pool of non-target samples; each shadow also gets
    a random half of it, so shadow training sets can match the target model's
    size.  Returns ``(lira_scores, ShadowEnsemble, LiraFit)``.
    """
    if n_models < 4 or n_models % 2:
        raise ValueError("shadow_lira needs an even number (>= 4) of shadow models")
    targets_x = np.asarray(targets_x, dtype=np.float64)
    targets_y = np.asarray(targets_y, dtype=np.int64)
    bits = balanced_assignment(len(targets_x), n_models, rng)
    if background is not None:
        bx = np.asarray(background[0], dtype=np.float64)
        by = np.asarray(background[1], dtype=np.int64)
    scores = np.empty(bits.shape)
    for k in range(n_models):
        seed = int(rng.integers(2**31))
        x, y = targets_x[bits[k]], targets_y[bits[k]]
        if background is not None and len(bx):
            pick = rng.permutation(len(bx))[: len(bx) // 2]
            x, y = np.vstack([x, bx[pick]]), np.concatenate([y, by[pick]])
        m = train_fn(x, y, seed)
        scores[k] = model_scores(m, targets_x, targets_y, kind=score_kind)
    ens = ShadowEnsemble(bits, scores)
    half = n_models // 2
    ins = np.stack([ens.in_scores(t) for t in range(len(targets_x))])
    outs = np.stack([ens.out_scores(t) for t in range(len(targets_x))])
    assert ins.shape[1] == half and outs.shape[1] == half
    fit = lira_fit(ins, outs)
    return lira_score(np.asarray(target_scores, dtype=np.float64), fit), ens, fit
