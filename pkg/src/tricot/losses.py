"""Training losses, composed from tape primitives so gradients come free.

Four families: stage-projected supervised contrastive, the hard-pair mix
variant with synthetic negatives, multi-label BCE, and the soft
distillation BCE (teacher targets detached).  Input mixup lives here too
since the distillation stage owns it.

Conventions shared by the contrastive losses: embeddings are unit rows
(checked to 1e-9), temperature is strictly positive, anchors without a
positive drop out of the mean, and a batch with no valid anchor is an
error rather than a silent zero.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sampler import PairSet


class LossError(ValueError):
    pass


def _check_unit_rows(z: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(z, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise LossError(f"{what} must be unit-norm rows (max deviation "
                        f"{np.abs(norms - 1.0).max():.2e})")


def _check_tau(tau: float) -> None:
    if not tau > 0.0:
        raise LossError(f"temperature must be > 0, got {tau}")


def supcon_stage_loss(z: Tensor, stage_keys: list, tau: float) -> Tensor:
    """Supervised contrastive loss at one curriculum stage.

    z is (B, d) with unit rows; stage_keys[i] is frame i's projected key set
    (see schema.stage_keys_batch).  Positives share the anchor's key set,
    the denominator runs over all other samples, and the batch value is the
    mean over anchors that have at least one positive.
    """
    _check_tau(tau)
    zd = z.data
    if zd.ndim != 2:
        raise LossError(f"z must be (B, d), got {zd.shape}")
    b = zd.shape[0]
    if len(stage_keys) != b:
        raise LossError(f"{len(stage_keys)} keys for batch of {b}")
    _check_unit_rows(zd, "contrastive embeddings")

    weights = np.zeros((b, b))
    n_valid = 0
    for i in range(b):
        if len(stage_keys[i]) == 0:
            continue
        pos = [j for j in range(b) if j != i and stage_keys[j] == stage_keys[i]]
        if not pos:
            continue
        weights[i, pos] = 1.0 / len(pos)
        n_valid += 1
    if n_valid == 0:
        raise LossError("empty contrastive batch: no anchor has a positive")

    offdiag = 1.0 - np.eye(b)
    logits = ad.scale(ad.matmul(z, ad.transpose(z)), 1.0 / tau)
    denom = ad.sum_reduce(ad.multiply(ad.exp(logits), Tensor(offdiag)),
                          axis=1, keepdims=True)
    log_prob = ad.subtract(logits, ad.log(denom))
    total = ad.sum_reduce(ad.multiply(log_prob, Tensor(weights)))
    return ad.scale(total, -1.0 / n_valid)


def supcon_mix_loss(z_anchor: Tensor, z_pos: Tensor, synth_negs, tau: float) -> Tensor:
    """Single-anchor mix loss against synthetic negatives.

    The positive pair sits in both numerator and denominator; each synthetic
    negative is renormalized to unit length before its dot product.  With no
    synthetic negatives the loss is exactly zero (on tape, so gradients stay
    defined).
    """
    _check_tau(tau)
    za, zp = ad.as_tensor(z_anchor), ad.as_tensor(z_pos)
    if za.data.ndim != 1 or zp.data.ndim != 1:
        raise LossError("anchor/positive must be 1-D embeddings")
    _check_unit_rows(za.data[None, :], "anchor")
    _check_unit_rows(zp.data[None, :], "positive")

    pos_sim = ad.sum_reduce(ad.multiply(za, zp))
    synths = ad.as_tensor(synth_negs if not isinstance(synth_negs, (list, tuple))
                          else np.stack(synth_negs) if len(synth_negs)
                          else np.empty((0, za.data.shape[0])))
    if synths.data.ndim != 2:
        raise LossError(f"synthetic negatives must be (S, d), got {synths.shape}")
    if synths.data.shape[0] == 0:
        return ad.scale(pos_sim, 0.0)
    sn = ad.normalize_rows(synths)
    neg_sims = ad.sum_reduce(ad.multiply(sn, za), axis=1)
    shifted = ad.exp(ad.scale(ad.subtract(neg_sims, pos_sim), 1.0 / tau))
    return ad.log(ad.add(Tensor(1.0), ad.sum_reduce(shifted)))


def supcon_mix_batch_loss(z: Tensor, pairs: PairSet, tau: float) -> Tensor:
    """Batch mix loss: mean of per-anchor terms over active anchors.

    Anchor, positive, and mixing-partner selection are constant one-hot
    matrices, so gradients flow through every embedding involved, synthetic
    mixes included.  Anchors whose negative pool was too small contribute a
    zero term, matching the per-anchor definition.
    """
    _check_tau(tau)
    zd = z.data
    _check_unit_rows(zd, "contrastive embeddings")
    n_act = len(pairs.anchors)
    if n_act == 0:
        raise LossError("empty contrastive batch: no active anchors")
    b = zd.shape[0]
    if pairs.batch_size != b:
        raise LossError(f"pair set built for batch {pairs.batch_size}, z has {b}")

    a_sel = np.zeros((n_act, b))
    p_sel = np.zeros((n_act, b))
    a_sel[np.arange(n_act), pairs.anchors] = 1.0
    p_sel[np.arange(n_act), pairs.positives] = 1.0

    mix_rows, group_rows = [], []
    for a in range(n_act):
        lams = pairs.synth_lambdas[a]
        parts = pairs.synth_partners[a]
        for j in range(len(lams)):
            row = np.zeros(b)
            n1, n2 = parts[j]
            row[n1] += lams[j]
            row[n2] += 1.0 - lams[j]
            mix_rows.append(row)
            group_rows.append(a)
    n_tot = len(mix_rows)

    az = ad.matmul(Tensor(a_sel), z)
    pz = ad.matmul(Tensor(p_sel), z)
    pos_sim = ad.sum_reduce(ad.multiply(az, pz), axis=1, keepdims=True)

    if n_tot == 0:
        return ad.scale(ad.sum_reduce(pos_sim), 0.0)

    mix = np.stack(mix_rows)
    group = np.zeros((n_act, n_tot))
    group[group_rows, np.arange(n_tot)] = 1.0
    rep = group.T  # (n_tot, n_act): repeat per-anchor rows per synth

    synths = ad.normalize_rows(ad.matmul(Tensor(mix), z))
    arep = ad.matmul(Tensor(rep), az)
    neg_sims = ad.sum_reduce(ad.multiply(arep, synths), axis=1, keepdims=True)
    pos_rep = ad.matmul(Tensor(rep), pos_sim)
    e = ad.exp(ad.scale(ad.subtract(neg_sims, pos_rep), 1.0 / tau))
    per_anchor = ad.matmul(Tensor(group), e)
    inner = ad.log(ad.add(Tensor(1.0), per_anchor))
    return ad.scale(ad.sum_reduce(inner), 1.0 / n_act)


BCE_EPS = 1e-7


def _clamped(pred: Tensor, eps: float) -> Tensor:
    # exact clamp to [eps, 1-eps] from relu: max then min
    lo = ad.add(ad.relu(ad.subtract(pred, Tensor(eps))), Tensor(eps))
    hi = Tensor(1.0 - eps)
    return ad.subtract(hi, ad.relu(ad.subtract(hi, lo)))


def bce_multilabel(pred: Tensor, target, weights=None, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy over all prediction entries.

    pred holds post-sigmoid probabilities (clamped to [eps, 1-eps] before the
    logs); target entries live in [0, 1] so mixed and soft labels are legal.
    Optional weights (broadcastable to pred) turn the mean into a weighted
    mean, which is how padded window frames are masked out.
    """
    pred = ad.as_tensor(pred)
    y = np.asarray(target, dtype=np.float64)
    if y.shape != pred.data.shape:
        raise LossError(f"target shape {y.shape} != pred shape {pred.data.shape}")
    if np.any((y < 0.0) | (y > 1.0)):
        raise LossError("targets must lie in [0, 1]")
    if np.any((pred.data < 0.0) | (pred.data > 1.0)):
        raise LossError("predictions must be probabilities in [0, 1]")

    p = _clamped(pred, eps)
    terms = ad.add(ad.multiply(Tensor(y), ad.log(p)),
                   ad.multiply(Tensor(1.0 - y), ad.log(ad.subtract(Tensor(1.0), p))))
    if weights is None:
        return ad.scale(ad.mean_reduce(terms), -1.0)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), pred.data.shape)
    total = float(w.sum())
    if total <= 0.0:
        raise LossError("weights sum to zero")
    return ad.scale(ad.sum_reduce(ad.multiply(terms, Tensor(w.copy()))), -1.0 / total)


def soft_distill_loss(student_pred: Tensor, teacher_pred, weights=None) -> Tensor:
    """BCE of student probabilities against detached teacher probabilities."""
    t = teacher_pred.data if isinstance(teacher_pred, Tensor) else teacher_pred
    return bce_multilabel(student_pred, np.asarray(t, dtype=np.float64), weights)


def input_mixup(x_i: np.ndarray, y_i: np.ndarray, x_j: np.ndarray, y_j: np.ndarray,
                alpha: float, rng: np.random.Generator):
    """Mix two samples (or batches) with one Beta(alpha, alpha) draw.

    Returns (x_mix, y_mix, lam).  lam == 1 or 0 short-circuits to bit-exact
    copies of the corresponding sample.
    """
    if alpha <= 0.0:
        raise LossError(f"mixup alpha must be > 0, got {alpha}")
    lam = float(rng.beta(alpha, alpha))
    if lam == 1.0:
        return np.array(x_i, dtype=np.float64), np.array(y_i, dtype=np.float64), lam
    if lam == 0.0:
        return np.array(x_j, dtype=np.float64), np.array(y_j, dtype=np.float64), lam
    x = lam * np.asarray(x_i, dtype=np.float64) + (1.0 - lam) * np.asarray(x_j, dtype=np.float64)
    y = lam * np.asarray(y_i, dtype=np.float64) + (1.0 - lam) * np.asarray(y_j, dtype=np.float64)
    return x, y, lam


def mixup_batch(x: np.ndarray, y: np.ndarray, alpha: float, rng: np.random.Generator):
    """Batch mixup against a random permutation partner; one lam per batch."""
    perm = rng.permutation(x.shape[0])
    xm, ym, lam = input_mixup(x, y, x[perm], y[perm], alpha, rng)
    return xm, ym, lam, perm
