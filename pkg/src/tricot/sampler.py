"""Hard-pair selection and synthetic negative mixing for contrastive steps.

Pools are built per anchor from stage-projected label keys: positives share
the anchor's full key set at the current curriculum stage, negatives differ.
The K lowest-similarity positives and N highest-similarity negatives form
the hard pools (ties break by ascending batch index), one hard positive is
drawn uniformly, a capped negative subset is drawn without replacement, and
synthetic negatives are Beta-weighted convex mixes of distinct pool members.

Everything after the similarity matrix is a pure function of (keys, sims,
caps, rng state): the same seeded generator reproduces the same PairSet
bit for bit.  Anchors are processed in ascending index order, consuming the
generator in a documented order (positive, negative subset, then per-synth
partners and lambda).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SamplerError(ValueError):
    pass


def cosine_similarity_matrix(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities of (B, d) feature rows; unit diagonal."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise SamplerError(f"features must be (B, d), got {f.shape}")
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise SamplerError("zero-norm feature row")
    z = f / norms
    sim = z @ z.T
    np.fill_diagonal(sim, 1.0)
    return sim


def candidate_pools(stage_keys: list) -> tuple:
    """Partition other indices into positives/negatives per anchor.

    stage_keys[i] is the frame's projected key frozenset; empty sets mark
    frames that cannot anchor (they still appear in other frames' pools).
    Returns (h_pos, h_neg, active) with index arrays per anchor; inactive
    anchors get empty pools.
    """
    b = len(stage_keys)
    h_pos, h_neg = [], []
    active = np.array([len(k) > 0 for k in stage_keys], dtype=bool)
    for i in range(b):
        if not active[i]:
            h_pos.append(np.empty(0, dtype=np.int64))
            h_neg.append(np.empty(0, dtype=np.int64))
            continue
        same = np.array([j != i and stage_keys[j] == stage_keys[i] for j in range(b)])
        h_pos.append(np.nonzero(same)[0].astype(np.int64))
        diff = np.array([j != i and stage_keys[j] != stage_keys[i] for j in range(b)])
        h_neg.append(np.nonzero(diff)[0].astype(np.int64))
    return h_pos, h_neg, active


def hard_pools(sim: np.ndarray, h_pos: list, h_neg: list, k: int, n: int) -> tuple:
    """BottomK positives and TopN negatives by similarity, ties by index."""
    if k < 1 or n < 1:
        raise SamplerError(f"pool caps must be >= 1, got K={k} N={n}")
    t_pos, t_neg = [], []
    for i in range(len(h_pos)):
        pos = h_pos[i]
        order = np.lexsort((pos, sim[i, pos]))          # similarity asc, index asc
        t_pos.append(pos[order[:k]])
        neg = h_neg[i]
        order = np.lexsort((neg, -sim[i, neg]))         # similarity desc, index asc
        t_neg.append(neg[order[:n]])
    return t_pos, t_neg


@dataclass
class SynthResult:
    vectors: np.ndarray    # (S, d) mixed negatives
    lambdas: np.ndarray    # (S,) Beta draws, recorded for audit
    partners: np.ndarray   # (S, 2) row indices into the input pool
    skipped: bool          # True when the pool had < 2 members


def synthesize_negatives(neg_vectors: np.ndarray, s: int, alpha: float,
                         rng: np.random.Generator) -> SynthResult:
    """Mix s synthetic negatives as lam*v1 + (1-lam)*v2, partners distinct.

    Computed as v2 + lam*(v1 - v2): algebraically the same convex
    combination, and exact when the two vectors coincide.
    """
    if s < 0:
        raise SamplerError(f"synthetic count must be >= 0, got {s}")
    if alpha <= 0.0:
        raise SamplerError(f"Beta concentration must be > 0, got {alpha}")
    pool = np.asarray(neg_vectors, dtype=np.float64)
    if pool.ndim != 2:
        raise SamplerError(f"negative pool must be (n, d), got {pool.shape}")
    d = pool.shape[1]
    if s == 0 or pool.shape[0] < 2:
        return SynthResult(np.empty((0, d)), np.empty(0), np.empty((0, 2), dtype=np.int64),
                           skipped=pool.shape[0] < 2 and s > 0)
    vectors = np.empty((s, d))
    lambdas = np.empty(s)
    partners = np.empty((s, 2), dtype=np.int64)
    for j in range(s):
        pick = rng.choice(pool.shape[0], size=2, replace=False)
        lam = rng.beta(alpha, alpha)
        v1, v2 = pool[pick[0]], pool[pick[1]]
        vectors[j] = v2 + lam * (v1 - v2)
        lambdas[j] = lam
        partners[j] = pick
    return SynthResult(vectors, lambdas, partners, skipped=False)


@dataclass
class PairSet:
    """Sampled hard pairs for one batch; indices are batch positions."""

    batch_size: int
    anchors: np.ndarray            # active anchor indices, ascending
    positives: np.ndarray          # sampled hard positive per active anchor
    negatives: list                # per active anchor, R_neg index array
    synth_partners: list           # per active anchor, (S_i, 2) into the batch
    synth_lambdas: list            # per active anchor, (S_i,)
    synth_vectors: list            # per active anchor, (S_i, d)
    inactive: np.ndarray           # anchors without labels or without positives
    no_synth: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def build_pair_set(embeddings: np.ndarray, stage_keys: list, k: int, n: int, m: int,
                   s: int, alpha: float, rng: np.random.Generator,
                   sim: np.ndarray | None = None) -> PairSet:
    """Full sampling pass: pools, hard pools, draws, synthetic negatives.

    ``embeddings`` are the vectors the mixes are built from (the projected,
    normalized contrastive embeddings); ``sim`` defaults to their cosine
    matrix but the caller may pass similarities from a different space.
    """
    if m < 1:
        raise SamplerError(f"negative cap M must be >= 1, got {m}")
    emb = np.asarray(embeddings, dtype=np.float64)
    b = emb.shape[0]
    if len(stage_keys) != b:
        raise SamplerError(f"{len(stage_keys)} keys for batch of {b}")
    if sim is None:
        sim = cosine_similarity_matrix(emb)
    h_pos, h_neg, active = candidate_pools(stage_keys)
    t_pos, t_neg = hard_pools(sim, h_pos, h_neg, k, n)

    anchors, positives, negatives = [], [], []
    synth_partners, synth_lambdas, synth_vectors = [], [], []
    inactive, no_synth = [], []
    for i in range(b):
        if not active[i] or len(t_pos[i]) == 0:
            inactive.append(i)
            continue
        anchors.append(i)
        positives.append(t_pos[i][rng.integers(len(t_pos[i]))])
        pool = t_neg[i]
        take = min(m, len(pool))
        r_neg = rng.choice(pool, size=take, replace=False) if take else pool[:0]
        negatives.append(np.asarray(r_neg, dtype=np.int64))
        res = synthesize_negatives(emb[r_neg], s, alpha, rng)
        if res.skipped:
            no_synth.append(i)
        synth_partners.append(r_neg[res.partners] if res.partners.size
                              else res.partners)
        synth_lambdas.append(res.lambdas)
        synth_vectors.append(res.vectors)

    return PairSet(b, np.asarray(anchors, dtype=np.int64),
                   np.asarray(positives, dtype=np.int64), negatives,
                   synth_partners, synth_lambdas, synth_vectors,
                   np.asarray(inactive, dtype=np.int64),
                   np.asarray(no_synth, dtype=np.int64))
