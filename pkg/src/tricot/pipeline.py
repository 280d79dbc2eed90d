"""Training stages wired together: pretrain, distill, temporal head, eval.

Every stage is a pure function of (dataset, config, seed).  Randomness comes
from named streams derived as SeedSequence([seed, stream-id]), so adding a
stage never shifts another stage's draws and identical (config, seed) runs
produce byte-identical parameters, checkpoints, and reports.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import RunConfig
from .datagen import EpisodeDataset
from .encoder import FrameEncoder
from .losses import (LossError, bce_multilabel, mixup_batch, soft_distill_loss,
                     supcon_mix_batch_loss, supcon_stage_loss)
from .metrics import EvalReport, evaluate
from .mrtt import MrttConfig, TemporalHead
from .optim import AdamW, cosine_lr
from .sampler import build_pair_set
from .schema import stage_keys_batch


class PipelineError(RuntimeError):
    pass


_STREAMS = {"encoder-init": 0, "pretrain": 1, "teacher-init": 2, "teacher": 3,
            "student": 4, "temporal-init": 5, "temporal": 6}


def _rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[stream]]))


def _params_blob(params: dict) -> bytes:
    return b"".join(name.encode() + params[name].tobytes() for name in sorted(params))


def stack_split(ds: EpisodeDataset, split: str):
    """All frames of a split as (X, Y) float64 matrices."""
    idx = ds.indices(split)
    if not idx:
        raise PipelineError(f"dataset has no {split!r} episodes")
    x = np.concatenate([ds.observations[e] for e in idx], axis=0)
    y = np.concatenate([ds.labels[e] for e in idx], axis=0).astype(np.float64)
    return x, y


def _batches(count: int, size: int, rng: np.random.Generator):
    order = rng.permutation(count)
    for at in range(0, count, size):
        chunk = order[at:at + size]
        if chunk.size >= 2:
            yield chunk


# -- stage one: curriculum contrastive pretraining ------------------------------

def run_pretrain(ds: EpisodeDataset, cfg: RunConfig, seed: int):
    """Contrastive pretraining over the curriculum; returns (encoder, log)."""
    enc = FrameEncoder(ds.config.obs_dim, cfg.encoder.hidden, cfg.encoder.feat_dim,
                       cfg.encoder.proj_dim, ds.num_classes, _rng(seed, "encoder-init"))
    if not cfg.toggles.supcon:
        return enc, {"marker": "no-pretrain", "stages": []}

    if cfg.toggles.curriculum:
        stages = [(st, cfg.epochs_per_stage) for st in cfg.curriculum]
    else:
        stages = [("IVT", cfg.epochs_per_stage * len(cfg.curriculum))]

    rng = _rng(seed, "pretrain")
    x, y = stack_split(ds, "train")
    bs = cfg.optim.batch_size
    steps_per_epoch = max(1, x.shape[0] // bs)
    total_steps = steps_per_epoch * sum(ep for _, ep in stages)
    opt = AdamW(enc.params, lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
    s_eff = cfg.sampler.s if cfg.toggles.feature_mixup else 0

    log = {"marker": "pretrained", "stages": []}
    step = 0
    for stage, epochs in stages:
        stage_losses = []
        for _ in range(epochs):
            empty = 0
            n_batches = 0
            for chunk in _batches(x.shape[0], bs, rng):
                n_batches += 1
                keys = stage_keys_batch(y[chunk], ds.vocab, stage)
                tape = Tape()
                handles = {}
                f = enc.encode(x[chunk], tape, handles)
                z = enc.project_normalize(f, tape, handles)
                pairs = build_pair_set(z.data, keys, cfg.sampler.k, cfg.sampler.n,
                                       cfg.sampler.m, s_eff, cfg.sampler.alpha, rng)
                try:
                    if s_eff > 0:
                        loss = supcon_mix_batch_loss(z, pairs, cfg.loss.tau)
                        if cfg.loss.contrastive_combine == "sum":
                            loss = ad.add(loss, supcon_stage_loss(z, keys, cfg.loss.tau))
                    else:
                        loss = supcon_stage_loss(z, keys, cfg.loss.tau)
                except LossError:
                    empty += 1
                    continue
                grads = ad.backpropagate(tape, loss)
                opt.lr = cosine_lr(step, total_steps, cfg.optim.lr, cfg.optim.lr_end)
                opt.step({name: grads[t.node].data for name, t in handles.items()
                          if t.node in grads})
                step += 1
                stage_losses.append(float(loss.data))
            if n_batches > 0 and empty == n_batches:
                raise PipelineError(
                    f"stage {stage}: every batch of an epoch was an empty "
                    "contrastive batch (no anchor found a positive); the "
                    "batch size is too small for the label diversity at "
                    "this stage")
        log["stages"].append({"stage": stage, "epochs": epochs,
                              "losses": stage_losses})
    return enc, log


# -- stage two: teacher/student distillation ------------------------------------

def _classify_probs(model: FrameEncoder, x, tape=None, handles=None) -> Tensor:
    return ad.sigmoid(model.classify(model.encode(x, tape, handles), tape, handles))


def _train_bce(model: FrameEncoder, x, y, cfg: RunConfig, epochs: int,
               rng: np.random.Generator, teacher: FrameEncoder | None):
    """BCE loop; with a teacher the targets are its detached soft outputs."""
    opt = AdamW(model.params, lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
    bs = cfg.optim.batch_size
    total_steps = max(1, x.shape[0] // bs) * epochs
    losses, step = [], 0
    for _ in range(epochs):
        for chunk in _batches(x.shape[0], bs, rng):
            xb, yb = x[chunk], y[chunk]
            if cfg.toggles.input_mixup:
                xb, yb, _, _ = mixup_batch(xb, yb, cfg.loss.input_alpha, rng)
            tape = Tape()
            handles = {}
            probs = _classify_probs(model, xb, tape, handles)
            if teacher is None:
                loss = bce_multilabel(probs, yb)
            else:
                soft = _classify_probs(teacher, xb)  # untracked: teacher frozen
                loss = soft_distill_loss(probs, soft.data)
                if cfg.loss.hard_label_weight > 0.0:
                    loss = ad.add(loss, ad.scale(bce_multilabel(probs, yb),
                                                 cfg.loss.hard_label_weight))
            grads = ad.backpropagate(tape, loss)
            opt.lr = cosine_lr(step, total_steps, cfg.optim.lr, cfg.optim.lr_end)
            opt.step({name: grads[t.node].data for name, t in handles.items()
                      if t.node in grads})
            step += 1
            losses.append(float(loss.data))
    return losses


def run_distill(ds: EpisodeDataset, cfg: RunConfig, seed: int, pretrained: FrameEncoder):
    """Teacher on hard labels, then a student on its soft outputs."""
    x, y = stack_split(ds, "train")
    if cfg.teacher_from_scratch:
        teacher = FrameEncoder(ds.config.obs_dim, cfg.encoder.hidden,
                               cfg.encoder.feat_dim, cfg.encoder.proj_dim,
                               ds.num_classes, _rng(seed, "teacher-init"))
    else:
        teacher = pretrained.clone()
    teacher_losses = _train_bce(teacher, x, y, cfg, cfg.teacher_epochs,
                                _rng(seed, "teacher"), teacher=None)

    student = pretrained.clone()
    frozen = _params_blob(teacher.params)
    student_losses = _train_bce(student, x, y, cfg, cfg.student_epochs,
                                _rng(seed, "student"), teacher=teacher)
    if _params_blob(teacher.params) != frozen:
        raise PipelineError("teacher parameters changed during student training")

    log = {"teacher_losses": teacher_losses, "student_losses": student_losses,
           "teacher_from_scratch": cfg.teacher_from_scratch}
    return teacher, student, log


# -- stage three: temporal head over the frozen backbone ------------------------

def episode_features(model: FrameEncoder, ds: EpisodeDataset) -> list:
    return [model.encode(obs).data for obs in ds.observations]


def cut_windows(features: list, labels: list, episode_ids, window: int,
                offset: int = 0):
    """Non-overlapping windows; short tails are zero-padded and masked off."""
    feats, labs, masks = [], [], []
    for e in episode_ids:
        f, l = features[e], labels[e]
        for at in range(offset, f.shape[0], window):
            fw = f[at:at + window]
            lw = l[at:at + window].astype(np.float64)
            valid = fw.shape[0]
            pad = window - valid
            if pad:
                fw = np.concatenate([fw, np.zeros((pad, f.shape[1]))], axis=0)
                lw = np.concatenate([lw, np.zeros((pad, l.shape[1]))], axis=0)
            mask = np.zeros(window, dtype=bool)
            mask[:valid] = True
            feats.append(fw)
            labs.append(lw)
            masks.append(mask)
    return np.stack(feats), np.stack(labs), np.stack(masks)


def run_temporal(ds: EpisodeDataset, cfg: RunConfig, seed: int, student: FrameEncoder):
    """Train the multi-resolution head on frozen student features."""
    head = TemporalHead(
        MrttConfig(feat_dim=cfg.encoder.feat_dim, num_classes=ds.num_classes,
                   strides=cfg.pathway.strides, layers=cfg.pathway.layers,
                   heads=cfg.pathway.heads, ff_dim=cfg.pathway.ff_dim,
                   dropout=cfg.pathway.dropout,
                   gamma_learnable=cfg.toggles.gamma_fusion,
                   beta_learnable=cfg.toggles.beta_fusion),
        _rng(seed, "temporal-init"))

    backbone = _params_blob(student.params)
    features = episode_features(student, ds)
    # training sees several evenly offset cuts so segments land at varied
    # window positions; evaluation stays non-overlapping so every frame is
    # scored exactly once
    window = cfg.pathway.window
    offsets = sorted({i * window // cfg.pathway.train_cuts
                      for i in range(cfg.pathway.train_cuts)})
    cuts = [cut_windows(features, ds.labels, ds.indices("train"), window, off)
            for off in offsets]
    feats, labs, masks = (np.concatenate(parts) for parts in zip(*cuts))
    rng = _rng(seed, "temporal")
    opt = AdamW(head.params, lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
    bs = cfg.pathway.batch_size
    steps_per_epoch = max(1, int(np.ceil(feats.shape[0] / bs)))
    total_steps = steps_per_epoch * cfg.temporal_epochs

    log = {"epochs": []}
    step = 0
    for _ in range(cfg.temporal_epochs):
        order = rng.permutation(feats.shape[0])
        epoch_losses = []
        for at in range(0, order.size, bs):
            chunk = order[at:at + bs]
            tape = Tape()
            handles = {}
            out = head.forward(feats[chunk], masks[chunk], tape=tape,
                               handles=handles, train=True, rng=rng)
            probs = ad.sigmoid(out.z_final)
            weights = masks[chunk][:, :, None].astype(np.float64)
            loss = bce_multilabel(probs, labs[chunk], weights=weights)
            if cfg.pathway.aux_weight > 0.0:
                share = cfg.pathway.aux_weight / len(out.pathway_logits)
                for z_k in out.pathway_logits.values():
                    aux = bce_multilabel(ad.sigmoid(z_k), labs[chunk],
                                         weights=weights)
                    loss = ad.add(loss, ad.scale(aux, share))
            grads = ad.backpropagate(tape, loss)
            opt.lr = cosine_lr(step, total_steps, cfg.optim.lr, cfg.optim.lr_end)
            opt.step({name: grads[t.node].data for name, t in handles.items()
                      if t.node in grads})
            step += 1
            epoch_losses.append(float(loss.data))
        gamma, beta = head.fusion_state()
        log["epochs"].append({"loss": float(np.mean(epoch_losses)),
                              "gamma": gamma.tolist(), "beta": beta})
    if _params_blob(student.params) != backbone:
        raise PipelineError("backbone parameters changed during temporal training")
    return head, log


# -- evaluation ------------------------------------------------------------------

def predict_split(student: FrameEncoder, head: TemporalHead, ds: EpisodeDataset,
                  cfg: RunConfig, split: str, spatial_only: bool = False):
    """(probs, labels) across all frames of a split, in episode order."""
    idx = ds.indices(split)
    if not idx:
        raise PipelineError(f"dataset has no {split!r} episodes")
    features = [student.encode(ds.observations[e]).data for e in idx]
    labels = [ds.labels[e] for e in idx]
    feats, labs, masks = cut_windows(features, labels, range(len(idx)),
                                     cfg.pathway.window)
    out = head.forward(feats, masks, force_beta=1.0 if spatial_only else None)
    probs = 1.0 / (1.0 + np.exp(-out.z_final.data))
    flat_probs = probs[masks]
    flat_labels = labs[masks]
    return flat_probs, flat_labels


def run_evaluate(ds: EpisodeDataset, cfg: RunConfig, student: FrameEncoder,
                 head: TemporalHead, split: str,
                 spatial_only: bool = False) -> EvalReport:
    probs, labels = predict_split(student, head, ds, cfg, split, spatial_only)
    return evaluate(probs, labels, ds.vocab)


# -- whole pipeline ----------------------------------------------------------------

def run_full(ds: EpisodeDataset, cfg: RunConfig, seed: int) -> dict:
    """pretrain -> distill -> temporal -> evaluate; returns artifacts + reports."""
    encoder, pre_log = run_pretrain(ds, cfg, seed)
    teacher, student, di_log = run_distill(ds, cfg, seed, encoder)
    head, tmp_log = run_temporal(ds, cfg, seed, student)
    reports = {}
    for split in ("train", "val"):
        if ds.indices(split):
            reports[split] = run_evaluate(ds, cfg, student, head, split)
            reports[split + "_spatial"] = run_evaluate(ds, cfg, student, head,
                                                       split, spatial_only=True)
    return {"encoder": encoder, "teacher": teacher, "student": student,
            "head": head, "logs": {"pretrain": pre_log, "distill": di_log,
                                   "temporal": tmp_log},
            "reports": reports}
