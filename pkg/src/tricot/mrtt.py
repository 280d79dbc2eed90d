"""Multi-resolution temporal head over frozen per-frame features.

One pathway per stride k: masked mean pooling to ceil(T/k) tokens, additive
sinusoidal position codes, a small pre-norm transformer encoder, endpoint
aligned linear upsampling back to T frames, and a per-pathway affine class
head.  Pathway logits fuse through a learnable softmax gamma; the fused
temporal logits fuse with a frame-local spatial head through a learnable
sigmoid beta:

    z_final = beta * z_spat + (1 - beta) * sum_k gamma_k * z_k

gamma and beta start at their neutral values (uniform, 0.5); switching off
learnable fusion simply freezes them there, leaving the architecture alone.
With zero encoder depth a pathway reduces to pool -> upsample -> head (the
position codes are skipped because nothing consumes them), which keeps
constant inputs exactly constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .encoder import uniform_fan_in_init


class MrttError(ValueError):
    pass


def sinusoidal_pe(length: int, dim: int, base: float = 10000.0) -> np.ndarray:
    """Classic sin/cos position codes: (length, dim), values in [-1, 1]."""
    pe = np.zeros((length, dim))
    pos = np.arange(length, dtype=np.float64)[:, None]
    div = np.power(base, np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div[: pe[:, 1::2].shape[1]])
    return pe


@dataclass
class MrttConfig:
    feat_dim: int
    num_classes: int
    strides: tuple = (4, 5, 6)
    layers: int = 3
    heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.1
    pe_base: float = 10000.0
    gamma_learnable: bool = True
    beta_learnable: bool = True

    def __post_init__(self):
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.strides) == 0 or len(set(self.strides)) != len(self.strides):
            raise MrttError(f"strides must be distinct and non-empty, got {self.strides}")
        if any(s < 1 for s in self.strides):
            raise MrttError(f"strides must be >= 1, got {self.strides}")
        if self.layers < 0:
            raise MrttError("layers must be >= 0")
        if self.layers > 0 and self.feat_dim % self.heads != 0:
            raise MrttError(f"feat_dim {self.feat_dim} not divisible by "
                            f"{self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise MrttError(f"dropout must be in [0,1), got {self.dropout}")


@dataclass
class MrttOutput:
    z_final: Tensor
    z_spat: Tensor
    z_temp: Tensor
    pathway_logits: dict
    gamma: np.ndarray
    beta: float


class TemporalHead:
    """Parameter container + forward for the multi-resolution head."""

    def __init__(self, cfg: MrttConfig, rng: np.random.Generator):
        self.cfg = cfg
        c, ff = cfg.feat_dim, cfg.ff_dim
        p: dict[str, np.ndarray] = {}
        for k in cfg.strides:
            pre = f"path{k}"
            for i in range(cfg.layers):
                lp = f"{pre}.layer{i}"
                p[f"{lp}.ln1.g"] = np.ones(c)
                p[f"{lp}.ln1.b"] = np.zeros(c)
                for nm in ("wq", "wk", "wv", "wo"):
                    p[f"{lp}.attn.{nm}"] = uniform_fan_in_init(rng, c, (c, c))
                for nm in ("bq", "bk", "bv", "bo"):
                    p[f"{lp}.attn.{nm}"] = uniform_fan_in_init(rng, c, (c,))
                p[f"{lp}.ln2.g"] = np.ones(c)
                p[f"{lp}.ln2.b"] = np.zeros(c)
                p[f"{lp}.ff.w1"] = uniform_fan_in_init(rng, c, (c, ff))
                p[f"{lp}.ff.b1"] = uniform_fan_in_init(rng, c, (ff,))
                p[f"{lp}.ff.w2"] = uniform_fan_in_init(rng, ff, (ff, c))
                p[f"{lp}.ff.b2"] = uniform_fan_in_init(rng, ff, (c,))
            if cfg.layers > 0:
                p[f"{pre}.ln.g"] = np.ones(c)
                p[f"{pre}.ln.b"] = np.zeros(c)
            p[f"{pre}.head.w"] = uniform_fan_in_init(rng, c, (c, cfg.num_classes))
            p[f"{pre}.head.b"] = uniform_fan_in_init(rng, c, (cfg.num_classes,))
        p["spat.w"] = uniform_fan_in_init(rng, c, (c, cfg.num_classes))
        p["spat.b"] = uniform_fan_in_init(rng, c, (cfg.num_classes,))
        # neutral fusion start: uniform gamma, beta = 0.5
        p["fuse.w"] = np.zeros(len(cfg.strides))
        p["fuse.beta"] = np.zeros(())
        self.params = p
        self.frozen = set()
        if not cfg.gamma_learnable:
            self.frozen.add("fuse.w")
        if not cfg.beta_learnable:
            self.frozen.add("fuse.beta")

    def _p(self, name, tape, handles):
        if handles is not None and name in handles:
            return handles[name]
        if tape is None or name in self.frozen:
            return Tensor(self.params[name])
        handles[name] = tape.leaf(self.params[name])
        return handles[name]

    def _affine_ln(self, x, pre, tape, handles):
        g = self._p(f"{pre}.g", tape, handles)
        b = self._p(f"{pre}.b", tape, handles)
        return ad.add(ad.multiply(ad.layer_norm_rows(x), g), b)

    def _encoder_stack(self, x, pre, tape, handles, train, rng):
        cfg = self.cfg
        for i in range(cfg.layers):
            lp = f"{pre}.layer{i}"
            a = self._affine_ln(x, f"{lp}.ln1", tape, handles)
            q = ad.add(ad.matmul(a, self._p(f"{lp}.attn.wq", tape, handles)),
                       self._p(f"{lp}.attn.bq", tape, handles))
            k = ad.add(ad.matmul(a, self._p(f"{lp}.attn.wk", tape, handles)),
                       self._p(f"{lp}.attn.bk", tape, handles))
            v = ad.add(ad.matmul(a, self._p(f"{lp}.attn.wv", tape, handles)),
                       self._p(f"{lp}.attn.bv", tape, handles))
            att = ad.attention(q, k, v, cfg.heads)
            att = ad.add(ad.matmul(att, self._p(f"{lp}.attn.wo", tape, handles)),
                         self._p(f"{lp}.attn.bo", tape, handles))
            att = ad.dropout(att, cfg.dropout, rng, train)
            x = ad.add(x, att)
            h = self._affine_ln(x, f"{lp}.ln2", tape, handles)
            h = ad.relu(ad.add(ad.matmul(h, self._p(f"{lp}.ff.w1", tape, handles)),
                               self._p(f"{lp}.ff.b1", tape, handles)))
            h = ad.add(ad.matmul(h, self._p(f"{lp}.ff.w2", tape, handles)),
                       self._p(f"{lp}.ff.b2", tape, handles))
            h = ad.dropout(h, cfg.dropout, rng, train)
            x = ad.add(x, h)
        if cfg.layers > 0:
            x = self._affine_ln(x, f"{pre}.ln", tape, handles)
        return x

    def pathway(self, feats: Tensor, mask: np.ndarray, stride: int,
                tape: Tape | None = None, handles: dict | None = None,
                train: bool = False, rng=None) -> Tensor:
        """One resolution pathway: (B,T,C) features -> (B,T,classes) logits."""
        pre = f"path{stride}"
        t = feats.data.shape[1]
        pooled = ad.masked_mean_pool(feats, mask, stride)
        if self.cfg.layers > 0:
            pe = sinusoidal_pe(pooled.data.shape[1], self.cfg.feat_dim, self.cfg.pe_base)
            x = ad.add(pooled, Tensor(pe))
            x = self._encoder_stack(x, pre, tape, handles, train, rng)
        else:
            x = pooled
        up = ad.upsample_linear(x, t)
        return ad.add(ad.matmul(up, self._p(f"{pre}.head.w", tape, handles)),
                      self._p(f"{pre}.head.b", tape, handles))

    def forward(self, feats, mask: np.ndarray, tape: Tape | None = None,
                handles: dict | None = None, train: bool = False, rng=None,
                force_beta: float | None = None) -> MrttOutput:
        """Full head: pathways, gamma fusion, spatial head, beta fusion."""
        feats = ad.as_tensor(feats)
        if feats.data.ndim != 3 or feats.data.shape[2] != self.cfg.feat_dim:
            raise MrttError(f"expected (B,T,{self.cfg.feat_dim}) features, "
                            f"got {feats.data.shape}")
        if feats.data.shape[1] < max(self.cfg.strides):
            raise MrttError(f"window length {feats.data.shape[1]} shorter than "
                            f"largest stride {max(self.cfg.strides)}")
        if train and self.cfg.dropout > 0.0 and rng is None:
            raise MrttError("training forward needs an rng for dropout")

        path_logits = {}
        for k in self.cfg.strides:
            path_logits[k] = self.pathway(feats, mask, k, tape, handles, train, rng)

        gamma_t = ad.softmax_rows(self._p("fuse.w", tape, handles))
        z_temp = None
        for idx, k in enumerate(self.cfg.strides):
            g_k = ad.slice_(gamma_t, [idx], [idx + 1])
            term = ad.multiply(path_logits[k], g_k)
            z_temp = term if z_temp is None else ad.add(z_temp, term)

        z_spat = ad.add(ad.matmul(feats, self._p("spat.w", tape, handles)),
                        self._p("spat.b", tape, handles))

        if force_beta is None:
            beta_t = ad.sigmoid(self._p("fuse.beta", tape, handles))
        else:
            beta_t = Tensor(float(force_beta))
        one_minus = ad.subtract(Tensor(1.0), beta_t)
        z_final = ad.add(ad.multiply(z_spat, beta_t), ad.multiply(z_temp, one_minus))
        return MrttOutput(z_final, z_spat, z_temp, path_logits,
                          gamma=np.asarray(gamma_t.data, dtype=np.float64).copy(),
                          beta=float(beta_t.data))

    def fusion_state(self) -> tuple:
        """Current (gamma, beta) as plain numbers, for per-epoch logs."""
        w = self.params["fuse.w"]
        e = np.exp(w - w.max())
        return e / e.sum(), float(1.0 / (1.0 + np.exp(-self.params["fuse.beta"])))

    def clone(self) -> "TemporalHead":
        twin = TemporalHead.__new__(TemporalHead)
        twin.cfg = self.cfg
        twin.params = {k: v.copy() for k, v in self.params.items()}
        twin.frozen = set(self.frozen)
        return twin

    def load_params(self, params: dict) -> None:
        for name, value in self.params.items():
            if name not in params:
                raise MrttError(f"missing parameter {name!r}")
            if np.asarray(params[name]).shape != value.shape:
                raise MrttError(f"shape mismatch for {name!r}")
        self.params = {k: np.array(params[k], dtype=np.float64) for k in self.params}
