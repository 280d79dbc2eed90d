"""Frame encoder: a small MLP backbone with projection and classifier heads.

The backbone maps a D-dim observation to a d-dim feature f through ReLU
hidden layers.  The projection head (used only by the contrastive losses)
is a single linear map whose output is L2-normalized; the classifier head
reads f directly.  Parameters live in a flat name->array dict so the
optimizer and the checkpoint format stay trivial.

Teacher/student cloning copies values into fresh storage: the two models
never alias, which is what lets the frozen-teacher contract be checked
bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor


class EncoderError(ValueError):
    pass


def uniform_fan_in_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """U(-1/sqrt(fan_in), +1/sqrt(fan_in)), the run-seeded default init."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class FrameEncoder:
    """MLP backbone + projection head + classification head."""

    def __init__(self, obs_dim: int, hidden: tuple, feat_dim: int, proj_dim: int,
                 num_classes: int, rng: np.random.Generator):
        if obs_dim < 1 or feat_dim < 1 or proj_dim < 1 or num_classes < 1:
            raise EncoderError("all encoder dimensions must be >= 1")
        self.obs_dim = int(obs_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.feat_dim = int(feat_dim)
        self.proj_dim = int(proj_dim)
        self.num_classes = int(num_classes)

        self.params: dict[str, np.ndarray] = {}
        widths = [self.obs_dim, *self.hidden, self.feat_dim]
        for i, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
            self.params[f"mlp.{i}.w"] = uniform_fan_in_init(rng, n_in, (n_in, n_out))
            self.params[f"mlp.{i}.b"] = uniform_fan_in_init(rng, n_in, (n_out,))
        self.params["proj.w"] = uniform_fan_in_init(rng, self.feat_dim,
                                                    (self.feat_dim, self.proj_dim))
        self.params["proj.b"] = uniform_fan_in_init(rng, self.feat_dim, (self.proj_dim,))
        self.params["cls.w"] = uniform_fan_in_init(rng, self.feat_dim,
                                                   (self.feat_dim, self.num_classes))
        self.params["cls.b"] = uniform_fan_in_init(rng, self.feat_dim, (self.num_classes,))
        self._n_mlp = len(widths) - 1

    # -- forward passes ------------------------------------------------------

    def _p(self, name: str, tape: Tape | None, handles: dict | None):
        # pre-populated handles override storage (lets callers substitute
        # parameter tensors, tracked or not); with a tape, leaves are created
        # lazily so every touched parameter ends up in the dict
        if handles is not None and name in handles:
            return handles[name]
        if tape is None:
            return Tensor(self.params[name])
        handles[name] = tape.leaf(self.params[name])
        return handles[name]

    def encode(self, obs: np.ndarray, tape: Tape | None = None,
               handles: dict | None = None) -> Tensor:
        """Features f for an (N, D) observation batch.

        Eval mode when tape is None; in train mode pass a tape plus a dict
        that collects parameter leaf handles for the optimizer step.
        """
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim:
            raise EncoderError(f"expected (N, {self.obs_dim}) observations, got {obs.shape}")
        h = Tensor(obs)
        for i in range(self._n_mlp):
            h = ad.add(ad.matmul(h, self._p(f"mlp.{i}.w", tape, handles)),
                       self._p(f"mlp.{i}.b", tape, handles))
            if i < self._n_mlp - 1:
                h = ad.relu(h)
        return h

    def project_normalize(self, f: Tensor, tape: Tape | None = None,
                          handles: dict | None = None) -> Tensor:
        """Contrastive embedding z: L2-normalized projection of f."""
        p = ad.add(ad.matmul(f, self._p("proj.w", tape, handles)),
                   self._p("proj.b", tape, handles))
        return ad.normalize_rows(p)

    def classify(self, f: Tensor, tape: Tape | None = None,
                 handles: dict | None = None) -> Tensor:
        """Per-class logits read directly off the features."""
        return ad.add(ad.matmul(f, self._p("cls.w", tape, handles)),
                      self._p("cls.b", tape, handles))

    # -- cloning ---------------------------------------------------------------

    def clone(self) -> "FrameEncoder":
        """Same architecture and values, disjoint storage."""
        twin = FrameEncoder.__new__(FrameEncoder)
        twin.obs_dim, twin.hidden = self.obs_dim, self.hidden
        twin.feat_dim, twin.proj_dim = self.feat_dim, self.proj_dim
        twin.num_classes, twin._n_mlp = self.num_classes, self._n_mlp
        twin.params = {k: v.copy() for k, v in self.params.items()}
        return twin

    def load_params(self, params: dict) -> None:
        for name, value in self.params.items():
            if name not in params:
                raise EncoderError(f"missing parameter {name!r}")
            if params[name].shape != value.shape:
                raise EncoderError(f"shape mismatch for {name!r}: "
                                   f"{params[name].shape} vs {value.shape}")
        self.params = {k: np.array(params[k], dtype=np.float64) for k in self.params}
