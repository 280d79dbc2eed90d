"""Triplet vocabulary and curriculum-stage label algebra.

A vocabulary is the component name lists plus the table of valid
(instrument, verb, target) combinations; the table index is the class id
used everywhere downstream.  Frame labels are sets of class ids (or (F, C)
binary matrices in batch form).  A curriculum stage is a component subset
such as "T", "IT" or "IVT"; projecting a label to a stage keeps only those
components of each active triplet, and two frames are stage-equal when the
projected key sets match.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

STAGES = ("I", "V", "T", "IV", "IT", "VT", "IVT")
FAMILIES = ("I", "V", "T", "IV", "IT", "IVT")


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    instruments: tuple
    verbs: tuple
    targets: tuple
    triplets: tuple  # ((i, v, t), ...); position = class id

    def __post_init__(self):
        for field_name, names in (("instruments", self.instruments),
                                  ("verbs", self.verbs), ("targets", self.targets)):
            if len(names) == 0:
                raise SchemaError(f"empty {field_name} list")
            if len(set(names)) != len(names):
                raise SchemaError(f"duplicate names in {field_name}")
        if len(self.triplets) == 0:
            raise SchemaError("empty triplet table")
        seen = set()
        for c, (i, v, t) in enumerate(self.triplets):
            if not (0 <= i < len(self.instruments) and 0 <= v < len(self.verbs)
                    and 0 <= t < len(self.targets)):
                raise SchemaError(f"triplet {c} has out-of-range components {(i, v, t)}")
            if (i, v, t) in seen:
                raise SchemaError(f"duplicate triplet {(i, v, t)} at class {c}")
            seen.add((i, v, t))

    @property
    def num_classes(self) -> int:
        return len(self.triplets)

    def triplet_name(self, class_id: int) -> str:
        i, v, t = self.triplets[class_id]
        return f"{self.instruments[i]},{self.verbs[v]},{self.targets[t]}"


def make_vocabulary(instruments, verbs, targets, triplets) -> Vocabulary:
    return Vocabulary(tuple(instruments), tuple(verbs), tuple(targets),
                      tuple(tuple(t) for t in triplets))


def save_vocabulary(vocab: Vocabulary, path) -> None:
    doc = {"instruments": list(vocab.instruments),
           "verbs": list(vocab.verbs),
           "targets": list(vocab.targets),
           "triplets": [list(t) for t in vocab.triplets]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_vocabulary(path) -> Vocabulary:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return make_vocabulary(doc["instruments"], doc["verbs"], doc["targets"],
                               doc["triplets"])
    except KeyError as exc:
        raise SchemaError(f"vocabulary file missing field {exc}") from exc


def _stage_axes(stage: str):
    if stage not in STAGES:
        raise SchemaError(f"unknown stage {stage!r}; expected one of {STAGES}")
    return tuple("IVT".index(ch) for ch in stage)


def project_to_stage(classes: Iterable[int], vocab: Vocabulary, stage: str) -> frozenset:
    """Project active class ids to the stage's component-key set."""
    axes = _stage_axes(stage)
    keys = set()
    for c in classes:
        trip = vocab.triplets[c]
        keys.add(tuple(trip[a] for a in axes))
    return frozenset(keys)


def stage_equal(a: Iterable[int], b: Iterable[int], vocab: Vocabulary, stage: str) -> bool:
    return project_to_stage(a, vocab, stage) == project_to_stage(b, vocab, stage)


def stage_keys_batch(labels: np.ndarray, vocab: Vocabulary, stage: str) -> list:
    """Stage key set per row of an (F, C) binary label matrix."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[1] != vocab.num_classes:
        raise SchemaError(f"label matrix shape {labels.shape} does not match "
                          f"C={vocab.num_classes}")
    axes = _stage_axes(stage)
    trip = np.asarray(vocab.triplets)
    keys_per_class = [tuple(trip[c, a] for a in axes) for c in range(vocab.num_classes)]
    out = []
    for row in labels:
        out.append(frozenset(keys_per_class[c] for c in np.nonzero(row)[0]))
    return out


def component_maps(vocab: Vocabulary) -> dict:
    """Per-family class-to-group maps.

    For each family (I, V, T, IV, IT, IVT) returns (group_of: (C,) int array,
    group_names: list).  Groups index the distinct occurring component keys in
    ascending key order, so maps are deterministic for a given vocabulary.
    """
    maps = {}
    for fam in FAMILIES:
        axes = _stage_axes(fam)
        keys = [tuple(trip[a] for a in axes) for trip in vocab.triplets]
        distinct = sorted(set(keys))
        index = {k: g for g, k in enumerate(distinct)}
        group_of = np.array([index[k] for k in keys], dtype=np.int64)
        name_lists = (vocab.instruments, vocab.verbs, vocab.targets)
        group_names = [",".join(name_lists[a][k[j]] for j, a in enumerate(axes))
                       for k in distinct]
        maps[fam] = (group_of, group_names)
    return maps


def validate_curriculum(order: Sequence[str]) -> None:
    """A curriculum must be a strict chain of component subsets ending at IVT."""
    if len(order) == 0:
        raise SchemaError("empty curriculum order")
    for stage in order:
        _stage_axes(stage)
    for a, b in zip(order, order[1:]):
        if not set(a) < set(b):
            raise SchemaError(f"stage {a!r} is not a strict subset of {b!r}; "
                              "coarse-to-fine ordering is required")
    if order[-1] != "IVT":
        raise SchemaError("curriculum must end at full IVT granularity")
