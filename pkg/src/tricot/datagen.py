"""Seeded synthetic episodes with a long tail and temporal verb structure.

Each instrument, verb and target id owns a random unit direction in R^D.  A
frame observes the sum of its active triplets' directions plus Gaussian
noise.  Class frequencies over segment draws follow Zipf(rho); a triplet
persists for a geometric dwell, and a second concurrent track adds frames
with two labels at the configured rate, so no frame ever carries more than
two triplets.

Verb separability is temporal by construction.  The generator reserves a
configurable number of confusable (instrument, target) pairs, each active
with two different verbs.  Both triplets of a pair share one static verb
direction, so a single frame carries no usable information about the verb.
The verbs differ only through a sawtooth ramp on a shared carrier
direction: the ramp phase advances by 1/period per frame and the period
divides the episode length evenly, so every episode holds whole cycles and
both members of a pair sweep the same uniform span of values.  Ramp
direction (rising or falling) and steepness (cycles per episode) encode the
verb.  Mean pooling a linear ramp returns the ramp at the window midpoint,
so pooled tokens keep the trend unattenuated and the verb appears as the
sign and size of differences between nearby tokens.  Telling verbs apart
therefore requires comparing frames across time, which is exactly the
capability the temporal head is meant to demonstrate.  Single-frame values
move in steps of amplitude/period, well under the noise floor, so a frame
classifier cannot memorize the value grid.

File format: magic, version, sha256 of the payload, then config JSON, seed,
vocabulary JSON and per-episode blocks (split tag, frame count, row-major
little-endian float64 observations, packed label bitmaps).  A JSON manifest
is written alongside.  Same (config, seed) gives byte-identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .schema import Vocabulary, make_vocabulary


class DatagenError(ValueError):
    pass


class DatasetIOError(RuntimeError):
    pass


MAGIC = b"TRDS"
VERSION = 1

# sawtooth schedule: direction alternates with the verb id and the cycle
# count steps up every second verb, so any two verbs differ in trend
# direction or steepness; periods divide the episode length so cycle
# boundaries land on window boundaries and never break a trend mid-window
def verb_period(verb_id: int, episode_len: int) -> float:
    return episode_len / float(1 + verb_id // 2)


def verb_falling(verb_id: int) -> bool:
    return verb_id % 2 == 1


@dataclass(frozen=True)
class SyntheticConfig:
    n_instruments: int = 3
    n_verbs: int = 3
    n_targets: int = 4
    active_triplets: int = 12
    obs_dim: int = 32
    noise_sigma: float = 0.3
    zipf_rho: float = 1.2
    episodes: int = 64
    episode_len: int = 64
    multi_label_rate: float = 0.2
    dwell_mean: float = 8.0
    confusable_pairs: int = 3
    mod_amplitude: float = 2.0
    val_fraction: float = 0.25

    def __post_init__(self):
        full = self.n_instruments * self.n_verbs * self.n_targets
        if min(self.n_instruments, self.n_verbs, self.n_targets) < 1:
            raise DatagenError("component counts must be >= 1")
        if not 1 <= self.active_triplets <= full:
            raise DatagenError(f"active_triplets must be in [1, {full}]")
        if self.obs_dim < 1:
            raise DatagenError("obs_dim must be >= 1")
        if self.noise_sigma < 0.0:
            raise DatagenError("noise_sigma must be >= 0")
        if self.zipf_rho < 0.0:
            raise DatagenError("zipf_rho must be >= 0")
        if self.episodes < 1 or self.episode_len < 1:
            raise DatagenError("episodes and episode_len must be >= 1")
        if not 0.0 <= self.multi_label_rate <= 1.0:
            raise DatagenError("multi_label_rate must be in [0, 1]")
        if self.dwell_mean < 1.0:
            raise DatagenError("dwell_mean must be >= 1")
        if self.confusable_pairs < 0:
            raise DatagenError("confusable_pairs must be >= 0")
        if 2 * self.confusable_pairs > self.active_triplets:
            raise DatagenError("confusable pairs need two triplet slots each")
        if self.confusable_pairs > self.n_instruments * self.n_targets:
            raise DatagenError("more confusable pairs than (instrument, target) pairs")
        if self.confusable_pairs > 0 and self.n_verbs < 2:
            raise DatagenError("confusable pairs need at least two verbs")
        if self.mod_amplitude < 0.0:
            raise DatagenError("mod_amplitude must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise DatagenError("val_fraction must be in [0, 1)")


def desk_config(**overrides) -> SyntheticConfig:
    return dataclasses.replace(SyntheticConfig(), **overrides) if overrides \
        else SyntheticConfig()


@dataclass
class ClassSignals:
    """Noise-free per-class generator internals, for oracle checks."""
    static: np.ndarray       # (C, D) static observation of each class
    amplitude: np.ndarray    # (C,) modulation amplitude, 0 when unmodulated
    period: np.ndarray       # (C,) sawtooth period in frames
    falling: np.ndarray      # (C,) bool, ramp runs high to low
    carrier: np.ndarray      # (C, D) modulation direction, zeros when unused
    groups: list             # [((i, t), (class_a, class_b)), ...]

    def frame(self, class_ids, t: int) -> np.ndarray:
        out = np.zeros(self.static.shape[1])
        for c in class_ids:
            out += self.static[c]
            if self.amplitude[c] > 0.0:
                ph = (t / self.period[c]) % 1.0
                if self.falling[c]:
                    ph = 1.0 - ph
                out += self.amplitude[c] * (ph - 0.5) * self.carrier[c]
        return out


@dataclass
class EpisodeDataset:
    vocab: Vocabulary
    config: SyntheticConfig
    seed: int
    observations: list       # per episode (T, D) float64
    labels: list             # per episode (T, C) uint8
    split: list              # per episode "train" | "val"

    @property
    def num_classes(self) -> int:
        return self.vocab.num_classes

    def indices(self, split: str) -> list:
        return [e for e, tag in enumerate(self.split) if tag == split]


def datasets_equal(a: EpisodeDataset, b: EpisodeDataset) -> bool:
    return (a.vocab == b.vocab and a.config == b.config and a.seed == b.seed
            and a.split == b.split
            and len(a.observations) == len(b.observations)
            and all(np.array_equal(x, y) for x, y in zip(a.observations, b.observations))
            and all(np.array_equal(x, y) for x, y in zip(a.labels, b.labels)))


def _unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _build_vocabulary(cfg: SyntheticConfig, rng) -> tuple:
    """Active triplet table plus the confusable verb groups.

    Confusable pairs are drawn first: each takes one (instrument, target)
    slot and two distinct verbs.  Remaining class slots fill with combos on
    untouched (instrument, target) pairs so groups stay exact pairs.
    """
    n_i, n_v, n_t = cfg.n_instruments, cfg.n_verbs, cfg.n_targets
    pair_order = rng.permutation(n_i * n_t)
    triplets, groups, used = [], [], set()
    for pair_idx in pair_order[:cfg.confusable_pairs]:
        i, t = divmod(int(pair_idx), n_t)
        v_a, v_b = (int(v) for v in rng.choice(n_v, size=2, replace=False))
        groups.append(((i, t), (v_a, v_b)))
        triplets += [(i, v_a, t), (i, v_b, t)]
        used.update(triplets[-2:])
    blocked = {(i, t) for (i, t), _ in groups}
    combo_order = rng.permutation(n_i * n_v * n_t)
    for idx in combo_order:
        if len(triplets) == cfg.active_triplets:
            break
        i, rest = divmod(int(idx), n_v * n_t)
        v, t = divmod(rest, n_t)
        if (i, v, t) in used or (i, t) in blocked:
            continue
        triplets.append((i, v, t))
        used.add((i, v, t))
    if len(triplets) < cfg.active_triplets:
        raise DatagenError("not enough free combinations outside the "
                           "confusable pairs; lower active_triplets or "
                           "confusable_pairs")
    # class id doubles as Zipf rank; keep the two rarest ranks unmodulated so
    # every temporal signature retains enough examples to be learnable
    n = len(triplets)
    grouped = set(range(2 * len(groups)))
    order = list(rng.permutation(n))
    reserve = min(2, n - len(grouped))
    spare = [r for r in range(n - reserve) if order[r] not in grouped]
    for r in range(n - reserve, n):
        if order[r] in grouped:
            s = spare.pop(0)
            order[r], order[s] = order[s], order[r]
    triplets = [triplets[j] for j in order]
    vocab = make_vocabulary([f"i{k}" for k in range(n_i)],
                            [f"v{k}" for k in range(n_v)],
                            [f"t{k}" for k in range(n_t)], triplets)
    group_members = []
    for (i, t), (v_a, v_b) in groups:
        c_a = triplets.index((i, v_a, t))
        c_b = triplets.index((i, v_b, t))
        group_members.append(((i, t), (c_a, c_b)))
    return vocab, group_members


def _build_latents(cfg: SyntheticConfig, rng, vocab, groups) -> ClassSignals:
    d_i = _unit_rows(rng, cfg.n_instruments, cfg.obs_dim)
    d_v = _unit_rows(rng, cfg.n_verbs, cfg.obs_dim)
    d_t = _unit_rows(rng, cfg.n_targets, cfg.obs_dim)
    shared = _unit_rows(rng, max(len(groups), 1), cfg.obs_dim)
    carriers = _unit_rows(rng, max(len(groups), 1), cfg.obs_dim)

    c_count = vocab.num_classes
    static = np.zeros((c_count, cfg.obs_dim))
    amplitude = np.zeros(c_count)
    period = np.ones(c_count)
    falling = np.zeros(c_count, dtype=bool)
    carrier = np.zeros((c_count, cfg.obs_dim))
    member_group = {}
    for g, (_, members) in enumerate(groups):
        for c in members:
            member_group[c] = g
    for c, (i, v, t) in enumerate(vocab.triplets):
        static[c] = d_i[i] + d_t[t]
        if c in member_group:
            g = member_group[c]
            static[c] += shared[g]
            amplitude[c] = cfg.mod_amplitude
            period[c] = verb_period(v, cfg.episode_len)
            falling[c] = verb_falling(v)
            carrier[c] = carriers[g]
        else:
            static[c] += d_v[v]
    return ClassSignals(static, amplitude, period, falling, carrier, list(groups))


def class_signals(cfg: SyntheticConfig, seed: int) -> tuple:
    """(vocab, groups, signals) exactly as generate_dataset(seed) builds them."""
    rng = np.random.default_rng(seed)
    vocab, groups = _build_vocabulary(cfg, rng)
    return vocab, groups, _build_latents(cfg, rng, vocab, groups)


def _zipf_weights(c_count: int, rho: float) -> np.ndarray:
    w = np.power(np.arange(1, c_count + 1, dtype=np.float64), -rho)
    return w / w.sum()


def _track_segments(cfg, rng, weights, active_rate: float):
    """(start, stop, class or None) segments covering one episode."""
    out, t = [], 0
    while t < cfg.episode_len:
        if active_rate >= 1.0 or rng.random() < active_rate:
            c = int(rng.choice(weights.size, p=weights))
        else:
            c = None
        dwell = int(min(rng.geometric(1.0 / cfg.dwell_mean), cfg.episode_len - t))
        out.append((t, t + dwell, c))
        t += dwell
    return out


def generate_dataset(config: SyntheticConfig, seed: int) -> EpisodeDataset:
    """Draw order: vocabulary, latent directions, per-episode segment and
    noise draws (track one, track two, noise matrix), then the split."""
    rng = np.random.default_rng(seed)
    vocab, groups = _build_vocabulary(config, rng)
    signals = _build_latents(config, rng, vocab, groups)
    weights = _zipf_weights(vocab.num_classes, config.zipf_rho)

    observations, labels = [], []
    t_axis = np.arange(config.episode_len, dtype=np.float64)
    for _ in range(config.episodes):
        segs = _track_segments(config, rng, weights, 1.0)
        segs += _track_segments(config, rng, weights, config.multi_label_rate)
        noise = rng.normal(size=(config.episode_len, config.obs_dim))
        obs = config.noise_sigma * noise
        lab = np.zeros((config.episode_len, vocab.num_classes), dtype=np.uint8)
        for a, b, c in segs:
            if c is None:
                continue
            already = lab[a:b, c].astype(bool)
            lab[a:b, c] = 1
            add = np.where(already[:, None], 0.0, 1.0)
            obs[a:b] += add * signals.static[c]
            if signals.amplitude[c] > 0.0:
                ph = (t_axis[a:b] / signals.period[c]) % 1.0
                if signals.falling[c]:
                    ph = 1.0 - ph
                wave = signals.amplitude[c] * (ph - 0.5)
                obs[a:b] += add * wave[:, None] * signals.carrier[c]
        observations.append(obs)
        labels.append(lab)

    split = _draw_split(config, rng, labels)
    return EpisodeDataset(vocab, config, int(seed), observations, labels, split)


def _draw_split(config, rng, labels) -> list:
    """Episode-level split; every active class must appear in train."""
    n_val = int(round(config.episodes * config.val_fraction))
    n_val = min(n_val, config.episodes - 1)
    if n_val <= 0:
        return ["train"] * config.episodes
    present = np.stack([lab.any(axis=0) for lab in labels])  # (E, C)
    for _ in range(100):
        perm = rng.permutation(config.episodes)
        val = set(int(e) for e in perm[:n_val])
        train_rows = [e for e in range(config.episodes) if e not in val]
        if present[train_rows].any(axis=0).all():
            return ["val" if e in val else "train" for e in range(config.episodes)]
    raise DatagenError("could not find an episode split covering every class "
                       "in train; use more episodes or a smaller val_fraction")


# -- file format ---------------------------------------------------------------

def _config_json(cfg: SyntheticConfig) -> bytes:
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()


def _vocab_json(vocab: Vocabulary) -> bytes:
    doc = {"instruments": list(vocab.instruments), "verbs": list(vocab.verbs),
           "targets": list(vocab.targets),
           "triplets": [list(t) for t in vocab.triplets]}
    return json.dumps(doc, sort_keys=True).encode()


def _block(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def write_dataset(ds: EpisodeDataset, path) -> None:
    c_count = ds.vocab.num_classes
    parts = [_block(_config_json(ds.config)), struct.pack("<Q", ds.seed),
             _block(_vocab_json(ds.vocab)),
             struct.pack("<III", len(ds.observations), ds.config.obs_dim, c_count)]
    for obs, lab, tag in zip(ds.observations, ds.labels, ds.split):
        parts.append(struct.pack("<BI", 1 if tag == "val" else 0, obs.shape[0]))
        parts.append(np.ascontiguousarray(obs, dtype="<f8").tobytes())
        parts.append(np.packbits(lab, axis=1).tobytes())
    payload = b"".join(parts)
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION) + digest + payload)
    write_manifest(ds, str(path) + ".manifest.json")


def write_manifest(ds: EpisodeDataset, path) -> None:
    counts = np.zeros(ds.vocab.num_classes, dtype=int)
    episodes = []
    for e, (lab, tag) in enumerate(zip(ds.labels, ds.split)):
        counts += lab.sum(axis=0).astype(np.int64)
        episodes.append({"index": e, "split": tag, "frames": int(lab.shape[0]),
                         "active_classes": np.nonzero(lab.any(axis=0))[0].tolist()})
    doc = {"seed": ds.seed, "config": dataclasses.asdict(ds.config),
           "class_names": [ds.vocab.triplet_name(c) for c in range(ds.vocab.num_classes)],
           "class_frame_counts": counts.tolist(), "episodes": episodes}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Reader:
    def __init__(self, buf: bytes, offset: int):
        self.buf, self.at = buf, offset

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.buf):
            raise DatasetIOError("truncated dataset file")
        out = self.buf[self.at:self.at + n]
        self.at += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_dataset(path) -> EpisodeDataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8 + 32:
        raise DatasetIOError("truncated dataset file")
    if buf[:4] != MAGIC:
        raise DatasetIOError(f"bad magic {buf[:4]!r}; not a dataset file")
    version = struct.unpack("<I", buf[4:8])[0]
    if version != VERSION:
        raise DatasetIOError(f"unsupported dataset version {version}; "
                             f"this reader handles version {VERSION}")
    digest = buf[8:40]
    if hashlib.sha256(buf[40:]).digest() != digest:
        raise DatasetIOError("checksum mismatch; dataset file is corrupt")

    r = _Reader(buf, 40)
    cfg_doc = json.loads(r.take(r.unpack("<I")[0]))
    config = SyntheticConfig(**cfg_doc)
    seed = r.unpack("<Q")[0]
    vocab_doc = json.loads(r.take(r.unpack("<I")[0]))
    vocab = make_vocabulary(vocab_doc["instruments"], vocab_doc["verbs"],
                            vocab_doc["targets"], vocab_doc["triplets"])
    n_ep, dim, c_count = r.unpack("<III")
    packed_width = (c_count + 7) // 8
    observations, labels, split = [], [], []
    for _ in range(n_ep):
        tag, frames = r.unpack("<BI")
        split.append("val" if tag else "train")
        obs = np.frombuffer(r.take(frames * dim * 8), dtype="<f8")
        observations.append(obs.reshape(frames, dim).copy())
        packed = np.frombuffer(r.take(frames * packed_width), dtype=np.uint8)
        lab = np.unpackbits(packed.reshape(frames, packed_width), axis=1)[:, :c_count]
        labels.append(np.ascontiguousarray(lab, dtype=np.uint8))
    if r.at != len(buf):
        raise DatasetIOError(f"{len(buf) - r.at} trailing bytes after the "
                             "last episode block")
    return EpisodeDataset(vocab, config, int(seed), observations, labels, split)


def load_external(path):
    """Adapter stub for real recorded datasets.

    An adapter must produce an EpisodeDataset: a Vocabulary whose triplet
    table enumerates the annotated (instrument, verb, target) classes, one
    (frames, obs_dim) float64 feature array per video, aligned (frames,
    num_classes) binary labels, and an episode-level train/val split.  No
    such loader ships here; this generator is the only data source.
    """
    raise NotImplementedError("external dataset loading is not implemented; "
                              "see the docstring for the adapter contract")
