"""Generator statistics, separability structure, and the dataset file format."""

import dataclasses
import json

import numpy as np
import pytest

from tricot.datagen import (DatagenError, DatasetIOError, EpisodeDataset,
                            SyntheticConfig, class_signals, datasets_equal,
                            desk_config, generate_dataset, load_external,
                            read_dataset, verb_falling, verb_period,
                            write_dataset)


def tiny_config(**kw):
    base = dict(n_instruments=2, n_verbs=2, n_targets=2, active_triplets=4,
                obs_dim=8, noise_sigma=0.1, zipf_rho=1.0, episodes=6,
                episode_len=24, multi_label_rate=0.2, dwell_mean=4.0,
                confusable_pairs=1, val_fraction=0.25)
    base.update(kw)
    return SyntheticConfig(**base)


# -- config validation ---------------------------------------------------------

def test_config_invariants():
    with pytest.raises(DatagenError):
        tiny_config(active_triplets=9)       # 2*2*2 combos only
    with pytest.raises(DatagenError):
        tiny_config(noise_sigma=-0.1)
    with pytest.raises(DatagenError):
        tiny_config(zipf_rho=-1.0)
    with pytest.raises(DatagenError):
        tiny_config(dwell_mean=0.5)
    with pytest.raises(DatagenError):
        tiny_config(multi_label_rate=1.5)
    with pytest.raises(DatagenError):
        tiny_config(confusable_pairs=3)      # needs 6 > 4 triplet slots
    with pytest.raises(DatagenError):
        tiny_config(n_verbs=1)               # confusable pair needs 2 verbs
    with pytest.raises(DatagenError):
        tiny_config(val_fraction=1.0)


def test_desk_preset():
    cfg = desk_config()
    assert (cfg.n_instruments, cfg.n_verbs, cfg.n_targets) == (3, 3, 4)
    assert cfg.active_triplets == 12 and cfg.obs_dim == 32
    assert cfg.episodes == 64 and cfg.episode_len == 64
    assert desk_config(noise_sigma=0.1).noise_sigma == 0.1


# -- generation basics ---------------------------------------------------------

def test_single_triplet_sigma_zero_is_constant():
    cfg = SyntheticConfig(n_instruments=1, n_verbs=1, n_targets=1,
                          active_triplets=1, obs_dim=8, noise_sigma=0.0,
                          zipf_rho=0.0, episodes=2, episode_len=16,
                          multi_label_rate=0.0, dwell_mean=16.0,
                          confusable_pairs=0, val_fraction=0.0)
    ds = generate_dataset(cfg, seed=0)
    for obs, lab in zip(ds.observations, ds.labels):
        assert np.array_equal(obs, np.repeat(obs[:1], 16, axis=0))
        assert np.array_equal(lab, np.ones((16, 1), dtype=np.uint8))


def test_labels_reference_only_active_and_cap_two():
    ds = generate_dataset(tiny_config(multi_label_rate=0.5), seed=1)
    assert ds.vocab.num_classes == 4
    saw_two = False
    for lab in ds.labels:
        per_frame = lab.sum(axis=1)
        assert per_frame.max() <= 2
        assert per_frame.min() >= 1       # track one is always active
        saw_two = saw_two or bool((per_frame == 2).any())
    assert saw_two


def test_every_class_reaches_train_split():
    for seed in range(5):
        ds = generate_dataset(tiny_config(), seed=seed)
        train = ds.indices("train")
        assert len(train) + len(ds.indices("val")) == ds.config.episodes
        assert len(ds.indices("val")) >= 1
        present = np.zeros(ds.vocab.num_classes, dtype=bool)
        for e in train:
            present |= ds.labels[e].any(axis=0)
        assert present.all()


def test_generation_determinism():
    cfg = tiny_config()
    a = generate_dataset(cfg, seed=7)
    b = generate_dataset(cfg, seed=7)
    assert datasets_equal(a, b)
    c = generate_dataset(cfg, seed=8)
    assert not datasets_equal(a, c)


# -- frequency statistics ------------------------------------------------------

def test_rho_zero_uniform_frequencies():
    # dwell 1 and a single track make frame counts a plain multinomial
    cfg = SyntheticConfig(n_instruments=2, n_verbs=2, n_targets=2,
                          active_triplets=8, obs_dim=4, noise_sigma=0.0,
                          zipf_rho=0.0, episodes=25, episode_len=4000,
                          multi_label_rate=0.0, dwell_mean=1.0,
                          confusable_pairs=0, val_fraction=0.0)
    ds = generate_dataset(cfg, seed=2)
    counts = np.zeros(8)
    for lab in ds.labels:
        counts += lab.sum(axis=0)
    n = counts.sum()
    assert n == 100000
    p = 1.0 / 8.0
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_zipf_head_tail_ratio():
    cfg = SyntheticConfig(n_instruments=2, n_verbs=2, n_targets=2,
                          active_triplets=8, obs_dim=4, noise_sigma=0.0,
                          zipf_rho=1.5, episodes=25, episode_len=4000,
                          multi_label_rate=0.0, dwell_mean=1.0,
                          confusable_pairs=0, val_fraction=0.0)
    ds = generate_dataset(cfg, seed=3)
    counts = np.zeros(8)
    for lab in ds.labels:
        counts += lab.sum(axis=0)
    # class id order is the designed frequency order
    assert counts[0] >= 4 * counts[7]


def test_zipf_rank_order_matches_design():
    cfg = SyntheticConfig(n_instruments=2, n_verbs=2, n_targets=2,
                          active_triplets=8, obs_dim=4, noise_sigma=0.0,
                          zipf_rho=1.2, episodes=25, episode_len=4000,
                          multi_label_rate=0.0, dwell_mean=1.0,
                          confusable_pairs=0, val_fraction=0.0)
    ds = generate_dataset(cfg, seed=4)
    counts = np.zeros(8)
    for lab in ds.labels:
        counts += lab.sum(axis=0)
    assert list(np.argsort(-counts)) == list(range(8))


# -- separability structure ----------------------------------------------------

def test_confusable_pair_shares_static_signal():
    cfg = tiny_config()
    vocab, groups, sig = class_signals(cfg, seed=5)
    assert len(groups) == 1
    (i, t), (c_a, c_b) = groups[0]
    assert vocab.triplets[c_a][0] == i and vocab.triplets[c_a][2] == t
    assert vocab.triplets[c_b][0] == i and vocab.triplets[c_b][2] == t
    assert vocab.triplets[c_a][1] != vocab.triplets[c_b][1]
    # identical static part, identical carrier, different ramp signature
    assert np.array_equal(sig.static[c_a], sig.static[c_b])
    assert np.array_equal(sig.carrier[c_a], sig.carrier[c_b])
    assert ((sig.period[c_a], sig.falling[c_a])
            != (sig.period[c_b], sig.falling[c_b]))
    assert sig.amplitude[c_a] == cfg.mod_amplitude
    # unconfused classes carry no modulation and distinct statics
    others = [c for c in range(4) if c not in (c_a, c_b)]
    for c in others:
        assert sig.amplitude[c] == 0.0
    assert not np.array_equal(sig.static[others[0]], sig.static[others[1]])


def test_sawtooth_trend_survives_pooling():
    T = 64
    t = np.arange(T, dtype=np.float64)

    def saw(v):
        ph = (t / verb_period(v, T)) % 1.0
        if verb_falling(v):
            ph = 1.0 - ph
        return ph - 0.5

    for v in range(3):
        cycles = T / verb_period(v, T)
        assert cycles == round(cycles)      # whole cycles per episode
    # every verb pair differs in direction or steepness
    assert len({(verb_period(v, T), verb_falling(v)) for v in range(3)}) == 3

    # opposite directions sweep the same value grid up to one endpoint
    rise, fall = np.sort(saw(0)), np.sort(saw(1))
    assert np.allclose(rise[1:], fall[:-1], atol=1e-12)

    # pooled tokens keep the trend: steps flip sign only around cycle wraps
    for stride in (4, 5, 6):
        for v in range(3):
            tok = np.array([saw(v)[k:k + stride].mean()
                            for k in range(0, T, stride)])
            d = np.diff(tok) * (-1.0 if verb_falling(v) else 1.0)
            wraps = int(round(T / verb_period(v, T))) - 1
            assert np.sum(d <= 0) <= 2 * wraps

    # a mean over a ramp is the ramp midpoint, so slopes pass unattenuated
    tok = np.array([saw(0)[k:k + 4].mean() for k in range(0, T, 4)])
    assert np.allclose(np.diff(tok), 4.0 / verb_period(0, T), atol=1e-12)


def test_noise_free_frames_match_signal_oracle():
    cfg = tiny_config(noise_sigma=0.0, episodes=3)
    ds = generate_dataset(cfg, seed=6)
    _, _, sig = class_signals(cfg, seed=6)
    for obs, lab in zip(ds.observations, ds.labels):
        for t in range(obs.shape[0]):
            active = np.nonzero(lab[t])[0]
            assert np.allclose(obs[t], sig.frame(active, t), atol=1e-12)


def test_noise_scale():
    cfg = tiny_config(noise_sigma=0.5, episodes=3)
    clean = generate_dataset(tiny_config(noise_sigma=0.0, episodes=3), seed=9)
    noisy = generate_dataset(cfg, seed=9)
    diffs = np.concatenate([(a - b).ravel() for a, b
                            in zip(noisy.observations, clean.observations)])
    assert abs(diffs.std() - 0.5) < 0.05
    assert all(np.array_equal(a, b) for a, b in zip(noisy.labels, clean.labels))


# -- file format ----------------------------------------------------------------

def test_round_trip_bit_exact(tmp_path):
    ds = generate_dataset(tiny_config(), seed=10)
    path = tmp_path / "toy.trds"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert datasets_equal(ds, back)
    manifest = json.loads((tmp_path / "toy.trds.manifest.json").read_text())
    assert manifest["seed"] == 10
    assert len(manifest["episodes"]) == ds.config.episodes
    assert {e["split"] for e in manifest["episodes"]} == {"train", "val"}


def test_same_seed_byte_identical_files(tmp_path):
    cfg = tiny_config()
    p1, p2 = tmp_path / "a.trds", tmp_path / "b.trds"
    write_dataset(generate_dataset(cfg, seed=11), p1)
    write_dataset(generate_dataset(cfg, seed=11), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_corruption_errors(tmp_path):
    ds = generate_dataset(tiny_config(), seed=12)
    path = tmp_path / "toy.trds"
    write_dataset(ds, path)
    raw = bytearray(path.read_bytes())

    flipped = bytearray(raw)
    flipped[60] ^= 0xFF
    (tmp_path / "bad.trds").write_bytes(flipped)
    with pytest.raises(DatasetIOError, match="checksum"):
        read_dataset(tmp_path / "bad.trds")

    vnext = bytearray(raw)
    vnext[4] = 99
    (tmp_path / "vnext.trds").write_bytes(vnext)
    with pytest.raises(DatasetIOError, match="version"):
        read_dataset(tmp_path / "vnext.trds")

    (tmp_path / "trunc.trds").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(DatasetIOError):
        read_dataset(tmp_path / "trunc.trds")

    (tmp_path / "magic.trds").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(DatasetIOError, match="magic"):
        read_dataset(tmp_path / "magic.trds")


def test_trailing_bytes_rejected(tmp_path):
    ds = generate_dataset(tiny_config(), seed=13)
    path = tmp_path / "toy.trds"
    write_dataset(ds, path)
    raw = path.read_bytes()
    # recompute the digest so only the trailing junk is wrong
    import hashlib
    import struct
    payload = raw[40:] + b"junk"
    fixed = raw[:8] + hashlib.sha256(payload).digest() + payload
    (tmp_path / "trail.trds").write_bytes(fixed)
    with pytest.raises(DatasetIOError, match="trailing"):
        read_dataset(tmp_path / "trail.trds")


def test_external_loader_is_a_stub():
    with pytest.raises(NotImplementedError):
        load_external("anything")
