"""Vocabulary validation, stage projections, and the coarsening property."""

import numpy as np
import pytest

from tricot.schema import (SchemaError, Vocabulary, component_maps,
                           load_vocabulary, make_vocabulary, project_to_stage,
                           save_vocabulary, stage_equal, stage_keys_batch,
                           validate_curriculum)


def small_vocab():
    return make_vocabulary(
        instruments=["gripper", "welder"],
        verbs=["hold", "weld"],
        targets=["pipe", "plate", "panel"],
        triplets=[(0, 0, 0), (0, 0, 1), (1, 1, 0), (1, 0, 2), (0, 1, 2)],
    )


def random_vocab(rng):
    ni, nv, nt = (int(rng.integers(2, 5)) for _ in range(3))
    combos = [(i, v, t) for i in range(ni) for v in range(nv) for t in range(nt)]
    rng.shuffle(combos)
    c = int(rng.integers(2, len(combos) + 1))
    return make_vocabulary([f"i{k}" for k in range(ni)], [f"v{k}" for k in range(nv)],
                           [f"t{k}" for k in range(nt)], combos[:c])


def test_projection_by_stage():
    v = small_vocab()
    assert project_to_stage([0], v, "T") == {(0,)}
    assert project_to_stage([0], v, "IT") == {(0, 0)}
    assert project_to_stage([0], v, "IVT") == {(0, 0, 0)}
    assert project_to_stage([0], v, "V") == {(0,)}
    assert project_to_stage([0], v, "VT") == {(0, 0)}


def test_stage_equal_shared_target_different_instrument():
    v = small_vocab()
    # class 0 = (gripper, hold, pipe); class 2 = (welder, weld, pipe)
    assert stage_equal([0], [2], v, "T")
    assert not stage_equal([0], [2], v, "IT")
    assert not stage_equal([0], [2], v, "IVT")


def test_empty_labels_stage_equal_everywhere():
    v = small_vocab()
    for stage in ("I", "V", "T", "IV", "IT", "VT", "IVT"):
        assert stage_equal([], [], v, stage)
        assert not stage_equal([], [0], v, stage)


def test_multilabel_projection_is_union():
    v = small_vocab()
    assert project_to_stage([0, 2], v, "T") == {(0,)}      # same target twice
    assert project_to_stage([0, 3], v, "T") == {(0,), (2,)}
    assert project_to_stage([0, 2], v, "IVT") == {(0, 0, 0), (1, 1, 0)}


def test_stage_keys_batch_matches_scalar():
    v = small_vocab()
    labels = np.zeros((4, v.num_classes), dtype=np.uint8)
    labels[0, [0, 3]] = 1
    labels[1, 2] = 1
    labels[3, [1, 4]] = 1
    for stage in ("T", "IT", "IVT"):
        keys = stage_keys_batch(labels, v, stage)
        for row, key in enumerate(keys):
            assert key == project_to_stage(np.nonzero(labels[row])[0], v, stage)


def test_monotone_coarsening_property():
    # equality at a finer stage implies equality at every coarser stage of the chain
    rng = np.random.default_rng(17)
    chains = [("T", "IT", "IVT"), ("I", "IV", "IVT"), ("V", "VT", "IVT"),
              ("T", "VT", "IVT"), ("I", "IT", "IVT"), ("V", "IV", "IVT")]
    for _ in range(300):
        v = random_vocab(rng)
        c = v.num_classes
        for _ in range(10):
            a = list(np.nonzero(rng.random(c) < 0.3)[0])
            b = list(np.nonzero(rng.random(c) < 0.3)[0])
            for chain in chains:
                for fine in range(len(chain) - 1, 0, -1):
                    if stage_equal(a, b, v, chain[fine]):
                        for coarse in range(fine):
                            assert stage_equal(a, b, v, chain[coarse]), \
                                f"{a} vs {b}: equal at {chain[fine]} but not {chain[coarse]}"


def test_component_maps_small():
    v = small_vocab()
    maps = component_maps(v)
    np.testing.assert_array_equal(maps["I"][0], [0, 0, 1, 1, 0])
    np.testing.assert_array_equal(maps["T"][0], [0, 1, 0, 2, 2])
    # IVT keys sorted ascending: (0,0,0) (0,0,1) (0,1,2) (1,0,2) (1,1,0)
    np.testing.assert_array_equal(maps["IVT"][0], [0, 1, 4, 3, 2])
    assert len(set(maps["IVT"][0])) == 5  # every class its own group
    assert maps["I"][1] == ["gripper", "welder"]
    # IV groups: distinct (i, v) pairs in ascending order
    # keys per class: (0,0),(0,0),(1,1),(1,0),(0,1) -> groups 0,0,3,2,1
    np.testing.assert_array_equal(maps["IV"][0], [0, 0, 3, 2, 1])


def test_component_maps_full_scale():
    # 6 instruments, 100 valid triplets: the I family has exactly 6 groups
    rng = np.random.default_rng(11)
    combos = [(i, v, t) for i in range(6) for v in range(10) for t in range(15)]
    rng.shuffle(combos)
    chosen = []
    for i in range(6):  # make sure every instrument occurs
        chosen.append(next(c for c in combos if c[0] == i))
    chosen += [c for c in combos if c not in chosen][:94]
    v = make_vocabulary([f"i{k}" for k in range(6)], [f"v{k}" for k in range(10)],
                        [f"t{k}" for k in range(15)], chosen)
    assert v.num_classes == 100
    maps = component_maps(v)
    assert len(maps["I"][1]) == 6
    assert maps["I"][0].max() == 5


def test_vocabulary_file_round_trip(tmp_path):
    v = small_vocab()
    path = tmp_path / "vocab.json"
    save_vocabulary(v, path)
    assert load_vocabulary(path) == v
    # file is human-readable structured text
    text = path.read_text()
    assert "gripper" in text and "triplets" in text


def test_vocabulary_validation_errors():
    with pytest.raises(SchemaError, match="duplicate triplet"):
        make_vocabulary(["a"], ["b"], ["c"], [(0, 0, 0), (0, 0, 0)])
    with pytest.raises(SchemaError, match="out-of-range"):
        make_vocabulary(["a"], ["b"], ["c"], [(0, 1, 0)])
    with pytest.raises(SchemaError, match="empty"):
        make_vocabulary([], ["b"], ["c"], [(0, 0, 0)])
    with pytest.raises(SchemaError, match="duplicate names"):
        make_vocabulary(["a", "a"], ["b"], ["c"], [(0, 0, 0)])
    with pytest.raises(SchemaError, match="unknown stage"):
        project_to_stage([0], small_vocab(), "TI")


def test_curriculum_validation():
    validate_curriculum(["T", "IT", "IVT"])
    validate_curriculum(["V", "VT", "IVT"])
    validate_curriculum(["IVT"])
    with pytest.raises(SchemaError):
        validate_curriculum(["IT", "T", "IVT"])  # not coarse-to-fine
    with pytest.raises(SchemaError):
        validate_curriculum(["T", "IT"])  # must end at IVT
    with pytest.raises(SchemaError):
        validate_curriculum([])
