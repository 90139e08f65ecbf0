import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from contactdiff.body import DEFAULT_TREE, PARAM_DIM, capsule_sdf, mirror_params, pose
from contactdiff.contact import ground_truth_contacts
from contactdiff.data import (LABEL_NAMES, MAX_PENETRATION, DataConfig, Dataset, InteractionLabel,
                              build_dataset, canonical_root_rotvec, canonicalize, generate_base, generate_sample,
                              load_manifest, load_split, mirror_augment, normalize_partner, save_dataset,
                              split_counts, validate_dataset)

TREE = DEFAULT_TREE


@pytest.fixture(scope="module")
def base1000():
    return generate_base(DataConfig(count=1000, seed=3))


def test_labels_parse_by_name_and_index():
    assert InteractionLabel.parse("handshake") == InteractionLabel.parse(int(InteractionLabel.HANDSHAKE))
    assert len(LABEL_NAMES) == 8
    with pytest.raises(ValueError):
        InteractionLabel.parse("dance")
    with pytest.raises(ValueError):
        InteractionLabel.parse(8)


def test_every_generated_sample_has_contact_and_little_penetration(base1000):
    ds = Dataset.from_samples(base1000)
    assert validate_dataset(ds) == []
    assert np.all(ds.contacts.sum(axis=(1, 2)) >= 1)
    bh, bp = pose(ds.x_h[:200]), pose(ds.x_p[:200])
    for k in range(200):
        assert np.mean(capsule_sdf(bh.vertex_array[k], bp, k) < 0) <= MAX_PENETRATION
    assert set(np.unique(ds.labels)) == set(range(8))


def test_partner_normalized_to_origin_facing_forward(base1000):
    for s in base1000[:100]:
        np.testing.assert_array_equal(s.x_p[0:3], 0.0)
        fwd = Rotation.from_rotvec(s.x_p[3:6]).apply([0.0, 0.0, 1.0])
        assert abs(np.arctan2(fwd[0], fwd[2])) < 1e-9


def test_normalization_preserves_contacts():
    rng = np.random.default_rng(11)
    raw = generate_sample("hug", rng)
    norm = normalize_partner(raw)
    gt = ground_truth_contacts(pose(norm.x_h), pose(norm.x_p))[0]
    np.testing.assert_array_equal(gt, raw.contacts)


def test_mirror_is_bitwise_involution(base1000):
    for s in base1000:
        twice = mirror_augment(mirror_augment(s))
        assert np.array_equal(twice.x_h, s.x_h) and np.array_equal(twice.x_p, s.x_p)
        assert np.array_equal(twice.contacts, s.contacts) and twice.mirrored == s.mirrored
        assert np.array_equal(mirror_params(mirror_params(s.x_h)), s.x_h)


def test_mirror_preserves_contact_structure(base1000):
    mirrored = Dataset.from_samples([mirror_augment(s) for s in base1000])
    # the permuted map is exactly what the mirrored geometry produces
    assert validate_dataset(mirrored) == []
    for s, m in zip(base1000[:50], mirrored.contacts[:50]):
        assert m.sum() == s.contacts.sum()


def test_canonical_root_rotvec_same_rotation_and_no_branch_cut():
    rng = np.random.default_rng(5)
    for _ in range(200):
        r = Rotation.random(random_state=rng).as_rotvec()
        c = canonical_root_rotvec(r)
        np.testing.assert_allclose(Rotation.from_rotvec(c).as_matrix(), Rotation.from_rotvec(r).as_matrix(),
                                   atol=1e-9)
    # yaw sweeping through a half turn with a little tilt stays continuous
    tilt = Rotation.from_rotvec([0.04, 0.0, -0.03])
    prev = None
    for psi in np.linspace(np.pi - 0.3, np.pi + 0.3, 61):
        c = canonical_root_rotvec((Rotation.from_rotvec([0.0, psi, 0.0]) * tilt).as_rotvec())
        if prev is not None:
            assert np.linalg.norm(c - prev) < 0.05
        prev = c
    assert np.array_equal(canonical_root_rotvec(np.zeros(3)), np.zeros(3))


def test_generation_is_deterministic():
    a = generate_sample("handshake", np.random.default_rng([1, 2]))
    b = generate_sample("handshake", np.random.default_rng([1, 2]))
    assert np.array_equal(a.x_h, b.x_h) and np.array_equal(a.contacts, b.contacts)


def test_build_save_load_roundtrip(tmp_path):
    cfg = DataConfig(count=44, seed=1)
    train, test, manifest = build_dataset(cfg)
    assert (len(train), len(test)) == (80, 8)
    assert split_counts(44, 1 / 11) == (40, 4)
    assert not set(train.index.tolist()) & set(test.index.tolist())
    assert train.mirrored.sum() == 40
    save_dataset(tmp_path, train, test, manifest)
    again = load_split(tmp_path, "train")
    assert again.fingerprint() == manifest["fingerprint"]["train"]
    assert load_manifest(tmp_path)["counts"] == {"train": 80, "test": 8}
    train2, _, manifest2 = build_dataset(cfg)
    assert manifest2 == manifest


def test_validation_reports_corruption():
    train, _, _ = build_dataset(DataConfig(count=11, seed=2, augment=False))
    bad = Dataset(train.x_p.copy(), train.x_h.copy(), train.labels.copy(), train.contacts.copy(),
                  train.index, train.mirrored)
    bad.contacts[0] = 1.0 - bad.contacts[0]
    bad.x_h[1, 0] += 10.0
    bad.labels[2] = 9
    problems = validate_dataset(bad)
    assert any("sample 0" in p for p in problems)
    assert any("sample 1: no contact" in p for p in problems)
    assert "label out of range" in problems
    assert not any("no contact" in p for p in validate_dataset(
        Dataset(bad.x_p[1:2], bad.x_h[1:2], bad.labels[:1] * 0,
                ground_truth_contacts(pose(bad.x_h[1:2]), pose(bad.x_p[1:2])), bad.index[:1], bad.mirrored[:1]),
        require_contact=False))


def test_data_config_validation():
    with pytest.raises(ValueError):
        DataConfig(count=0)
    with pytest.raises(ValueError):
        DataConfig(test_fraction=1.0)
    with pytest.raises(ValueError):
        DataConfig(labels=("waltz",))


def test_canonicalize_keeps_geometry():
    s = generate_sample("hit", np.random.default_rng(9))
    c = canonicalize(mirror_augment(s))
    np.testing.assert_allclose(pose(c.x_h).vertex_array, pose(mirror_params(s.x_h)).vertex_array, atol=1e-10)
    assert c.x_h.shape == (PARAM_DIM,)
