"""Procedural interacting-pair dataset at the moment of contact.

Each label has a hand-authored recipe: a pose template for both bodies, a rough
placement of the interactive body relative to its partner, and the region pair
that must touch.  The interactive body is then translated so that the closest
vertices of that region pair sit ``CONTACT_GAP`` apart, which guarantees a
ground-truth contact at the 2 cm threshold.

Recipes (interactive region -> partner region):

=============  ==============  ==============  ============
label          interactive     partner         stance
=============  ==============  ==============  ============
push           r_hand          chest           facing
posing         r_hand          l_upperarm      side by side
grab           r_hand          l_forearm       facing
hug            chest           chest           facing
kick           r_foot          abdomen         facing
handshake      r_hand          r_hand          facing
holding-hands  r_hand          l_hand          side by side
hit            r_hand          head            facing
=============  ==============  ==============  ============
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .body import (DEFAULT_TREE, JOINT_NAMES, NUM_JOINTS, PARAM_DIM, KinematicTree, capsule_sdf,
                   mirror_params, point_segment_distance, pose)
from .contact import CONTACT_DELTA, ground_truth_contacts
from .serialization import config_hash, read_blob, read_json, write_blob, write_json

log = logging.getLogger(__name__)

CONTACT_GAP = 0.008
MAX_RETRIES = 25
# reject constructions where more of the interactive surface than this sits inside the partner
MAX_PENETRATION = 0.12


class InteractionLabel(IntEnum):
    PUSH = 0
    POSING = 1
    GRAB = 2
    HUG = 3
    KICK = 4
    HANDSHAKE = 5
    HOLDING_HANDS = 6
    HIT = 7

    @property
    def slug(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def parse(cls, value) -> "InteractionLabel":
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown interaction label {value!r}") from None


LABEL_NAMES = tuple(l.slug for l in InteractionLabel)
_J = {name: j for j, name in enumerate(JOINT_NAMES)}

# body-frame directions: +z forward, +y up, +x the body's left
_F, _U, _LEFT = np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])
_D, _RIGHT = -_U, -_LEFT


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Recipe:
    region_h: str
    region_p: str
    facing: bool
    # rough placement of the interactive pelvis in the partner's frame
    offset: tuple[float, float, float]
    # world-frame limb directions (in the body's own frame) per joint, interactive / partner
    aims_h: dict = field(default_factory=dict)
    aims_p: dict = field(default_factory=dict)


def _arms_down(spread=0.15):
    return {"l_shoulder": _unit(_D + spread * _LEFT), "r_shoulder": _unit(_D + spread * _RIGHT),
            "l_elbow": _unit(_D + 0.1 * _F + spread * _LEFT), "r_elbow": _unit(_D + 0.1 * _F + spread * _RIGHT)}


def _merge(*dicts):
    out = {}
    for d in dicts:
        out.update(d)
    return out


RECIPES: dict[InteractionLabel, Recipe] = {
    InteractionLabel.PUSH: Recipe(
        "r_hand", "chest", True, (0.0, 0.0, 0.75),
        aims_h=_merge(_arms_down(), {"r_shoulder": _unit(_F + 0.05 * _U + 0.2 * _LEFT),
                                     "r_elbow": _unit(_F + 0.05 * _U + 0.1 * _LEFT),
                                     "l_shoulder": _unit(_F - 0.05 * _U + 0.1 * _RIGHT),
                                     "l_elbow": _unit(_F + 0.1 * _RIGHT)}),
        aims_p=_arms_down()),
    InteractionLabel.POSING: Recipe(
        "r_hand", "l_upperarm", False, (0.5, 0.0, -0.05),
        aims_h=_merge(_arms_down(), {"r_shoulder": _unit(_RIGHT + 0.15 * _U - 0.15 * _F),
                                     "r_elbow": _unit(_RIGHT - 0.2 * _U - 0.1 * _F)}),
        aims_p=_arms_down(0.25)),
    InteractionLabel.GRAB: Recipe(
        "r_hand", "l_forearm", True, (0.0, 0.0, 0.8),
        aims_h=_merge(_arms_down(), {"r_shoulder": _unit(_F - 0.4 * _U + 0.15 * _LEFT),
                                     "r_elbow": _unit(_F - 0.2 * _U + 0.1 * _LEFT)}),
        aims_p=_merge(_arms_down(), {"l_shoulder": _unit(_F - 0.5 * _U + 0.2 * _LEFT),
                                     "l_elbow": _unit(_F - 0.2 * _U + 0.1 * _LEFT)})),
    InteractionLabel.HUG: Recipe(
        "chest", "chest", True, (0.0, 0.0, 0.32),
        aims_h={"l_shoulder": _unit(_F + 0.5 * _LEFT - 0.3 * _U), "r_shoulder": _unit(_F + 0.5 * _RIGHT - 0.3 * _U),
                "l_elbow": _unit(_F + 0.6 * _RIGHT - 0.1 * _U), "r_elbow": _unit(_F + 0.6 * _LEFT - 0.1 * _U),
                "l_wrist": _RIGHT, "r_wrist": _LEFT},
        aims_p={"l_shoulder": _unit(_F + 0.5 * _LEFT + 0.6 * _U), "r_shoulder": _unit(_F + 0.5 * _RIGHT + 0.6 * _U),
                "l_elbow": _unit(_F + 0.6 * _RIGHT + 0.3 * _U), "r_elbow": _unit(_F + 0.6 * _LEFT + 0.3 * _U)}),
    InteractionLabel.KICK: Recipe(
        "r_foot", "abdomen", True, (0.0, 0.0, 1.0),
        aims_h={"r_hip": _unit(_F + 0.35 * _D), "r_knee": _unit(_F + 0.15 * _D),
                "l_shoulder": _unit(_LEFT + 0.6 * _D), "r_shoulder": _unit(_RIGHT + 0.6 * _D - 0.3 * _F),
                "l_elbow": _unit(_LEFT + 0.8 * _D + 0.3 * _F), "r_elbow": _unit(_RIGHT + 0.8 * _D)},
        aims_p=_arms_down(0.3)),
    InteractionLabel.HANDSHAKE: Recipe(
        "r_hand", "r_hand", True, (0.1, 0.0, 0.75),
        aims_h=_merge(_arms_down(), {"r_shoulder": _unit(0.5 * _F + _D + 0.1 * _LEFT),
                                     "r_elbow": _unit(_F - 0.1 * _U + 0.25 * _LEFT)}),
        aims_p=_merge(_arms_down(), {"r_shoulder": _unit(0.5 * _F + _D + 0.1 * _LEFT),
                                     "r_elbow": _unit(_F - 0.1 * _U + 0.25 * _LEFT)})),
    InteractionLabel.HOLDING_HANDS: Recipe(
        "r_hand", "l_hand", False, (0.7, 0.0, 0.0),
        aims_h=_merge(_arms_down(), {"r_shoulder": _unit(_D + 0.45 * _RIGHT + 0.1 * _F),
                                     "r_elbow": _unit(_D + 0.45 * _RIGHT + 0.2 * _F)}),
        aims_p=_merge(_arms_down(), {"l_shoulder": _unit(_D + 0.45 * _LEFT + 0.1 * _F),
                                     "l_elbow": _unit(_D + 0.45 * _LEFT + 0.2 * _F)})),
    InteractionLabel.HIT: Recipe(
        "r_hand", "head", True, (0.0, 0.0, 0.7),
        aims_h=_merge(_arms_down(), {"r_shoulder": _unit(_F + 0.45 * _U + 0.15 * _LEFT),
                                     "r_elbow": _unit(_F + 0.25 * _U + 0.1 * _LEFT),
                                     "l_shoulder": _unit(_D + 0.4 * _F + 0.1 * _LEFT),
                                     "l_elbow": _unit(_U + 0.4 * _F)}),
        aims_p=_arms_down()),
}


@dataclass
class InteractionSample:
    x_p: np.ndarray
    x_h: np.ndarray
    label: int
    contacts: np.ndarray
    seed: int = 0
    index: int = 0
    mirrored: bool = False


class ContactConstructionError(RuntimeError):
    pass


# ---------------------------------------------------------------- rotations


def _yaw(psi: float) -> np.ndarray:
    return Rotation.from_rotvec([0.0, psi, 0.0]).as_matrix()


def _rotvec(m: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(m).as_rotvec()


def canonical_root_rotvec(r: np.ndarray) -> np.ndarray:
    """Pick the axis-angle representative of a root rotation that avoids the pi branch cut.

    Bodies facing backwards (-z) get the representative closest to a half turn
    about +y, all others the principal one, so face-to-face data stays unimodal.
    """
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    if theta < 1e-12:
        return r.copy()
    forward = Rotation.from_rotvec(r).apply([0.0, 0.0, 1.0])
    if forward[2] >= 0:
        return _rotvec(Rotation.from_rotvec(r).as_matrix())
    ref = np.array([0.0, np.pi, 0.0])
    axis = r / theta
    cands = [axis * (theta + 2 * np.pi * k) for k in (-2, -1, 0, 1)]
    return min(cands, key=lambda c: np.linalg.norm(c - ref))


def _aim_rotvec(rest_dir: np.ndarray, target: np.ndarray) -> np.ndarray:
    a, b = _unit(rest_dir), _unit(target)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.clip(np.dot(a, b), -1.0, 1.0))
    if s < 1e-12:
        if c > 0:
            return np.zeros(3)
        perp = np.cross(a, [0.0, 1.0, 0.0] if abs(a[1]) < 0.9 else [1.0, 0.0, 0.0])
        return _unit(perp) * np.pi
    return axis / s * np.arctan2(s, c)


def _world_rotations(x: np.ndarray, tree: KinematicTree) -> np.ndarray:
    rots = Rotation.from_rotvec(x[3:].reshape(NUM_JOINTS, 3)).as_matrix()
    world = np.empty_like(rots)
    for j, p in enumerate(tree.parents):
        world[j] = rots[j] if p < 0 else world[p] @ rots[j]
    return world


def _apply_aims(x: np.ndarray, aims: dict, body_rot: np.ndarray, tree: KinematicTree,
                rng: np.random.Generator, jitter: float) -> None:
    """Set joint rotations so that each listed bone points along its target direction.

    Targets are given in the body frame and mapped to the world with ``body_rot``.
    """
    for name in JOINT_NAMES[1:]:
        if name not in aims:
            continue
        j = _J[name]
        world = _world_rotations(x, tree)
        parent_rot = world[tree.parents[j]]
        target = body_rot @ aims[name]
        target = _unit(target + jitter * rng.standard_normal(3))
        local_target = parent_rot.T @ target
        x[3 + 3 * j:6 + 3 * j] = _aim_rotvec(tree.bones[j], local_target)


def _jitter_joints(x: np.ndarray, joints, rng: np.random.Generator, scale: float) -> None:
    for j in joints:
        x[3 + 3 * j:6 + 3 * j] += scale * rng.standard_normal(3)


def _chain(joint: int, tree: KinematicTree) -> set[int]:
    out = set()
    while joint >= 0:
        out.add(joint)
        joint = tree.parents[joint]
    return out


# ---------------------------------------------------------------- construction


def _region_owner(region: str, tree: KinematicTree) -> int:
    return tree.region_names.index(region) // tree.regions_per_capsule + 1


def _body(label: InteractionLabel, rng: np.random.Generator, aims: dict, body_rot: np.ndarray,
          trans: np.ndarray, root_rotvec: np.ndarray, tree: KinematicTree) -> np.ndarray:
    x = np.zeros(PARAM_DIM)
    x[0:3] = trans
    x[3:6] = root_rotvec
    _jitter_joints(x, range(1, NUM_JOINTS), rng, 0.06)
    world_rot = Rotation.from_rotvec(root_rotvec).as_matrix()
    _apply_aims(x, aims, world_rot, tree, rng, jitter=0.12)
    return x


def _snap(x_h: np.ndarray, x_p: np.ndarray, recipe: Recipe, tree: KinematicTree) -> np.ndarray:
    """Translate the interactive body so the recipe regions touch with ``CONTACT_GAP``."""
    ri = tree.region_names.index(recipe.region_h)
    rj = tree.region_names.index(recipe.region_p)
    bh, bp = pose(x_h, tree), pose(x_p, tree)
    va = bh.vertices.data[0, ri]
    vb = bp.vertices.data[0, rj]
    d2 = np.sum((va[:, None] - vb[None]) ** 2, axis=-1)
    ia, ib = np.unravel_index(np.argmin(d2), d2.shape)
    a, b = va[ia], vb[ib]
    cap = _region_owner(recipe.region_p, tree) - 1
    s0, s1 = bp.seg_start[0, cap], bp.seg_end[0, cap]
    seg = s1 - s0
    t = np.clip(np.dot(b - s0, seg) / np.dot(seg, seg), 0.0, 1.0)
    normal = _unit(b - (s0 + t * seg))
    out = x_h.copy()
    out[0:3] += (b - a) + CONTACT_GAP * normal
    return out


def generate_sample(label, rng: np.random.Generator, tree: KinematicTree = DEFAULT_TREE,
                    delta: float = CONTACT_DELTA, seed: int = 0, index: int = 0) -> InteractionSample:
    """Build one contact-moment pair for ``label`` (partner pose in a random world frame)."""
    label = InteractionLabel.parse(label)
    recipe = RECIPES[label]
    last = ""
    for attempt in range(MAX_RETRIES):
        psi = rng.uniform(-np.pi, np.pi)
        p_tilt = 0.05 * rng.standard_normal(3)
        p_rot = _yaw(psi) @ Rotation.from_rotvec(p_tilt).as_matrix()
        p_trans = np.array([rng.uniform(-2, 2), 0.02 * rng.standard_normal(), rng.uniform(-2, 2)])
        x_p = _body(label, rng, recipe.aims_p, p_rot, p_trans, _rotvec(p_rot), tree)

        rel_yaw = (np.pi if recipe.facing else 0.0) + 0.25 * rng.standard_normal()
        h_rot = _yaw(psi + rel_yaw) @ Rotation.from_rotvec(0.05 * rng.standard_normal(3)).as_matrix()
        offset = np.asarray(recipe.offset) + np.array([0.08, 0.02, 0.08]) * rng.standard_normal(3)
        h_trans = p_trans + _yaw(psi) @ offset
        x_h = _body(label, rng, recipe.aims_h, h_rot, h_trans, _rotvec(h_rot), tree)
        x_h = _snap(x_h, x_p, recipe, tree)

        # small extra jitter on joints that do not carry the contact region
        owner = _region_owner(recipe.region_h, tree)
        free = [j for j in range(1, NUM_JOINTS) if j not in _chain(owner, tree)]
        _jitter_joints(x_h, free, rng, 0.03)

        bh, bp = pose(x_h, tree), pose(x_p, tree)
        contacts = ground_truth_contacts(bh, bp, delta)[0]
        if contacts.sum() < 1:
            last = "no ground-truth contact"
            continue
        inside = np.mean(capsule_sdf(bh.vertex_array[0], bp) < 0)
        if inside > MAX_PENETRATION:
            last = f"penetration {inside:.2f}"
            continue
        return InteractionSample(x_p, x_h, int(label), contacts, seed=seed, index=index)
    raise ContactConstructionError(
        f"label {label.slug}: no valid contact after {MAX_RETRIES} attempts (last: {last})")


def normalize_partner(sample: InteractionSample, tree: KinematicTree = DEFAULT_TREE) -> InteractionSample:
    """Rigidly move both bodies so the partner pelvis is at the origin with zero yaw."""
    r_p = Rotation.from_rotvec(sample.x_p[3:6]).as_matrix()
    fwd = r_p @ np.array([0.0, 0.0, 1.0])
    psi = np.arctan2(fwd[0], fwd[2])
    q = _yaw(-psi)
    origin = sample.x_p[0:3].copy()
    out = []
    for x in (sample.x_p, sample.x_h):
        y = x.copy()
        y[0:3] = q @ (x[0:3] - origin)
        y[3:6] = _rotvec(q @ Rotation.from_rotvec(x[3:6]).as_matrix())
        out.append(y)
    x_p, x_h = out
    x_p[0:3] = 0.0
    x_h[3:6] = canonical_root_rotvec(x_h[3:6])
    return InteractionSample(x_p, x_h, sample.label, sample.contacts.copy(), sample.seed,
                             sample.index, sample.mirrored)


def root_yaw(x: np.ndarray) -> float:
    fwd = Rotation.from_rotvec(x[3:6]).apply([0.0, 0.0, 1.0])
    return float(np.arctan2(fwd[0], fwd[2]))


def mirror_augment(sample: InteractionSample, tree: KinematicTree = DEFAULT_TREE) -> InteractionSample:
    """Reflect both bodies across the sagittal plane; left and right swap everywhere."""
    perm = tree.region_mirror
    contacts = sample.contacts[np.ix_(perm, perm)]
    return InteractionSample(mirror_params(sample.x_p), mirror_params(sample.x_h), sample.label,
                             contacts, sample.seed, sample.index, not sample.mirrored)


def canonicalize(sample: InteractionSample) -> InteractionSample:
    x_h = sample.x_h.copy()
    x_h[3:6] = canonical_root_rotvec(x_h[3:6])
    return InteractionSample(sample.x_p, x_h, sample.label, sample.contacts, sample.seed,
                             sample.index, sample.mirrored)


# ---------------------------------------------------------------- datasets


@dataclass
class Dataset:
    x_p: np.ndarray  # (N, 54)
    x_h: np.ndarray  # (N, 54)
    labels: np.ndarray  # (N,) int
    contacts: np.ndarray  # (N, R, R)
    index: np.ndarray  # (N,) generator index of the base sample
    mirrored: np.ndarray  # (N,) bool

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, mask) -> "Dataset":
        return Dataset(self.x_p[mask], self.x_h[mask], self.labels[mask], self.contacts[mask],
                       self.index[mask], self.mirrored[mask])

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"x_p": self.x_p, "x_h": self.x_h, "labels": self.labels.astype(float),
                "contacts": self.contacts, "index": self.index.astype(float),
                "mirrored": self.mirrored.astype(float)}

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "Dataset":
        return cls(a["x_p"], a["x_h"], a["labels"].astype(np.int64), a["contacts"],
                   a["index"].astype(np.int64), a["mirrored"].astype(bool))

    @classmethod
    def from_samples(cls, samples: list[InteractionSample]) -> "Dataset":
        return cls(np.stack([s.x_p for s in samples]), np.stack([s.x_h for s in samples]),
                   np.array([s.label for s in samples], dtype=np.int64),
                   np.stack([s.contacts for s in samples]),
                   np.array([s.index for s in samples], dtype=np.int64),
                   np.array([s.mirrored for s in samples], dtype=bool))

    def label_histogram(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=len(LABEL_NAMES))
        return {LABEL_NAMES[k]: int(c) for k, c in enumerate(counts)}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in self.to_arrays().values():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class DataConfig:
    count: int = 4400
    test_fraction: float = 1.0 / 11.0
    seed: int = 0
    delta: float = CONTACT_DELTA
    augment: bool = True
    labels: tuple[str, ...] = LABEL_NAMES

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be positive")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")
        for name in self.labels:
            InteractionLabel.parse(name)


def split_counts(count: int, test_fraction: float) -> tuple[int, int]:
    n_test = int(round(count * test_fraction))
    return count - n_test, n_test


def generate_base(config: DataConfig, tree: KinematicTree = DEFAULT_TREE) -> list[InteractionSample]:
    labels = [int(InteractionLabel.parse(l)) for l in config.labels]
    out = []
    for i in range(config.count):
        rng = np.random.default_rng([config.seed, i])
        label = labels[int(rng.integers(len(labels)))]
        raw = generate_sample(label, rng, tree, config.delta, seed=config.seed, index=i)
        out.append(normalize_partner(raw, tree))
    return out


def build_dataset(config: DataConfig, tree: KinematicTree = DEFAULT_TREE) -> tuple[Dataset, Dataset, dict]:
    """Generate, normalize, split and optionally mirror-augment; returns (train, test, manifest)."""
    base = generate_base(config, tree)
    n_train, n_test = split_counts(config.count, config.test_fraction)
    order = np.random.default_rng([config.seed, 0x5EED]).permutation(config.count)
    test_ids = set(order[:n_test].tolist())
    splits = {"train": [], "test": []}
    for s in base:
        splits["test" if s.index in test_ids else "train"].append(s)
    if config.augment:
        for key in splits:
            splits[key] = splits[key] + [canonicalize(mirror_augment(s, tree)) for s in splits[key]]
    train = Dataset.from_samples(splits["train"])
    test = Dataset.from_samples(splits["test"]) if splits["test"] else None
    manifest = {
        "config": _config_dict(config),
        "config_hash": config_hash(_config_dict(config)),
        "base_count": config.count,
        "counts": {"train": len(train), "test": len(test) if test is not None else 0},
        "label_histogram": {"train": train.label_histogram(),
                            "test": test.label_histogram() if test is not None else {}},
        "split": {"train_indices": sorted(int(i) for i in set(train.index.tolist())),
                  "test_indices": sorted(int(i) for i in test_ids)},
        "fingerprint": {"train": train.fingerprint(),
                        "test": test.fingerprint() if test is not None else None},
        "n_reg": tree.n_reg,
        "vertices_per_capsule": tree.vertices_per_capsule,
    }
    return train, test, manifest


def _config_dict(config: DataConfig) -> dict:
    return {"count": config.count, "test_fraction": config.test_fraction, "seed": config.seed,
            "delta": config.delta, "augment": config.augment, "labels": list(config.labels)}


def save_dataset(out_dir, train: Dataset, test: Dataset | None, manifest: dict) -> None:
    out = Path(out_dir)
    write_blob(out / "train.bin", train.to_arrays())
    if test is not None:
        write_blob(out / "test.bin", test.to_arrays())
    write_json(out / "manifest.json", manifest)


def load_split(data_dir, split: str = "train") -> Dataset:
    return Dataset.from_arrays(read_blob(Path(data_dir) / f"{split}.bin"))


def load_manifest(data_dir) -> dict:
    return read_json(Path(data_dir) / "manifest.json")


def validate_dataset(ds: Dataset, tree: KinematicTree = DEFAULT_TREE, delta: float = CONTACT_DELTA,
                     chunk: int = 256, require_contact: bool = True) -> list[str]:
    """Re-pose every sample and check the stored contacts; returns a list of problems.

    Generated (rather than synthesized) samples may legitimately lack contact; pass
    ``require_contact=False`` for those.
    """
    problems = []
    if ds.contacts.shape[1:] != (tree.n_reg, tree.n_reg):
        return [f"contact maps have shape {ds.contacts.shape[1:]}, expected {(tree.n_reg, tree.n_reg)}"]
    if not (np.all(np.isfinite(ds.x_h)) and np.all(np.isfinite(ds.x_p))):
        problems.append("non-finite parameters")
    for s in range(0, len(ds), chunk):
        sl = slice(s, s + chunk)
        gt = ground_truth_contacts(pose(ds.x_h[sl], tree), pose(ds.x_p[sl], tree), delta)
        for k in np.nonzero(np.any(gt != ds.contacts[sl], axis=(1, 2)))[0]:
            problems.append(f"sample {s + k}: stored contact map disagrees with geometry")
        for k in np.nonzero(gt.sum(axis=(1, 2)) < 1)[0] if require_contact else ():
            problems.append(f"sample {s + k}: no contact at delta={delta}")
    if np.any((ds.labels < 0) | (ds.labels >= len(LABEL_NAMES))):
        problems.append("label out of range")
    return problems
