"""Capsule-skeleton body: kinematic tree, differentiable forward kinematics, SDF.

Coordinates are y-up, the body faces +z at rest and +x is the body's left.
Every non-root joint owns one capsule that starts at the joint and extends
along that joint's bone vector, so all joint rotations (including head,
wrists and ankles) move some surface.  Surface points are stored region-major:
``vertices[b, region, k, :]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PARAM_DIM = 54
NUM_JOINTS = 17
# BodyParams segments: translation, root rotation, body pose, hand pose
SEGMENTS = ((0, 3), (3, 6), (6, 48), (48, 54))
SEGMENT_NAMES = ("translation", "root_rotation", "body_pose", "hand_pose")

JOINT_NAMES = (
    "pelvis", "spine", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "r_shoulder", "r_elbow",
    "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle",
    "l_wrist", "r_wrist",
)
PARENTS = (-1, 0, 1, 2, 3, 2, 5, 2, 7, 0, 9, 10, 0, 12, 13, 6, 8)
# name of the capsule owned by each non-root joint, in joint order
CAPSULE_NAMES = (
    "abdomen", "chest", "neck", "head",
    "l_upperarm", "l_forearm", "r_upperarm", "r_forearm",
    "l_thigh", "l_shin", "l_foot", "r_thigh", "r_shin", "r_foot",
    "l_hand", "r_hand",
)
MIRROR_JOINTS = (0, 1, 2, 3, 4, 7, 8, 5, 6, 12, 13, 14, 9, 10, 11, 16, 15)

# right-side values are mirrored from the left ones (x -> -x)
_REST = {
    # joint: (offset from parent, bone vector, radius)
    "spine": ((0.0, 0.10, 0.0), (0.0, 0.22, 0.0), 0.12),
    "chest": ((0.0, 0.22, 0.0), (0.0, 0.22, 0.0), 0.13),
    "neck": ((0.0, 0.22, 0.0), (0.0, 0.10, 0.0), 0.05),
    "head": ((0.0, 0.10, 0.0), (0.0, 0.12, 0.0), 0.09),
    "l_shoulder": ((0.17, 0.17, 0.0), (0.28, 0.0, 0.0), 0.05),
    "l_elbow": ((0.28, 0.0, 0.0), (0.25, 0.0, 0.0), 0.04),
    "l_wrist": ((0.25, 0.0, 0.0), (0.15, 0.0, 0.0), 0.035),
    "l_hip": ((0.09, -0.05, 0.0), (0.0, -0.40, 0.0), 0.07),
    "l_knee": ((0.0, -0.40, 0.0), (0.0, -0.40, 0.0), 0.05),
    "l_ankle": ((0.0, -0.40, 0.0), (0.0, -0.04, 0.14), 0.04),
}
_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
_MIRROR = np.array([-1.0, 1.0, 1.0])


def _rest_table():
    offsets = np.zeros((NUM_JOINTS, 3))
    bones = np.zeros((NUM_JOINTS, 3))
    radii = np.zeros(NUM_JOINTS)
    for j, name in enumerate(JOINT_NAMES[1:], start=1):
        src = name.replace("r_", "l_", 1) if name.startswith("r_") else name
        off, bone, rad = _REST[src]
        sign = _MIRROR if name.startswith("r_") else 1.0
        offsets[j] = np.asarray(off) * sign
        bones[j] = np.asarray(bone) * sign
        radii[j] = rad
    return offsets, bones, radii


def _capsule_profile(n: int, length: float, radius: float, phase: float = 0.0):
    """Golden-angle spiral over a capsule whose axis is the local +e0 direction.

    Returns (axial position, radial distance, angle) per point, ordered along the axis.
    """
    total = np.pi * radius + length
    u = (np.arange(n) + 0.5) / n * total
    quarter = 0.5 * np.pi * radius
    h = np.empty(n)
    rho = np.empty(n)
    cap0 = u < quarter
    cap1 = u > quarter + length
    mid = ~(cap0 | cap1)
    th = u[cap0] / radius
    h[cap0] = -radius * np.cos(th)
    rho[cap0] = radius * np.sin(th)
    h[mid] = u[mid] - quarter
    rho[mid] = radius
    th = (u[cap1] - quarter - length) / radius
    h[cap1] = length + radius * np.sin(th)
    rho[cap1] = radius * np.cos(th)
    ang = phase + np.arange(n) * _GOLDEN_ANGLE
    return h, rho, ang


def _frame(axis: np.ndarray):
    a = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return a, e1, e2


def _capsule_points(bone: np.ndarray, radius: float, n: int) -> np.ndarray:
    length = float(np.linalg.norm(bone))
    a, e1, e2 = _frame(bone)
    h, rho, ang = _capsule_profile(n, length, radius)
    return (h[:, None] * a + rho[:, None] * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2))


def _symmetric_capsule_points(bone: np.ndarray, radius: float, n: int) -> np.ndarray:
    """Point set closed under x -> -x, for capsules on the sagittal plane."""
    half = _capsule_points(bone, radius, n // 2)
    pts = np.empty((2 * (n // 2), 3))
    pts[0::2] = half
    pts[1::2] = half * _MIRROR
    return pts


@dataclass(frozen=True)
class KinematicTree:
    vertices_per_capsule: int = 32
    regions_per_capsule: int = 1

    def __post_init__(self):
        if self.vertices_per_capsule < 2 or self.vertices_per_capsule % 2:
            raise ValueError("vertices_per_capsule must be an even number >= 2")
        if self.vertices_per_capsule % self.regions_per_capsule:
            raise ValueError("regions_per_capsule must divide vertices_per_capsule")
        if (self.vertices_per_capsule // self.regions_per_capsule) < 1:
            raise ValueError("empty regions")

    parents = PARENTS
    joint_names = JOINT_NAMES

    @property
    def num_joints(self) -> int:
        return NUM_JOINTS

    @property
    def num_capsules(self) -> int:
        return NUM_JOINTS - 1

    @property
    def n_reg(self) -> int:
        return self.num_capsules * self.regions_per_capsule

    @property
    def verts_per_region(self) -> int:
        return self.vertices_per_capsule // self.regions_per_capsule

    @property
    def num_vertices(self) -> int:
        return self.num_capsules * self.vertices_per_capsule

    @cached_property
    def rest(self):
        return _rest_table()

    @property
    def offsets(self) -> np.ndarray:
        return self.rest[0]

    @property
    def bones(self) -> np.ndarray:
        return self.rest[1]

    @property
    def radii(self) -> np.ndarray:
        """Capsule radii, one per capsule (non-root joint order)."""
        return self.rest[2][1:]

    @cached_property
    def local_points(self) -> np.ndarray:
        """(num_capsules, vertices_per_capsule, 3) surface samples in each owner joint's frame."""
        n = self.vertices_per_capsule
        pts = np.zeros((self.num_capsules, n, 3))
        offsets, bones, radii = self.rest
        for j in range(1, NUM_JOINTS):
            name = JOINT_NAMES[j]
            if name.startswith("l_"):
                continue
            if name.startswith("r_"):
                pts[j - 1] = _capsule_points(bones[j], radii[j], n)
                pts[MIRROR_JOINTS[j] - 1] = pts[j - 1] * _MIRROR
            else:
                pts[j - 1] = _symmetric_capsule_points(bones[j], radii[j], n)
        return pts

    @cached_property
    def region_names(self) -> tuple[str, ...]:
        if self.regions_per_capsule == 1:
            return CAPSULE_NAMES
        return tuple(f"{c}_{k}" for c in CAPSULE_NAMES for k in range(self.regions_per_capsule))

    @cached_property
    def region_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_reg), self.verts_per_region)

    @cached_property
    def region_mirror(self) -> np.ndarray:
        """Region permutation induced by swapping left and right."""
        k = self.regions_per_capsule
        perm = np.empty(self.n_reg, dtype=np.int64)
        for c in range(self.num_capsules):
            mc = MIRROR_JOINTS[c + 1] - 1
            perm[c * k:(c + 1) * k] = np.arange(mc * k, (mc + 1) * k)
        return perm

    def region_index(self, name: str) -> int:
        return self.region_names.index(name)

    def validate(self) -> None:
        parents = np.asarray(self.parents)
        if (parents == -1).sum() != 1:
            raise ValueError("tree must have exactly one root")
        for j, p in enumerate(parents):
            if p >= j:
                raise ValueError(f"joint {j} has parent {p}: not topologically ordered")
        if np.any(self.radii <= 0):
            raise ValueError("capsule radii must be positive")


DEFAULT_TREE = KinematicTree()


@dataclass
class PosedBody:
    """Output of :func:`forward_kinematics` for a batch of bodies."""

    tree: KinematicTree
    rotations: Tensor  # (B, J, 3, 3) world rotation per joint
    joints: Tensor  # (B, J, 3) world position per joint
    vertices: Tensor  # (B, N_reg, m, 3)
    seg_start: np.ndarray  # (B, C, 3) capsule axis endpoints
    seg_end: np.ndarray

    @property
    def batch(self) -> int:
        return self.joints.shape[0]

    @property
    def vertex_array(self) -> np.ndarray:
        """(B, |V|, 3) plain array of the surface points."""
        v = self.vertices.data
        return v.reshape(v.shape[0], -1, 3)

    @property
    def region_ids(self) -> np.ndarray:
        return self.tree.region_ids

    def region_centers(self) -> Tensor:
        return ad.mean(self.vertices, axis=2)

    def region_vertices(self, region: int, index: int = 0) -> np.ndarray:
        if not 0 <= region < self.tree.n_reg:
            raise IndexError(f"region {region} outside [0, {self.tree.n_reg})")
        return self.vertices.data[index, region]

    def take(self, index: int) -> "PosedBody":
        """Single-body view (batch of one) of entry ``index``, detached."""
        sl = slice(index, index + 1)
        return PosedBody(self.tree, Tensor(self.rotations.data[sl]), Tensor(self.joints.data[sl]),
                         Tensor(self.vertices.data[sl]), self.seg_start[sl], self.seg_end[sl])


# K = sum_k r_k * _SKEW[k] reshaped to 3x3 gives the cross-product matrix of r
_SKEW = np.zeros((3, 9))
_SKEW[2, 1], _SKEW[1, 2] = -1.0, 1.0
_SKEW[2, 3], _SKEW[0, 5] = 1.0, -1.0
_SKEW[1, 6], _SKEW[0, 7] = -1.0, 1.0


def axis_angle_to_matrix(r) -> Tensor:
    """Rodrigues formula on (..., 3) axis-angle vectors, differentiable."""
    r = ad.as_tensor(r)
    lead = r.shape[:-1]
    s = ad.sum(ad.square(r), axis=-1, keepdims=True)
    a = ad.reshape(ad.rodrigues_sin_coef(s), lead + (1, 1))
    b = ad.reshape(ad.rodrigues_cos_coef(s), lead + (1, 1))
    K = ad.reshape(ad.matmul(ad.reshape(r, lead + (1, 3)), _SKEW), lead + (3, 3))
    rrT = ad.matmul(ad.reshape(r, lead + (3, 1)), ad.reshape(r, lead + (1, 3)))
    eye = np.eye(3)
    s4 = ad.reshape(s, lead + (1, 1))
    return eye + a * K + b * (rrT - s4 * eye)


def forward_kinematics(tree: KinematicTree, params) -> PosedBody:
    """Pose a batch of bodies; ``params`` is (B, 54) or (54,)."""
    x = ad.as_tensor(params)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != PARAM_DIM:
        raise ad.ShapeError(f"forward_kinematics: expected (B, {PARAM_DIM}) params, got {x.shape}")
    B = x.shape[0]
    trans = x[:, 0:3]
    rot_local = axis_angle_to_matrix(ad.reshape(x[:, 3:PARAM_DIM], (B, NUM_JOINTS, 3)))
    offsets = tree.offsets
    world_r = [rot_local[:, 0]]
    world_p = [trans]
    for j in range(1, NUM_JOINTS):
        p = tree.parents[j]
        world_r.append(ad.matmul(world_r[p], rot_local[:, j]))
        step = ad.reshape(ad.matmul(world_r[p], offsets[j].reshape(3, 1)), (B, 3))
        world_p.append(world_p[p] + step)
    rotations = ad.stack(world_r, axis=1)
    joints = ad.stack(world_p, axis=1)

    owner_r = rotations[:, 1:]
    owner_p = joints[:, 1:]
    local_t = np.swapaxes(tree.local_points, -1, -2)  # (C, 3, n)
    verts = ad.transpose(ad.matmul(owner_r, local_t), (0, 1, 3, 2))
    verts = verts + ad.reshape(owner_p, (B, tree.num_capsules, 1, 3))
    verts = ad.reshape(verts, (B, tree.n_reg, tree.verts_per_region, 3))

    seg_start = owner_p.data
    seg_end = seg_start + np.einsum("bcij,cj->bci", owner_r.data, tree.bones[1:])
    return PosedBody(tree, rotations, joints, verts, seg_start, seg_end)


def pose(params, tree: KinematicTree = DEFAULT_TREE) -> PosedBody:
    """Non-differentiable forward kinematics."""
    with ad.no_grad():
        return forward_kinematics(tree, np.asarray(params, dtype=float))


# ---------------------------------------------------------------- distances


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` (..., 3) to segments [a, b] (..., 3), broadcasting."""
    ab = b - a
    ap = p - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.clip(np.sum(ap * ab, axis=-1) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def capsule_sdf(points, body: PosedBody, index: int | None = None) -> np.ndarray:
    """Signed distance from points to the union of a body's capsules.

    ``points`` is (N, 3) scored against body ``index`` (default 0), or (B, N, 3)
    scored against the whole batch when ``index`` is None.
    """
    pts = np.asarray(points, dtype=float)
    radii = body.tree.radii
    if pts.ndim == 2:
        i = 0 if index is None else index
        d = point_segment_distance(pts[:, None, :], body.seg_start[i][None], body.seg_end[i][None])
        return np.min(d - radii, axis=-1)
    if pts.shape[0] != body.batch:
        raise ad.ShapeError(f"capsule_sdf: {pts.shape[0]} point sets for {body.batch} bodies")
    d = point_segment_distance(pts[:, :, None, :], body.seg_start[:, None], body.seg_end[:, None])
    return np.min(d - radii, axis=-1)


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances between point sets (..., n, 3) and (..., m, 3)."""
    diff = a[..., :, None, :] - b[..., None, :, :]
    return np.sum(diff * diff, axis=-1)


def region_min_distance(body_a: PosedBody, r_i: int, body_b: PosedBody, r_j: int,
                        index_a: int = 0, index_b: int = 0) -> float:
    va = body_a.region_vertices(r_i, index_a)
    vb = body_b.region_vertices(r_j, index_b)
    return float(np.sqrt(np.min(pairwise_sq_dists(va, vb))))


def region_distance_matrix(body_a: PosedBody, body_b: PosedBody, chunk: int = 4) -> np.ndarray:
    """(B, N_reg, N_reg) min vertex distance between every region of a and of b."""
    va = body_a.vertices.data
    vb = body_b.vertices.data
    B, R, m, _ = va.shape
    Rb, mb = vb.shape[1], vb.shape[2]
    fa = va.reshape(B, R * m, 3)
    fb = vb.reshape(B, Rb * mb, 3)
    out = np.empty((B, R, Rb))
    for s in range(0, B, chunk):
        d2 = pairwise_sq_dists(fa[s:s + chunk], fb[s:s + chunk])
        out[s:s + chunk] = d2.reshape(-1, R, m, Rb, mb).min(axis=(2, 4))
    return np.sqrt(out)


# ---------------------------------------------------------------- params helpers


def segment_of(i: int) -> int:
    for k, (lo, hi) in enumerate(SEGMENTS):
        if lo <= i < hi:
            return k
    raise IndexError(i)


def mirror_params(x: np.ndarray) -> np.ndarray:
    """Reflect body params across the x = 0 plane and swap left/right joints."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    out[..., 0] = -x[..., 0]
    out[..., 1:3] = x[..., 1:3]
    rots = x[..., 3:].reshape(x.shape[:-1] + (NUM_JOINTS, 3))
    refl = np.empty_like(rots)
    refl[..., 0] = rots[..., 0]
    refl[..., 1:] = -rots[..., 1:]
    refl = refl[..., list(MIRROR_JOINTS), :]
    out[..., 3:] = refl.reshape(x.shape[:-1] + (NUM_JOINTS * 3,))
    return out


# ---------------------------------------------------------------- export


def body_to_dict(body: PosedBody, index: int = 0) -> dict:
    tree = body.tree
    return {
        "joints": {name: body.joints.data[index, j].tolist() for j, name in enumerate(JOINT_NAMES)},
        "vertices": body.vertex_array[index].tolist(),
        "region_ids": tree.region_ids.tolist(),
        "region_names": list(tree.region_names),
    }


def export_json(body: PosedBody, index: int = 0) -> str:
    return json.dumps(body_to_dict(body, index), indent=1)


def obj_lines(body: PosedBody, index: int = 0, tag: str = "body") -> list[str]:
    tree = body.tree
    verts = body.vertices.data[index]
    lines = [f"o {tag}"]
    for r in range(tree.n_reg):
        lines.append(f"# region {r} {tree.region_names[r]}")
        lines.append(f"g {tag}_{tree.region_names[r]}")
        lines.extend(f"v {p[0]:.9f} {p[1]:.9f} {p[2]:.9f}" for p in verts[r])
    return lines


def export_obj(body: PosedBody, path, index: int = 0) -> None:
    from .serialization import atomic_write_text

    atomic_write_text(Path(path), "\n".join(obj_lines(body, index)) + "\n")
