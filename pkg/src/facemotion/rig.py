"""FLAME-style parametric rig.

Vertices are ``T + B_S(beta) + B_E(psi)`` posed by linear blend skinning over
a fixed five-joint chain ``head -> neck -> {jaw, eye_l, eye_r}``. Pose
correctives are not modelled. Joint rest positions are rig constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from facemotion.errors import DomainError, ParameterError
from facemotion.rotations import axis_angle_to_matrix

JOINT_NAMES = ("head", "neck", "jaw", "eye_l", "eye_r")
JOINT_PARENTS = (-1, 0, 1, 1, 1)
ROTATION_FIELDS = ("theta_head", "theta_neck", "theta_jaw", "theta_eye_l", "theta_eye_r")

RIG_SCHEMA = "facemotion.rig"
RIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class JointSpec:
    name: str
    position: tuple[float, float, float]
    parent: int


@dataclass(frozen=True, eq=False)
class RigDefinition:
    """Template, blendshape bases, joint tree, skin weights and keypoints.

    ``shape_basis`` and ``expr_basis`` are ``(N, 3, B)`` arrays. Optional
    metadata (vertex labels, expression-column regions, wireframe edges) is
    carried for rendering and metrics; it does not affect the forward model.
    """

    template_vertices: np.ndarray
    shape_basis: np.ndarray
    expr_basis: np.ndarray
    joints: tuple[JointSpec, ...]
    skin_weights: np.ndarray
    keypoint_indices: np.ndarray
    vertex_labels: tuple[str, ...] = ()
    expr_regions: tuple[str, ...] = ()
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    def __post_init__(self):
        for name in ("template_vertices", "shape_basis", "expr_basis", "skin_weights"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "keypoint_indices", np.asarray(self.keypoint_indices, dtype=int))
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=int).reshape(-1, 2))
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "vertex_labels", tuple(self.vertex_labels))
        object.__setattr__(self, "expr_regions", tuple(self.expr_regions))
        self.validate()

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def n_expr(self) -> int:
        return self.expr_basis.shape[2]

    @property
    def n_keypoints(self) -> int:
        return self.keypoint_indices.shape[0]

    @property
    def joint_positions(self) -> np.ndarray:
        return np.array([j.position for j in self.joints], dtype=float)

    def validate(self) -> None:
        t = self.template_vertices
        if t.ndim != 2 or t.shape[1] != 3:
            raise ParameterError(f"template must be (N, 3), got {t.shape}")
        n = t.shape[0]
        for name, basis in (("shape_basis", self.shape_basis), ("expr_basis", self.expr_basis)):
            if basis.ndim != 3 or basis.shape[:2] != (n, 3):
                raise ParameterError(f"{name} must be (N, 3, B), got {basis.shape}")
        if len(self.joints) != 5:
            raise ParameterError("rig needs exactly five joints")
        parents = tuple(j.parent for j in self.joints)
        if parents != JOINT_PARENTS:
            raise ParameterError(f"joint parents must be {JOINT_PARENTS}, got {parents}")
        w = self.skin_weights
        if w.shape != (n, 5):
            raise ParameterError(f"skin weights must be (N, 5), got {w.shape}")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9):
            raise ParameterError("skin weight rows must be nonnegative and sum to 1")
        k = self.keypoint_indices
        if k.ndim != 1 or len(np.unique(k)) != len(k) or np.any(k < 0) or np.any(k >= n):
            raise ParameterError("keypoint indices must be distinct and within [0, N)")
        eye_rows = (w[:, 3] > 0) | (w[:, 4] > 0)
        if np.any(np.max(w[eye_rows][:, 3:], axis=1) != 1.0):
            raise ParameterError("eye-joint vertices must be rigidly bound to one eye")
        if self.vertex_labels and len(self.vertex_labels) != n:
            raise ParameterError("vertex_labels length must equal N")
        if self.expr_regions and len(self.expr_regions) != self.n_expr:
            raise ParameterError("expr_regions length must equal B_e")
        if not np.all(np.isfinite(t)):
            raise DomainError("template is not finite")

    def to_json_dict(self) -> dict:
        return {
            "schema": RIG_SCHEMA,
            "version": RIG_SCHEMA_VERSION,
            "template": self.template_vertices.tolist(),
            "shape_basis": self.shape_basis.tolist(),
            "expr_basis": self.expr_basis.tolist(),
            "joints": [
                {"name": j.name, "position": list(j.position), "parent": j.parent}
                for j in self.joints
            ],
            "skin_weights": self.skin_weights.tolist(),
            "keypoint_indices": self.keypoint_indices.tolist(),
            "vertex_labels": list(self.vertex_labels),
            "expr_regions": list(self.expr_regions),
            "edges": self.edges.tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RigDefinition":
        if doc.get("schema") != RIG_SCHEMA:
            raise ParameterError(f"not a rig document (schema={doc.get('schema')!r})")
        if doc.get("version") != RIG_SCHEMA_VERSION:
            raise ParameterError(f"unsupported rig schema version {doc.get('version')!r}")
        n = len(doc["template"])
        return cls(
            template_vertices=np.array(doc["template"], dtype=float).reshape(n, 3),
            shape_basis=np.array(doc["shape_basis"], dtype=float).reshape(n, 3, -1),
            expr_basis=np.array(doc["expr_basis"], dtype=float).reshape(n, 3, -1),
            joints=tuple(
                JointSpec(j["name"], tuple(float(x) for x in j["position"]), int(j["parent"]))
                for j in doc["joints"]
            ),
            skin_weights=np.array(doc["skin_weights"], dtype=float),
            keypoint_indices=np.array(doc["keypoint_indices"], dtype=int),
            vertex_labels=tuple(doc.get("vertex_labels", ())),
            expr_regions=tuple(doc.get("expr_regions", ())),
            edges=np.array(doc.get("edges", []), dtype=int).reshape(-1, 2),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "RigDefinition":
        return cls.from_json_dict(json.loads(Path(path).read_text()))

    def subset(self, vertex_ids) -> "RigDefinition":
        """Rig restricted to ``vertex_ids``; those become the keypoints in order."""
        ids = np.asarray(vertex_ids, dtype=int)
        return RigDefinition(
            template_vertices=self.template_vertices[ids],
            shape_basis=self.shape_basis[ids],
            expr_basis=self.expr_basis[ids],
            joints=self.joints,
            skin_weights=self.skin_weights[ids],
            keypoint_indices=np.arange(len(ids)),
            expr_regions=self.expr_regions,
        )


@dataclass(frozen=True, eq=False)
class FlameParams:
    """Shape, expression and the five joint rotations (axis-angle, radians)."""

    beta: np.ndarray
    psi: np.ndarray
    theta_head: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta_neck: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta_jaw: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta_eye_l: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta_eye_r: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float).reshape(-1))
        for name in ROTATION_FIELDS:
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != (3,):
                raise ParameterError(f"{name} must be a 3-vector, got shape {value.shape}")
            object.__setattr__(self, name, value)

    @classmethod
    def zeros(cls, rig: RigDefinition) -> "FlameParams":
        return cls(beta=np.zeros(rig.n_shape), psi=np.zeros(rig.n_expr))

    def rotations(self) -> np.ndarray:
        return np.stack([getattr(self, name) for name in ROTATION_FIELDS])

    def replace(self, **changes) -> "FlameParams":
        values = {name: getattr(self, name) for name in ("beta", "psi") + ROTATION_FIELDS}
        values.update(changes)
        return FlameParams(**values)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.psi, self.rotations().reshape(-1)])

    @classmethod
    def from_vector(cls, vec, n_shape: int, n_expr: int) -> "FlameParams":
        vec = np.asarray(vec, dtype=float)
        rots = vec[n_shape + n_expr:].reshape(5, 3)
        return cls(vec[:n_shape], vec[n_shape:n_shape + n_expr], *rots)

    def to_json_dict(self) -> dict:
        doc = {"beta": self.beta.tolist(), "psi": self.psi.tolist()}
        doc.update({name: getattr(self, name).tolist() for name in ROTATION_FIELDS})
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FlameParams":
        rots = {name: doc.get(name, [0.0, 0.0, 0.0]) for name in ROTATION_FIELDS}
        return cls(beta=doc["beta"], psi=doc["psi"], **rots)

    def check(self, rig: RigDefinition) -> None:
        if self.beta.shape != (rig.n_shape,):
            raise ParameterError(f"beta has {self.beta.size} entries, rig expects {rig.n_shape}")
        if self.psi.shape != (rig.n_expr,):
            raise ParameterError(f"psi has {self.psi.size} entries, rig expects {rig.n_expr}")
        if not np.all(np.isfinite(self.to_vector())):
            raise DomainError("parameters contain non-finite values")


def shaped_vertices(rig: RigDefinition, beta, psi, vertex_ids=None) -> np.ndarray:
    """Unposed mesh ``T + B_S(beta) + B_E(psi)``."""
    if vertex_ids is None:
        t, s, e = rig.template_vertices, rig.shape_basis, rig.expr_basis
    else:
        t, s, e = (rig.template_vertices[vertex_ids], rig.shape_basis[vertex_ids],
                   rig.expr_basis[vertex_ids])
    return t + s @ beta + e @ psi


def joint_world_transforms(rig: RigDefinition, params: FlameParams):
    """World rotation and posed position of every joint.

    Returns ``(rotations (5, 3, 3), positions (5, 3))``; a vertex bound
    rigidly to joint ``j`` maps as ``R_j @ (v - J_j) + P_j``.
    """
    rest = rig.joint_positions
    local = [axis_angle_to_matrix(r) for r in params.rotations()]
    world_r = np.zeros((5, 3, 3))
    world_p = np.zeros((5, 3))
    for j, parent in enumerate(JOINT_PARENTS):
        if parent < 0:
            world_r[j] = local[j]
            world_p[j] = rest[j]
        else:
            world_r[j] = world_r[parent] @ local[j]
            world_p[j] = world_r[parent] @ (rest[j] - rest[parent]) + world_p[parent]
    return world_r, world_p


def joint_offsets(rig: RigDefinition, params: FlameParams):
    """World rotations ``R_j`` and offsets ``o_j`` with ``x -> R_j @ x + o_j``.

    Offsets are accumulated down the chain as
    ``o_j = R_parent @ (J_j - R_local @ J_j) + o_parent``, so a joint whose
    chain is at rest gets exactly ``o_j = 0``.
    """
    rest = rig.joint_positions
    world_r = np.zeros((5, 3, 3))
    offsets = np.zeros((5, 3))
    for j, (parent, rotvec) in enumerate(zip(JOINT_PARENTS, params.rotations())):
        local = axis_angle_to_matrix(rotvec)
        step = rest[j] - local @ rest[j]
        if parent < 0:
            world_r[j], offsets[j] = local, step
        else:
            world_r[j] = world_r[parent] @ local
            offsets[j] = world_r[parent] @ step + offsets[parent]
    return world_r, offsets


def blend_transforms(rig: RigDefinition, params: FlameParams, vertex_ids=None):
    """Per-vertex skinning matrices ``M_v`` and offsets ``b_v``.

    The posed vertex is ``M_v @ v + b_v`` for a shaped rest vertex ``v``.
    """
    world_r, offsets = joint_offsets(rig, params)
    w = rig.skin_weights if vertex_ids is None else rig.skin_weights[vertex_ids]
    return np.einsum("vj,jab->vab", w, world_r), w @ offsets


def _posed(rig, params, vertex_ids=None):
    params.check(rig)
    shaped = shaped_vertices(rig, params.beta, params.psi, vertex_ids)
    if not np.any(params.rotations()):
        return shaped
    # displacement form: joints at rest contribute exactly nothing
    world_r, offsets = joint_offsets(rig, params)
    w = rig.skin_weights if vertex_ids is None else rig.skin_weights[vertex_ids]
    active = np.flatnonzero(np.any(world_r != np.eye(3), axis=(1, 2)) | np.any(offsets != 0, axis=1))
    moved = np.einsum("vb,jab->vja", shaped, world_r[active] - np.eye(3)) + offsets[active]
    return shaped + np.einsum("vj,vja->va", w[:, active], moved)


def flame_forward(rig: RigDefinition, params: FlameParams) -> np.ndarray:
    """All ``N`` posed vertices. Zero rotations return the shaped mesh as is."""
    return _posed(rig, params)


def keypoints_canonical(rig: RigDefinition, beta) -> np.ndarray:
    """Keypoints of the shaped mesh with zero expression and pose."""
    params = FlameParams(beta=beta, psi=np.zeros(rig.n_expr))
    return _posed(rig, params, rig.keypoint_indices)


def keypoints_expression(rig: RigDefinition, beta, psi, theta_jaw=None,
                         theta_eye_l=None, theta_eye_r=None) -> np.ndarray:
    """Keypoints with expression, jaw and eyes applied; head and neck at rest."""
    zero = np.zeros(3)
    params = FlameParams(
        beta=beta,
        psi=psi,
        theta_jaw=zero if theta_jaw is None else theta_jaw,
        theta_eye_l=zero if theta_eye_l is None else theta_eye_l,
        theta_eye_r=zero if theta_eye_r is None else theta_eye_r,
    )
    return _posed(rig, params, rig.keypoint_indices)


def keypoints_full(rig: RigDefinition, params: FlameParams) -> np.ndarray:
    return _posed(rig, params, rig.keypoint_indices)


def expression_part(params: FlameParams) -> FlameParams:
    """Copy of ``params`` with head and neck rotations zeroed."""
    return params.replace(theta_head=np.zeros(3), theta_neck=np.zeros(3))


# --------------------------------------------------------------------------
# synthetic rig

_EXPR_CENTERS = (
    ("mouth", (0.0, -0.45, 0.80)),
    ("brow", (-0.30, 0.42, 0.78)),
    ("brow", (0.30, 0.42, 0.78)),
    ("eye", (-0.30, 0.28, 0.80)),
    ("eye", (0.30, 0.28, 0.80)),
    ("cheek", (-0.45, -0.15, 0.65)),
    ("cheek", (0.45, -0.15, 0.65)),
    ("nose", (0.0, 0.0, 0.95)),
    ("chin", (0.0, -0.75, 0.60)),
    ("forehead", (0.0, 0.70, 0.70)),
)

_HEAD_CENTER = np.array([0.0, 0.1, 0.0])
_HEAD_RADII = np.array([0.78, 1.0, 0.88])
_EYE_CENTERS = np.array([[-0.30, 0.20, 0.74], [0.30, 0.20, 0.74]])
_EYE_RADIUS = 0.11
_JOINTS = (
    JointSpec("head", (0.0, -1.20, -0.10), -1),
    JointSpec("neck", (0.0, -0.70, -0.10), 0),
    JointSpec("jaw", (0.0, -0.05, -0.15), 1),
    JointSpec("eye_l", tuple(_EYE_CENTERS[0]), 1),
    JointSpec("eye_r", tuple(_EYE_CENTERS[1]), 1),
)


def _unit_vectors(rng, count):
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _farthest_point_order(points, count, start):
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def make_synthetic_rig(seed: int = 0, n_vertices: int = 400, n_shape: int = 10,
                       n_expr: int = 10, n_keypoints: int = 49) -> RigDefinition:
    """Deterministic head-shaped point-cloud rig.

    Regions: two rigid eyeballs, a neck column, a jaw region on the lower
    front face and the rest of the head. Keypoints take up to three points per
    eyeball and spread the remainder over the front of the face by
    farthest-point sampling.
    """
    if min(n_vertices, n_shape, n_expr, n_keypoints) <= 0:
        raise ParameterError("rig dimensions must be positive")
    if n_keypoints > n_vertices:
        raise ParameterError(f"K={n_keypoints} exceeds N={n_vertices}")
    rng = np.random.default_rng(seed)

    n_eye = max(3, int(round(0.03 * n_vertices))) if n_vertices >= 16 else 0
    n_neck = int(round(0.12 * n_vertices))
    n_head = n_vertices - 2 * n_eye - n_neck
    if n_head < 1:
        raise ParameterError("n_vertices too small for a head rig")

    # half of the head samples concentrate on the face
    n_front = n_head // 2
    dirs = _unit_vectors(rng, n_head)
    dirs[:n_front, 2] = np.abs(dirs[:n_front, 2]) + 0.35
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    head = _HEAD_CENTER + dirs * _HEAD_RADII

    ang = rng.uniform(0.0, 2.0 * np.pi, n_neck)
    neck = np.stack([0.35 * np.cos(ang), rng.uniform(-1.35, -0.8, n_neck),
                     -0.10 + 0.35 * np.sin(ang)], axis=1)

    eyes = []
    for c in _EYE_CENTERS:
        d = _unit_vectors(rng, n_eye)
        d[:, 2] = np.abs(d[:, 2]) + 1.0
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        eyes.append(c + _EYE_RADIUS * d)

    template = np.concatenate([head, neck] + eyes, axis=0)
    labels = ["head"] * n_head + ["neck"] * n_neck + ["eye_l"] * n_eye + ["eye_r"] * n_eye
    x, y, z = template.T
    for i in range(n_head):
        if z[i] > 0.25 and y[i] < -0.15:
            labels[i] = "jaw"
        elif z[i] > 0.25:
            labels[i] = "face"

    weights = np.zeros((n_vertices, 5))
    is_eye_l = np.array([lab == "eye_l" for lab in labels])
    is_eye_r = np.array([lab == "eye_r" for lab in labels])
    body = ~(is_eye_l | is_eye_r)
    root = np.clip((-0.40 - y) / 0.9, 0.0, 1.0)
    jaw = np.clip((-0.10 - y) / 0.35, 0.0, 1.0) * np.clip(z / 0.3, 0.0, 1.0)
    jaw = np.where(np.array([lab == "jaw" for lab in labels]), jaw, 0.0)
    weights[body, 0] = root[body]
    weights[body, 2] = (jaw * (1.0 - root))[body]
    weights[body, 1] = 1.0 - weights[body, 0] - weights[body, 2]
    weights[is_eye_l, 3] = 1.0
    weights[is_eye_r, 4] = 1.0
    weights /= weights.sum(axis=1, keepdims=True)

    shape_basis = np.zeros((n_vertices, 3, n_shape))
    for b in range(n_shape):
        centers = _HEAD_CENTER + _unit_vectors(rng, 4) * _HEAD_RADII
        amps = rng.normal(size=(4, 3))
        d2 = ((template[:, None, :] - centers[None]) ** 2).sum(-1)
        fld = np.exp(-d2 / (2 * 0.5 ** 2)) @ amps
        for eye_mask, c in ((is_eye_l, _EYE_CENTERS[0]), (is_eye_r, _EYE_CENTERS[1])):
            d2c = ((c - centers) ** 2).sum(-1)
            fld[eye_mask] = np.exp(-d2c / (2 * 0.5 ** 2)) @ amps
        shape_basis[:, :, b] = 0.06 * fld / np.abs(fld).max()

    expr_basis = np.zeros((n_vertices, 3, n_expr))
    regions = []
    front = np.clip(z / 0.3, 0.0, 1.0) * body
    for b in range(n_expr):
        region, center = _EXPR_CENTERS[b % len(_EXPR_CENTERS)]
        center = np.asarray(center) + rng.normal(scale=0.03, size=3)
        amp = rng.normal(size=3)
        amp /= np.linalg.norm(amp)
        d2 = ((template - center) ** 2).sum(-1)
        expr_basis[:, :, b] = 0.12 * (np.exp(-d2 / (2 * 0.25 ** 2)) * front)[:, None] * amp
        regions.append(region)

    kp = []
    n_eye_kp = min(3, n_keypoints // 8, n_eye)
    eye_start = n_head + n_neck
    for e in range(2):
        ids = np.arange(eye_start + e * n_eye, eye_start + (e + 1) * n_eye)
        kp.extend(ids[np.argsort(-template[ids, 2], kind="stable")[:n_eye_kp]].tolist())
    rest = n_keypoints - len(kp)
    candidates = np.flatnonzero(body & (z > 0.25))
    if len(candidates) < rest:
        candidates = np.flatnonzero(body)
    if len(candidates) < rest:
        candidates = np.setdiff1d(np.arange(n_vertices), kp)
    nose = int(np.argmax(template[candidates, 2]))
    order = _farthest_point_order(template[candidates], rest, nose)
    kp.extend(candidates[order].tolist())

    k_nn = min(4, n_vertices)
    _, nbrs = cKDTree(template).query(template, k=k_nn)
    edges = sorted({(min(i, int(j)), max(i, int(j)))
                    for i in range(n_vertices) for j in np.atleast_1d(nbrs[i])[1:]})

    return RigDefinition(
        template_vertices=template,
        shape_basis=shape_basis,
        expr_basis=expr_basis,
        joints=_JOINTS,
        skin_weights=weights,
        keypoint_indices=np.array(kp, dtype=int),
        vertex_labels=tuple(labels),
        expr_regions=tuple(regions),
        edges=np.array(edges, dtype=int).reshape(-1, 2),
    )
