"""URDF parsing, virtual-joint augmentation, forward kinematics, Jacobians.

A loaded model is a floating-base kinematic tree.  Six virtual wrist joints
(three prismatic, three revolute) are inserted between an implicit world
frame and the URDF root link, so the base pose is optimized like any other
joint.  Configuration vector layout::

    q = [x, y, z, roll, pitch, yaw, actuated joints in URDF order...]

Wrist convention (load-bearing for stored grasp configurations): the wrist
transform is a translation by (x, y, z) followed by the rotation
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)`` — the standard URDF rpy convention.

Every leaf link of the source URDF additionally receives a fixed-offset
virtual extension link along the parent's local +x axis, so translation-only
link targets still constrain fingertip orientation.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, StructureError, UrdfError

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
FIXED = "fixed"
VIRTUAL_PRISMATIC = "virtual_prismatic"
VIRTUAL_REVOLUTE = "virtual_revolute"

WORLD = "world"

VIRTUAL_TRANSLATION_LIMIT = 10.0  # meters, generous tabletop bound
VIRTUAL_ROTATION_LIMIT = math.pi

_PRISMATIC_KINDS = (PRISMATIC, VIRTUAL_PRISMATIC)
_REVOLUTE_KINDS = (REVOLUTE, VIRTUAL_REVOLUTE)

_AXES = {"x": np.array([1.0, 0.0, 0.0]),
         "y": np.array([0.0, 1.0, 0.0]),
         "z": np.array([0.0, 0.0, 1.0])}


def matrix_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation matrix Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def rpy_from_matrix(rot: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`matrix_from_rpy`; pitch taken in [-pi/2, pi/2]."""
    pitch = math.asin(max(-1.0, min(1.0, -rot[2, 0])))
    if abs(rot[2, 0]) < 1.0 - 1e-12:
        roll = math.atan2(rot[2, 1], rot[2, 2])
        yaw = math.atan2(rot[1, 0], rot[0, 0])
    else:
        # gimbal lock: fold yaw into roll
        roll = math.atan2(-rot[1, 2], rot[1, 1])
        yaw = 0.0
    return roll, pitch, yaw


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    t = 1.0 - c
    return np.array([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])


@dataclass(frozen=True)
class JointSpec:
    """One edge of the kinematic tree.

    ``axis`` is a unit vector in the joint (child-link) frame; ``origin`` is
    the 4x4 transform from the parent link frame to the joint frame.  Fixed
    joints carry a zero axis and ``limits == (0.0, 0.0)``.
    """

    name: str
    kind: str
    axis: np.ndarray
    origin: np.ndarray
    limits: tuple[float, float]
    parent_link: str
    child_link: str

    @property
    def movable(self) -> bool:
        return self.kind != FIXED


@dataclass(frozen=True)
class LinkPoseSet:
    """World pose per link: rotation (3x3, proper) and translation (3,).

    ``fallback_links`` flags links whose rotation was not independently
    estimated (degenerate registration fallback); empty for FK output.
    """

    rotations: dict[str, np.ndarray]
    translations: dict[str, np.ndarray]
    fallback_links: frozenset[str] = frozenset()

    def __contains__(self, link: str) -> bool:
        return link in self.rotations

    @property
    def links(self) -> list[str]:
        return list(self.rotations)

    def rotation(self, link: str) -> np.ndarray:
        return self.rotations[link]

    def translation(self, link: str) -> np.ndarray:
        return self.translations[link]

    def transform(self, link: str) -> np.ndarray:
        t = np.eye(4)
        t[:3, :3] = self.rotations[link]
        t[:3, 3] = self.translations[link]
        return t

    def to_json_dict(self) -> dict:
        return {
            link: {"R": [float(v) for v in self.rotations[link].ravel()],
                   "x": [float(v) for v in self.translations[link]]}
            for link in self.rotations
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "LinkPoseSet":
        rots = {k: np.array(v["R"], dtype=float).reshape(3, 3) for k, v in data.items()}
        trans = {k: np.array(v["x"], dtype=float) for k, v in data.items()}
        return cls(rots, trans)


class KinematicModel:
    """Immutable augmented kinematic tree.

    Attributes
    ----------
    links : tuple of str
        All link names in topological order (parents before children),
        beginning with the five intermediate virtual wrist links.
    joints : tuple of JointSpec
        All joints, including the six virtual wrist joints and the fixed
        tip-extension joints.
    dof_index : dict
        Movable joint name -> configuration index.  Indices 0..5 are the
        wrist (x, y, z, roll, pitch, yaw).
    n_dof : int
        6 + number of actuated URDF joints.
    lower, upper : ndarray (n_dof,)
        Joint limits.
    tip_links : tuple of str
        The appended virtual tip-extension links.
    canonical_clouds : dict or None
        Per-link canonical point arrays, attached via :meth:`with_clouds`.
    """

    def __init__(self, links, joints, dof_index, tip_links, canonical_clouds=None):
        self.links: tuple[str, ...] = tuple(links)
        self.joints: tuple[JointSpec, ...] = tuple(joints)
        self.dof_index: dict[str, int] = dict(dof_index)
        self.n_dof: int = len(self.dof_index)
        self.tip_links: tuple[str, ...] = tuple(tip_links)
        self.canonical_clouds = canonical_clouds
        self._build_tables()

    def _build_tables(self):
        by_child = {j.child_link: j for j in self.joints}
        if len(by_child) != len(self.joints):
            raise StructureError("a link has more than one parent joint")
        self._joint_by_child = by_child
        self._link_index = {name: i for i, name in enumerate(self.links)}

        lower = np.zeros(self.n_dof)
        upper = np.zeros(self.n_dof)
        self._dof_axis = np.zeros((self.n_dof, 3))
        self._dof_child = np.full(self.n_dof, -1, dtype=int)
        self._dof_prismatic = np.zeros(self.n_dof, dtype=bool)
        for j in self.joints:
            if not j.movable:
                continue
            d = self.dof_index[j.name]
            lower[d], upper[d] = j.limits
            self._dof_axis[d] = j.axis
            self._dof_child[d] = self._link_index[j.child_link]
            self._dof_prismatic[d] = j.kind in _PRISMATIC_KINDS
        self.lower = lower
        self.upper = upper
        self.lower.flags.writeable = False
        self.upper.flags.writeable = False

        # per-link parent index and local joint parameters, in `links` order
        n = len(self.links)
        self._parent = np.full(n, -1, dtype=int)
        self._origin_rot = np.zeros((n, 3, 3))
        self._origin_trans = np.zeros((n, 3))
        self._kind = np.zeros(n, dtype=int)  # 0 fixed, 1 revolute, 2 prismatic
        self._axis = np.zeros((n, 3))
        self._dof = np.full(n, -1, dtype=int)
        for i, name in enumerate(self.links):
            j = by_child.get(name)
            if j is None:
                raise StructureError(f"link '{name}' is not connected to the tree")
            if j.parent_link != WORLD:
                if j.parent_link not in self._link_index:
                    raise StructureError(f"joint '{j.name}' has unknown parent "
                                         f"'{j.parent_link}'")
                p = self._link_index[j.parent_link]
                if p >= i:
                    raise StructureError("links are not topologically ordered")
                self._parent[i] = p
            self._origin_rot[i] = j.origin[:3, :3]
            self._origin_trans[i] = j.origin[:3, 3]
            self._axis[i] = j.axis
            if j.kind in _REVOLUTE_KINDS:
                self._kind[i] = 1
            elif j.kind in _PRISMATIC_KINDS:
                self._kind[i] = 2
            if j.movable:
                self._dof[i] = self.dof_index[j.name]

        # dofs on the root->link path, as a boolean mask per link
        self._path_mask = np.zeros((n, self.n_dof), dtype=bool)
        for i in range(n):
            p = self._parent[i]
            if p >= 0:
                self._path_mask[i] = self._path_mask[p]
            if self._dof[i] >= 0:
                self._path_mask[i, self._dof[i]] = True

    def with_clouds(self, canonical_clouds: dict[str, np.ndarray]) -> "KinematicModel":
        """New model sharing structure with canonical clouds attached."""
        for link in canonical_clouds:
            if link not in self._link_index:
                raise ContractError(f"cloud for unknown link '{link}'")
        clouds = {k: np.ascontiguousarray(v, dtype=float) for k, v in canonical_clouds.items()}
        return KinematicModel(self.links, self.joints, self.dof_index,
                              self.tip_links, clouds)

    def parent_link(self, link: str) -> str | None:
        """Parent link name, or None when the parent is the world frame."""
        i = self._require_link(link)
        p = self._parent[i]
        return self.links[p] if p >= 0 else None

    def parent_joint(self, link: str) -> JointSpec:
        self._require_link(link)
        return self._joint_by_child[link]

    def _require_link(self, link: str) -> int:
        try:
            return self._link_index[link]
        except KeyError:
            raise ContractError(f"unknown link '{link}'") from None


def _parse_origin(elem) -> np.ndarray:
    xyz = [0.0, 0.0, 0.0]
    rpy = [0.0, 0.0, 0.0]
    if elem is not None:
        try:
            if "xyz" in elem.attrib:
                xyz = [float(v) for v in elem.attrib["xyz"].split()]
            if "rpy" in elem.attrib:
                rpy = [float(v) for v in elem.attrib["rpy"].split()]
        except ValueError as exc:
            raise UrdfError(f"origin has non-numeric xyz/rpy: {exc}") from exc
        if len(xyz) != 3 or len(rpy) != 3:
            raise UrdfError("origin xyz/rpy must have three components")
    t = np.eye(4)
    t[:3, :3] = matrix_from_rpy(*rpy)
    t[:3, 3] = xyz
    return t


def _translation(offset) -> np.ndarray:
    t = np.eye(4)
    t[:3, 3] = offset
    return t


def _virtual_wrist_joints(root_link: str) -> tuple[list[JointSpec], list[str], dict]:
    """Six wrist joints chained world -> root.

    Chain order is x, y, z, yaw, pitch, roll so the composed rotation is
    Rz(yaw) @ Ry(pitch) @ Rx(roll); configuration indices stay in
    (x, y, z, roll, pitch, yaw) order.
    """
    chain = [
        ("virtual_wrist_x", VIRTUAL_PRISMATIC, "x", 0),
        ("virtual_wrist_y", VIRTUAL_PRISMATIC, "y", 1),
        ("virtual_wrist_z", VIRTUAL_PRISMATIC, "z", 2),
        ("virtual_wrist_yaw", VIRTUAL_REVOLUTE, "z", 5),
        ("virtual_wrist_pitch", VIRTUAL_REVOLUTE, "y", 4),
        ("virtual_wrist_roll", VIRTUAL_REVOLUTE, "x", 3),
    ]
    joints = []
    inter_links = []
    dof_index = {}
    parent = WORLD
    for pos, (name, kind, axis, dof) in enumerate(chain):
        child = f"virtual_link_{name.rsplit('_', 1)[-1]}" if pos < 5 else root_link
        if pos < 5:
            inter_links.append(child)
        limit = (VIRTUAL_TRANSLATION_LIMIT if kind == VIRTUAL_PRISMATIC
                 else VIRTUAL_ROTATION_LIMIT)
        joints.append(JointSpec(name=name, kind=kind, axis=_AXES[axis].copy(),
                                origin=np.eye(4), limits=(-limit, limit),
                                parent_link=parent, child_link=child))
        dof_index[name] = dof
        parent = child
    return joints, inter_links, dof_index


def load_model(urdf_text: str, *, virtual_tip_extension_length: float = 0.02) -> KinematicModel:
    """Parse URDF XML text into an augmented kinematic model.

    Adds the six virtual wrist joints in front of the URDF root link and a
    fixed tip-extension link after every URDF leaf link, offset by
    ``virtual_tip_extension_length`` along the parent's local +x axis.

    Raises
    ------
    UrdfError
        Malformed XML; the message includes the offending line number.
    StructureError
        Kinematic loops, multiple roots, missing limits on movable joints,
        unsupported joint types.
    """
    try:
        root = ET.fromstring(urdf_text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise UrdfError(f"URDF parse error at line {line}, column {col}: "
                        f"{exc.msg if hasattr(exc, 'msg') else exc}") from exc

    link_names = [el.attrib["name"] for el in root.findall("link")]
    if len(set(link_names)) != len(link_names):
        raise StructureError("duplicate link names in URDF")
    if not link_names:
        raise StructureError("URDF defines no links")
    link_set = set(link_names)

    urdf_joints: list[JointSpec] = []
    for el in root.findall("joint"):
        name = el.attrib.get("name")
        kind = el.attrib.get("type")
        if name is None or kind is None:
            raise StructureError("joint element missing name or type")
        parent_el = el.find("parent")
        child_el = el.find("child")
        if parent_el is None or child_el is None:
            raise StructureError(f"joint '{name}' missing parent or child")
        parent = parent_el.attrib["link"]
        child = child_el.attrib["link"]
        for link in (parent, child):
            if link not in link_set:
                raise StructureError(f"joint '{name}' references unknown link '{link}'")
        origin = _parse_origin(el.find("origin"))

        if kind == "continuous":
            # no URDF limits by definition; treated as a full-turn revolute
            kind = REVOLUTE
            limits = (-math.pi, math.pi)
        elif kind in (REVOLUTE, PRISMATIC):
            limit_el = el.find("limit")
            if limit_el is None or "lower" not in limit_el.attrib or "upper" not in limit_el.attrib:
                raise StructureError(f"movable joint '{name}' has no limits")
            try:
                limits = (float(limit_el.attrib["lower"]), float(limit_el.attrib["upper"]))
            except ValueError as exc:
                raise StructureError(f"joint '{name}' has non-numeric limits: {exc}") from exc
            if limits[0] > limits[1]:
                raise StructureError(f"joint '{name}' has lower limit above upper")
        elif kind == FIXED:
            limits = (0.0, 0.0)
        else:
            raise StructureError(f"unsupported joint type '{kind}' on '{name}'")

        if kind == FIXED:
            axis = np.zeros(3)
        else:
            axis_el = el.find("axis")
            axis = np.array([1.0, 0.0, 0.0])
            if axis_el is not None:
                try:
                    axis = np.array([float(v) for v in axis_el.attrib["xyz"].split()])
                except ValueError as exc:
                    raise StructureError(f"joint '{name}' has non-numeric axis: {exc}") from exc
                if axis.shape != (3,):
                    raise StructureError(f"joint '{name}' axis must have three components")
            norm = np.linalg.norm(axis)
            if norm < 1e-12:
                raise StructureError(f"joint '{name}' has zero axis")
            axis = axis / norm

        urdf_joints.append(JointSpec(name=name, kind=kind, axis=axis, origin=origin,
                                     limits=limits, parent_link=parent, child_link=child))

    children_of: dict[str, list[JointSpec]] = {l: [] for l in link_names}
    child_links = set()
    for j in urdf_joints:
        children_of[j.parent_link].append(j)
        if j.child_link in child_links:
            raise StructureError(f"link '{j.child_link}' has two parent joints "
                                 "(kinematic loop)")
        child_links.add(j.child_link)

    roots = [l for l in link_names if l not in child_links]
    if len(roots) != 1:
        raise StructureError(f"expected a single root link, found {len(roots)}: {roots}")
    urdf_root = roots[0]

    # breadth-first order over the URDF tree, joints in document order
    ordered_links = []
    frontier = [urdf_root]
    while frontier:
        link = frontier.pop(0)
        ordered_links.append(link)
        frontier.extend(j.child_link for j in children_of[link])
    if len(ordered_links) != len(link_names):
        unreachable = sorted(link_set - set(ordered_links))
        raise StructureError(f"links not reachable from root '{urdf_root}': {unreachable}")

    wrist_joints, inter_links, dof_index = _virtual_wrist_joints(urdf_root)
    reserved = set(inter_links) | {WORLD}
    clash = reserved & link_set
    if clash:
        raise StructureError(f"URDF link names collide with virtual frames: {sorted(clash)}")

    next_dof = 6
    for j in urdf_joints:
        if j.movable:
            dof_index[j.name] = next_dof
            next_dof += 1

    leaves = [l for l in ordered_links if not children_of[l]]
    tip_joints = []
    tip_links = []
    for leaf in leaves:
        tip = f"{leaf}_tip_ext"
        if tip in link_set or tip in reserved:
            raise StructureError(f"virtual tip link name '{tip}' collides with URDF link")
        tip_joints.append(JointSpec(
            name=f"{leaf}_tip_ext_joint", kind=FIXED, axis=np.zeros(3),
            origin=_translation([virtual_tip_extension_length, 0.0, 0.0]),
            limits=(0.0, 0.0), parent_link=leaf, child_link=tip))
        tip_links.append(tip)

    all_links = inter_links + ordered_links + tip_links
    all_joints = wrist_joints + urdf_joints + tip_joints
    return KinematicModel(all_links, all_joints, dof_index, tip_links)


def as_config(model: KinematicModel, q) -> np.ndarray:
    """Validate and normalize a configuration vector."""
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_dof,):
        raise ContractError(f"configuration has shape {q.shape}, "
                            f"expected ({model.n_dof},)")
    if not np.all(np.isfinite(q)):
        raise ContractError("configuration contains non-finite entries")
    return q


def _fk_arrays(model: KinematicModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World rotation (L,3,3) and translation (L,3) per link, in link order."""
    n = len(model.links)
    rot = np.empty((n, 3, 3))
    trans = np.empty((n, 3))
    for i in range(n):
        p = model._parent[i]
        if p < 0:
            parent_rot = None
            jr = model._origin_rot[i]
            jt = model._origin_trans[i]
        else:
            parent_rot = rot[p]
            jr = parent_rot @ model._origin_rot[i]
            jt = parent_rot @ model._origin_trans[i] + trans[p]
        kind = model._kind[i]
        if kind == 0:
            rot[i] = jr
            trans[i] = jt
        elif kind == 1:
            rot[i] = jr @ axis_angle_matrix(model._axis[i], q[model._dof[i]])
            trans[i] = jt
        else:
            rot[i] = jr
            trans[i] = jt + jr @ (model._axis[i] * q[model._dof[i]])
    return rot, trans


def forward_kinematics(model: KinematicModel, q) -> LinkPoseSet:
    """World pose of every link at configuration q.

    Pure and deterministic: identical inputs give bitwise-identical poses.
    """
    q = as_config(model, q)
    rot, trans = _fk_arrays(model, q)
    rotations = {name: rot[i].copy() for i, name in enumerate(model.links)}
    translations = {name: trans[i].copy() for i, name in enumerate(model.links)}
    return LinkPoseSet(rotations, translations)


def _dof_frames(model: KinematicModel, rot: np.ndarray, trans: np.ndarray):
    """World axis (n_dof,3) and anchor point (n_dof,3) per movable joint."""
    child = model._dof_child
    axes_local = model._dof_axis
    axis_w = np.einsum("nij,nj->ni", rot[child], axes_local)
    point_w = trans[child]
    return axis_w, point_w


def _jacobians(model: KinematicModel, rot: np.ndarray, trans: np.ndarray,
               link_indices: np.ndarray) -> np.ndarray:
    """Stacked origin Jacobians (len(link_indices), 3, n_dof)."""
    axis_w, point_w = _dof_frames(model, rot, trans)
    targets = trans[link_indices]  # (T,3)
    diff = targets[:, None, :] - point_w[None, :, :]          # (T,n,3)
    cols = np.cross(axis_w[None, :, :], diff)                 # revolute columns
    cols[:, model._dof_prismatic, :] = axis_w[model._dof_prismatic]
    cols *= model._path_mask[link_indices][:, :, None]
    return cols.transpose(0, 2, 1)


def link_origin_jacobian(model: KinematicModel, q, link_id: str) -> np.ndarray:
    """Analytic 3 x n_dof Jacobian of a link origin translation.

    Columns of joints not on the root-to-link path are zero.
    """
    idx = model._require_link(link_id)
    q = as_config(model, q)
    rot, trans = _fk_arrays(model, q)
    return _jacobians(model, rot, trans, np.array([idx]))[0]


def clamp_to_limits(model: KinematicModel, q) -> np.ndarray:
    """Elementwise clamp of q into [lower, upper]; idempotent."""
    q = as_config(model, q)
    return np.clip(q, model.lower, model.upper)


def in_limits(model: KinematicModel, q, tol: float = 0.0) -> bool:
    q = as_config(model, q)
    return bool(np.all(q >= model.lower - tol) and np.all(q <= model.upper + tol))


def model_summary(model: KinematicModel) -> dict:
    """JSON-ready structural summary: links, joints with limits, n_dof."""
    joints = []
    for j in model.joints:
        joints.append({
            "name": j.name,
            "kind": j.kind,
            "limits": list(j.limits) if j.movable else None,
        })
    return {"links": list(model.links), "joints": joints, "n_dof": model.n_dof}
