"""Grasp bookkeeping: diversity statistics, controller targets, disturbance
forces, and the JSON-lines grasp record format."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .kinematics import (KinematicModel, as_config, clamp_to_limits, in_limits,
                         _dof_frames, _fk_arrays)

PROVENANCES = ("dataset", "recovered", "manual")


@dataclass
class GraspRecord:
    """One grasp: robot, object, full configuration, provenance."""

    robot_id: str
    object_id: str
    q: np.ndarray
    provenance: str = "dataset"
    success: bool | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.q.ndim != 1:
            raise ContractError("grasp configuration must be a vector")
        if self.provenance not in PROVENANCES:
            raise ContractError(f"provenance must be one of {PROVENANCES}")

    def to_json_line(self) -> str:
        obj = {"robot": self.robot_id, "object": self.object_id,
               "q": [float(v) for v in self.q], "provenance": self.provenance}
        if self.success is not None:
            obj["success"] = bool(self.success)
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "GraspRecord":
        obj = json.loads(line)
        return cls(robot_id=obj["robot"], object_id=obj["object"],
                   q=np.array(obj["q"], dtype=float),
                   provenance=obj.get("provenance", "dataset"),
                   success=obj.get("success"))


def write_grasp_records(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json_line() + "\n")


def read_grasp_records(path) -> list[GraspRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(GraspRecord.from_json_line(line))
    return records


def per_dimension_std(grasps: list[GraspRecord]) -> np.ndarray:
    """Population standard deviation of each configuration dimension."""
    if not grasps:
        raise ContractError("grasp list is empty")
    n = len(grasps[0].q)
    for g in grasps:
        if len(g.q) != n:
            raise ContractError("grasp configurations have unequal lengths")
    stack = np.array([g.q for g in grasps])
    return stack.std(axis=0, ddof=0)


def diversity(grasps: list[GraspRecord]) -> float:
    """Mean across dimensions of the per-dimension population standard
    deviation (the six wrist entries count as dimensions)."""
    return float(per_dimension_std(grasps).mean())


def controller_targets(model: KinematicModel, q_pred, object_centroid,
                       delta: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Open/close target pair around a predicted grasp.

    For each actuated joint the sign of the derivative of the mean
    tip-to-centroid distance decides the opening direction; the outer target
    steps ``delta`` that way, the inner target the opposite way.  Wrist
    entries are untouched and both outputs are clamped to limits.
    """
    q = as_config(model, q_pred)
    if not in_limits(model, q):
        raise ContractError("q_pred violates joint limits")
    centroid = np.asarray(object_centroid, dtype=float)
    if centroid.shape != (3,):
        raise ContractError("object centroid must be a 3-vector")
    if delta < 0.0:
        raise ContractError("delta must be nonnegative")

    rot, trans = _fk_arrays(model, q)
    axis_w, point_w = _dof_frames(model, rot, trans)
    tip_idx = np.array([model._require_link(t) for t in model.tip_links], dtype=int)

    q_outer = q.copy()
    q_inner = q.copy()
    if delta > 0.0 and len(tip_idx):
        for dof in range(6, model.n_dof):
            tips = tip_idx[model._path_mask[tip_idx, dof]]
            if len(tips) == 0:
                continue
            deriv = 0.0
            for t in tips:
                offset = trans[t] - centroid
                dist = np.linalg.norm(offset)
                if dist < 1e-12:
                    continue
                if model._dof_prismatic[dof]:
                    col = axis_w[dof]
                else:
                    col = np.cross(axis_w[dof], trans[t] - point_w[dof])
                deriv += float(offset @ col) / dist
            deriv /= len(tips)
            sign = float(np.sign(deriv))
            q_outer[dof] += delta * sign
            q_inner[dof] -= delta * sign
    return clamp_to_limits(model, q_outer), clamp_to_limits(model, q_inner)


def disturbance_forces(object_mass: float) -> np.ndarray:
    """Six axis-aligned test forces of magnitude 0.5 * mass (newtons)."""
    if object_mass <= 0.0:
        raise ContractError("object mass must be positive")
    mag = 0.5 * object_mass
    return mag * np.array([
        [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
    ])
