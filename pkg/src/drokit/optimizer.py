"""Joint recovery: damped Gauss-Newton on link-origin targets, and the full
distance-matrix -> grasp configuration pipeline.

The per-iteration subproblem minimizes the damped sum of squared linearized
link-origin errors subject to box feasibility (limits) and an infinity-norm
step bound, solved by an active-set clamp.  A backtracking line search on the
true objective (sum of unsquared link errors) keeps the residual trace
monotone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .dro import recover_cloud
from .errors import ContractError, DataError, StageError
from .kinematics import (FIXED, KinematicModel, LinkPoseSet, as_config,
                         clamp_to_limits, in_limits, _fk_arrays, _jacobians)
from .registration import register_all

_LINESEARCH_SLOPE = 1e-4
_MIN_ALPHA = 2.0 ** -20
_IRLS_FLOOR = 1e-9  # link errors below this are treated as converged weights


@dataclass
class SolveParams:
    """Step bound, iteration budget, and convergence tolerances."""

    step_bound: float = 0.5
    max_iters: int = 100
    tol_step: float = 1e-4
    tol_residual: float = 1e-5
    damping: float = 1e-6

    def __post_init__(self):
        if self.step_bound <= 0.0:
            raise ContractError("step_bound must be positive")
        if self.tol_step <= 0.0 or self.tol_residual <= 0.0:
            raise ContractError("tolerances must be positive")
        if self.damping < 0.0:
            raise ContractError("damping must be nonnegative")
        if self.max_iters < 1:
            raise ContractError("max_iters must be at least 1")


@dataclass
class SolveReport:
    """Outcome of one joint solve; residuals are mean link-origin errors."""

    iterations: int
    final_residual: float
    converged: bool
    residual_trace: list[float] = field(default_factory=list)


@dataclass
class GraspResult:
    """Full pipeline output with per-stage wall times (seconds)."""

    q: np.ndarray
    link_poses: LinkPoseSet
    recovered_cloud: PointCloud
    report: SolveReport
    elapsed: dict[str, float]

    def to_json_dict(self) -> dict:
        return {
            "q": [float(v) for v in self.q],
            "residual": self.report.final_residual,
            "iterations": self.report.iterations,
            "converged": self.report.converged,
            "elapsed": dict(self.elapsed),
        }


def _bounded_damped_step(jac: np.ndarray, resid: np.ndarray, lb: np.ndarray,
                         ub: np.ndarray, damping: float) -> np.ndarray:
    """Minimize ||J d + r||^2 + damping ||d||^2 over the box [lb, ub].

    Active-set clamp: solve the damped normal equations, clamp offending
    coordinates to their bounds, re-solve the free block until the active
    set stabilizes.
    """
    n = jac.shape[1]
    jtj = jac.T @ jac + damping * np.eye(n)
    jtr = jac.T @ resid
    delta = np.zeros(n)
    free = np.ones(n, dtype=bool)
    for _ in range(n + 1):
        fixed = ~free
        rhs = -jtr[free] - jtj[np.ix_(free, fixed)] @ delta[fixed]
        delta[free] = np.linalg.solve(jtj[np.ix_(free, free)], rhs)
        clipped = np.clip(delta, lb, ub)
        newly_active = free & (clipped != delta)
        delta = clipped
        if not newly_active.any():
            break
        free &= ~newly_active
        if not free.any():
            break
    return np.clip(delta, lb, ub)


def solve_joints(model: KinematicModel, targets: dict[str, np.ndarray], q_init,
                 params: SolveParams | None = None) -> tuple[np.ndarray, SolveReport]:
    """Find in-limits joint values whose link origins match the targets.

    ``targets`` maps link names to world translations; the grasp pipeline
    supplies one per registered link plus the fixed-chain extensions
    (virtual tips).  Every iterate satisfies the joint limits and the
    per-iteration step bound.
    """
    if params is None:
        params = SolveParams()
    if not targets:
        raise ContractError("targets are empty")
    q = as_config(model, q_init).copy()
    if not in_limits(model, q):
        raise ContractError("q_init violates joint limits")

    idx = []
    goal = []
    for link in model.links:  # deterministic model order
        if link in targets:
            idx.append(model._require_link(link))
            goal.append(np.asarray(targets[link], dtype=float))
    if len(idx) != len(targets):
        unknown = sorted(set(targets) - set(model.links))
        raise ContractError(f"targets name unknown links: {unknown}")
    goal = np.array(goal)
    if not np.all(np.isfinite(goal)):
        raise DataError("targets contain non-finite values")
    idx = np.array(idx)
    n_t = len(idx)

    def objective(rot, trans):
        err = trans[idx] - goal
        norms = np.sqrt((err * err).sum(axis=1))
        return err, norms.sum()

    trace: list[float] = []
    converged = False
    iterations = 0
    rot, trans = _fk_arrays(model, q)
    err, total = objective(rot, trans)

    for it in range(1, params.max_iters + 1):
        iterations = it
        trace.append(total / n_t)
        if total / n_t < params.tol_residual:
            converged = True
            break

        jac = _jacobians(model, rot, trans, idx).reshape(3 * n_t, model.n_dof)
        resid = err.ravel()
        lb = np.maximum(model.lower - q, -params.step_bound)
        ub = np.minimum(model.upper - q, params.step_bound)
        # IRLS weights turn the squared surrogate into a majorizer of the
        # sum-of-norms objective, so the step is a true descent direction
        # even when some links already sit on their targets
        norms = np.sqrt((err * err).sum(axis=1))
        scale = np.repeat(1.0 / np.sqrt(np.maximum(norms, _IRLS_FLOOR)), 3)
        delta = _bounded_damped_step(jac * scale[:, None], resid * scale,
                                     lb, ub, params.damping)
        if np.abs(delta).max() < params.tol_step:
            converged = True
            break

        # linearized decrease for the Armijo test on the true objective
        lin = resid + jac @ delta
        predicted = total - np.sqrt((lin.reshape(-1, 3) ** 2).sum(axis=1)).sum()

        alpha = 1.0
        accepted = False
        while alpha >= _MIN_ALPHA:
            q_try = np.clip(q + alpha * delta, model.lower, model.upper)
            rot_try, trans_try = _fk_arrays(model, q_try)
            err_try, total_try = objective(rot_try, trans_try)
            gate = total - _LINESEARCH_SLOPE * alpha * max(predicted, 0.0)
            if total_try <= gate:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        q, rot, trans, err, total = q_try, rot_try, trans_try, err_try, total_try

    final_residual = total / n_t
    report = SolveReport(iterations=iterations, final_residual=float(final_residual),
                         converged=converged, residual_trace=trace)
    return q, report


def link_targets_from_poses(model: KinematicModel, poses: LinkPoseSet) -> dict[str, np.ndarray]:
    """Per-link translation targets, extended through fixed joints.

    Links without an estimated pose (virtual tip extensions and any other
    fixed-joint children) inherit a target composed from the nearest posed
    ancestor, which is what lets translation targets pin down fingertip
    orientation.
    """
    targets = {link: poses.translation(link).copy() for link in poses.links}
    rots = {link: poses.rotation(link) for link in poses.links}
    for link in model.links:
        if link in targets:
            continue
        joint = model.parent_joint(link)
        if joint.kind != FIXED or joint.parent_link not in rots:
            continue
        parent_rot = rots[joint.parent_link]
        rots[link] = parent_rot @ joint.origin[:3, :3]
        targets[link] = parent_rot @ joint.origin[:3, 3] + targets[joint.parent_link]
    return targets


def recover_grasp(model: KinematicModel, dro: np.ndarray, object_cloud,
                  q_init, params: SolveParams | None = None) -> GraspResult:
    """Distance matrix -> robot cloud -> link poses -> joint configuration.

    Stages are timed separately; failures carry the stage name.
    """
    if params is None:
        params = SolveParams()
    canonical = model.canonical_clouds
    if not canonical:
        raise ContractError("model has no canonical clouds attached")
    q_init = as_config(model, q_init)
    if not in_limits(model, q_init):
        raise ContractError("q_init violates joint limits")

    labels = []
    for link, pts in canonical.items():
        labels.extend([link] * len(pts))
    dro = np.asarray(dro, dtype=float)
    if dro.ndim != 2 or dro.shape[0] != len(labels):
        raise ContractError(f"distance matrix shape {dro.shape} does not match the "
                            f"{len(labels)} canonical cloud points")

    elapsed: dict[str, float] = {}
    t0 = time.perf_counter()
    try:
        recovered = recover_cloud(dro, object_cloud, labels)
    except Exception as exc:
        raise StageError("multilateration", exc) from exc
    elapsed["multilateration"] = time.perf_counter() - t0

    parents = {link: model.parent_link(link) for link in model.links}
    t0 = time.perf_counter()
    try:
        poses = register_all(canonical, recovered, parents)
    except Exception as exc:
        raise StageError("registration", exc) from exc
    elapsed["registration"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        targets = link_targets_from_poses(model, poses)
        q, report = solve_joints(model, targets, q_init, params)
    except Exception as exc:
        raise StageError("optimization", exc) from exc
    elapsed["optimization"] = time.perf_counter() - t0

    q = clamp_to_limits(model, q)
    return GraspResult(q=q, link_poses=poses, recovered_cloud=recovered,
                       report=report, elapsed=elapsed)
