"""Correspondence-known rigid registration of per-link point sets.

Each link pose is the closed-form least-squares rotation+translation between
its canonical points and their recovered counterparts: centroid alignment
followed by the orthogonal Procrustes solution of the cross-covariance SVD,
with the reflection case corrected so the rotation is always proper.
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud
from .errors import ContractError, DegeneracyError
from .kinematics import LinkPoseSet

# second singular value below this fraction of the largest means the points
# span less than a plane: rotation about the point line is unobservable
_RANK_RTOL = 1e-9


def register_link(canonical_points: np.ndarray, predicted_points: np.ndarray,
                  name: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation minimizing sum ||predicted - (R c + x)||^2.

    Requires at least 3 non-collinear correspondences; index i must name the
    same material point in both arrays.
    """
    a = np.asarray(canonical_points, dtype=float)
    b = np.asarray(predicted_points, dtype=float)
    tag = f" for link '{name}'" if name else ""
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ContractError(f"registration{tag}: point arrays must share shape (M, 3), "
                            f"got {a.shape} and {b.shape}")
    if len(a) < 3:
        raise ContractError(f"registration{tag}: need at least 3 points, got {len(a)}")

    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0.0 or s[1] <= _RANK_RTOL * s[0]:
        raise DegeneracyError(f"registration{tag}: points are collinear or coincident "
                              "(rank-deficient cross-covariance)")
    v = vt.T
    rot = v @ u.T
    if np.linalg.det(rot) < 0.0:
        v = v.copy()
        v[:, -1] = -v[:, -1]
        rot = v @ u.T
    x = cb - rot @ ca
    return rot, x


def register_all(canonical: dict[str, np.ndarray], recovered: PointCloud,
                 parents: dict[str, str | None] | None = None) -> LinkPoseSet:
    """Per-link registration of a labeled recovered cloud.

    ``parents`` maps each link to its parent link (None at the root); it is
    only consulted for the degenerate fallback, where a link with collinear
    canonical points inherits the nearest registered ancestor's rotation and
    is flagged in ``fallback_links``.
    """
    recovered_by_link = recovered.by_link()
    if set(recovered_by_link) != set(canonical):
        missing = sorted(set(canonical) ^ set(recovered_by_link))
        raise ContractError(f"recovered labels do not match canonical links: {missing}")
    for link, pts in canonical.items():
        if len(recovered_by_link[link]) != len(pts):
            raise ContractError(f"link '{link}': recovered segment has "
                                f"{len(recovered_by_link[link])} points, canonical has {len(pts)}")

    rotations: dict[str, np.ndarray] = {}
    translations: dict[str, np.ndarray] = {}
    fallback: set[str] = set()
    for link, can_pts in canonical.items():
        pred = recovered_by_link[link]
        try:
            rot, x = register_link(can_pts, pred, name=link)
        except DegeneracyError:
            rot = _ancestor_rotation(link, parents, rotations)
            x = pred.mean(axis=0) - rot @ np.asarray(can_pts, dtype=float).mean(axis=0)
            fallback.add(link)
        rotations[link] = rot
        translations[link] = x
    return LinkPoseSet(rotations, translations, frozenset(fallback))


def _ancestor_rotation(link: str, parents, rotations: dict[str, np.ndarray]) -> np.ndarray:
    if parents is not None:
        cur = parents.get(link)
        while cur is not None:
            if cur in rotations:
                return rotations[cur].copy()
            cur = parents.get(cur)
    return np.eye(3)


def registration_residual(canonical_points, predicted_points, rot, x) -> float:
    """Sum of squared correspondence errors under a candidate pose."""
    a = np.asarray(canonical_points, dtype=float)
    b = np.asarray(predicted_points, dtype=float)
    err = b - (a @ np.asarray(rot).T + np.asarray(x))
    return float((err * err).sum())
