"""Robot-object distance matrices and point recovery by multilateration.

The distance matrix stores the Euclidean distance between every robot point
and every object point.  Any such matrix, together with the object cloud it
was measured against, determines the robot cloud: each row is a set of
range measurements to known reference points, solved by a linearized
least-squares step plus a short Gauss-Newton polish on the squared-range
residuals.
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud
from .errors import ContractError, DegeneracyError

CONDITION_LIMIT = 1e10


def _points_of(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ContractError(f"expected (N, 3) points, got shape {pts.shape}")
    return pts


def compute_dro(robot_cloud, object_cloud, block: int = 4) -> np.ndarray:
    """Pairwise distance matrix, computed in a block x block grid of tiles.

    The tiling only bounds peak memory; entries are bitwise identical for
    any block count.
    """
    rpts = _points_of(robot_cloud)
    opts = _points_of(object_cloud)
    if len(rpts) == 0 or len(opts) == 0:
        raise ContractError("clouds must be nonempty")
    if block < 1:
        raise ContractError("block count must be >= 1")
    n_r, n_o = len(rpts), len(opts)
    tile_r = -(-n_r // block)
    tile_o = -(-n_o // block)
    out = np.empty((n_r, n_o))
    for i0 in range(0, n_r, tile_r):
        ri = rpts[i0:i0 + tile_r]
        for j0 in range(0, n_o, tile_o):
            oj = opts[j0:j0 + tile_o]
            diff = ri[:, None, :] - oj[None, :, :]
            out[i0:i0 + tile_r, j0:j0 + tile_o] = np.sqrt((diff * diff).sum(axis=2))
    return out


def _reference_system(obj: np.ndarray) -> np.ndarray:
    """Linearized multilateration system matrix; shared by every row."""
    n = len(obj)
    if n < 4:
        raise DegeneracyError(f"need at least 4 reference points, got {n}")
    a = np.empty((n, 4))
    a[:, :3] = -2.0 * obj
    a[:, 3] = 1.0
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] <= 0.0 or sv[0] / sv[-1] > CONDITION_LIMIT:
        raise DegeneracyError("reference points are degenerate (coplanar or worse); "
                              f"condition number exceeds {CONDITION_LIMIT:.0e}")
    return a


def _multilaterate_rows(dist: np.ndarray, obj: np.ndarray, refine_steps: int) -> np.ndarray:
    """Solve every row of a distance matrix against shared references.

    Closed-form step: with s = ||p||^2 the range equations become linear,
    -2 p_j . p + s = d_j^2 - ||p_j||^2, solved for all rows at once by SVD
    least squares.  Gauss-Newton steps on f_j(p) = ||p - p_j||^2 - d_j^2
    then remove the linearization bias.
    """
    a = _reference_system(obj)
    ref_sq = (obj * obj).sum(axis=1)
    b = (dist * dist - ref_sq).T  # (N_O, rows)
    solution = np.linalg.lstsq(a, b, rcond=None)[0]
    p = np.ascontiguousarray(solution[:3].T)  # (rows, 3)

    d_sq = dist * dist
    for _ in range(refine_steps):
        diff = p[:, None, :] - obj[None, :, :]            # (rows, N_O, 3)
        f = (diff * diff).sum(axis=2) - d_sq              # (rows, N_O)
        jtj = 4.0 * np.einsum("rna,rnb->rab", diff, diff)
        jtf = 2.0 * np.einsum("rna,rn->ra", diff, f)
        try:
            step = np.linalg.solve(jtj, jtf[..., None])[..., 0]
        except np.linalg.LinAlgError:
            bad = [i for i in range(len(p))
                   if np.linalg.matrix_rank(jtj[i]) < 3]
            row = bad[0] if bad else 0
            raise DegeneracyError(f"refinement normal equations singular at row {row}")
        p = p - step
    if not np.all(np.isfinite(p)):
        row = int(np.flatnonzero(~np.isfinite(p).all(axis=1))[0])
        raise DegeneracyError(f"multilateration diverged at row {row}")
    return p


def multilaterate_point(distances, object_cloud, refine_steps: int = 3) -> np.ndarray:
    """Position of one point from its distances to all object points."""
    obj = _points_of(object_cloud)
    d = np.asarray(distances, dtype=float)
    if d.shape != (len(obj),):
        raise ContractError(f"distances shape {d.shape} does not match "
                            f"{len(obj)} reference points")
    _validate_distances(d)
    return _multilaterate_rows(d[None, :], obj, refine_steps)[0]


def _validate_distances(d: np.ndarray):
    if not np.all(np.isfinite(d)):
        raise ContractError("distance matrix contains non-finite entries")
    if np.any(d < 0.0):
        raise ContractError("distance matrix contains negative entries")


def recover_cloud(dro: np.ndarray, object_cloud, labels=None,
                  refine_steps: int = 3) -> PointCloud:
    """Row-wise multilateration of a full distance matrix.

    Rows are independent; the output carries the provided link labels.
    """
    obj = _points_of(object_cloud)
    dro = np.asarray(dro, dtype=float)
    if dro.ndim != 2:
        raise ContractError(f"distance matrix must be 2-D, got shape {dro.shape}")
    if dro.shape[1] != len(obj):
        raise ContractError(f"matrix has {dro.shape[1]} columns but object cloud "
                            f"has {len(obj)} points")
    _validate_distances(dro)
    pts = _multilaterate_rows(dro, obj, refine_steps)
    return PointCloud(pts, list(labels) if labels is not None else None)
