"""Point-cloud sampling and configuration mapping.

Canonical robot clouds are sampled once per (model, seed) and reused; every
stochastic routine here derives its randomness from named substreams of the
master seed (see :mod:`drokit.rng`), so equal seeds give bitwise-equal
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError
from .kinematics import KinematicModel, as_config, _fk_arrays
from .rng import substream

# Rigid registration needs at least 3 correspondences per link; reserving one
# more keeps the cross-covariance well-conditioned for thin links.
MIN_POINTS_PER_LINK = 4


@dataclass
class PointCloud:
    """N x 3 point array with optional per-point link labels.

    Labeled clouds keep label segments contiguous, ordered by model link
    order, so point index i refers to the same material point across
    configurations.
    """

    points: np.ndarray
    labels: list[str] | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ContractError(f"points must be (N, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ContractError("point cloud contains non-finite coordinates")
        if self.labels is not None:
            self.labels = list(self.labels)
            if len(self.labels) != len(self.points):
                raise ContractError("labels length does not match point count")

    def __len__(self) -> int:
        return len(self.points)

    def segments(self) -> list[tuple[str, slice]]:
        """Contiguous (label, slice) runs in order of appearance."""
        if self.labels is None:
            raise ContractError("cloud has no labels")
        runs = []
        start = 0
        for i in range(1, len(self.labels) + 1):
            if i == len(self.labels) or self.labels[i] != self.labels[start]:
                runs.append((self.labels[start], slice(start, i)))
                start = i
        seen = [label for label, _ in runs]
        if len(set(seen)) != len(seen):
            raise ContractError("label segments are not contiguous")
        return runs

    def by_link(self) -> dict[str, np.ndarray]:
        return {label: self.points[sl] for label, sl in self.segments()}


@dataclass
class TriangleMesh:
    """Triangle soup: vertices (V,3) and vertex-index triangles (T,3)."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ContractError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ContractError(f"triangles must be (T, 3), got {self.triangles.shape}")
        if len(self.triangles) and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ContractError("triangle indices out of vertex range")

    def corners(self) -> np.ndarray:
        """(T, 3, 3) corner coordinates."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners()
        cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)


@dataclass
class SamplingConfig:
    """Counts and noise parameters for robot/object cloud sampling."""

    n_per_link: int = 512
    n_total: int = 512
    n_object: int = 512
    object_noise_sigma: float = 0.002
    object_pool: int = 65536
    seed: int = 0

    def __post_init__(self):
        for name in ("n_per_link", "n_total", "n_object", "object_pool"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")


def load_obj(text: str) -> TriangleMesh:
    """Parse OBJ text: vertices and triangular faces only.

    Zero-area faces are dropped at load time; faces with more than three
    vertices are rejected.
    """
    vertices = []
    faces = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise DataError(f"OBJ line {lineno}: vertex needs 3 coordinates")
            vertices.append([float(v) for v in parts[1:4]])
        elif tag == "f":
            idx = parts[1:]
            if len(idx) != 3:
                raise DataError(f"OBJ line {lineno}: only triangular faces supported")
            face = []
            for token in idx:
                v = token.split("/")[0]
                i = int(v)
                if i <= 0:
                    raise DataError(f"OBJ line {lineno}: indices must be positive")
                face.append(i - 1)
            faces.append(face)
        # other tags (vn, vt, o, g, s, usemtl, mtllib) are ignored
    if not vertices:
        raise DataError("OBJ has no vertices")
    mesh = TriangleMesh(np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3))
    if len(mesh.triangles):
        areas = mesh.areas()
        scale = max(float(np.ptp(mesh.vertices)), 1.0)
        keep = areas > 1e-12 * scale * scale
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[keep])
    return mesh


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = ["# OBJ"]
    for v in mesh.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def sample_mesh_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform surface samples with barycentric jitter."""
    if len(mesh.triangles) == 0:
        raise DataError("mesh has no triangles to sample")
    areas = mesh.areas()
    total = areas.sum()
    if total <= 0.0:
        raise DataError("mesh has zero total surface area")
    cdf = np.cumsum(areas) / total
    pick = np.searchsorted(cdf, rng.random(n), side="right")
    pick = np.minimum(pick, len(areas) - 1)
    corners = mesh.corners()[pick]
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return (corners[:, 0]
            + u[:, None] * (corners[:, 1] - corners[:, 0])
            + v[:, None] * (corners[:, 2] - corners[:, 0]))


def _greedy_fps(points: np.ndarray, k: int, initial: list[int]) -> list[int]:
    """Greedy max-min selection continuing from an initial index set.

    Each added index maximizes the minimum Euclidean distance to the chosen
    set; ties break to the lowest index (np.argmax picks the first maximum).
    """
    chosen = list(initial)
    dist = np.full(len(points), np.inf)
    for i in chosen:
        dist = np.minimum(dist, np.linalg.norm(points - points[i], axis=1))
    while len(chosen) < k:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def farthest_point_sampling(points: np.ndarray, k: int, seed: int) -> list[int]:
    """Indices of k farthest-point samples; the start index is drawn
    uniformly from the seeded ``fps`` stream."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= k <= n:
        raise ContractError(f"k={k} out of range [1, {n}]")
    start = int(substream(seed, "fps").integers(n))
    return _greedy_fps(points, k, [start])


def sample_link_clouds(model: KinematicModel, meshes: dict[str, TriangleMesh],
                       cfg: SamplingConfig) -> dict[str, np.ndarray]:
    """Canonical per-link clouds: per-link surface sampling, then global
    farthest-point downsampling to ``cfg.n_total``.

    Every geometric link keeps at least MIN_POINTS_PER_LINK points so that
    per-link rigid registration stays well-posed.  Output is keyed in model
    link order; points within a link keep their sampling order.
    """
    geo_links = [l for l in model.links if l in meshes]
    if not geo_links:
        raise DataError("no link has a mesh")
    unknown = set(meshes) - set(model.links)
    if unknown:
        raise ContractError(f"meshes given for unknown links: {sorted(unknown)}")
    if cfg.n_total > cfg.n_per_link * len(geo_links):
        raise ContractError("n_total exceeds n_per_link * number of geometric links")
    reserve = min(MIN_POINTS_PER_LINK, cfg.n_per_link)
    if cfg.n_total < reserve * len(geo_links):
        raise ContractError(f"n_total={cfg.n_total} cannot reserve {reserve} "
                            f"points for each of {len(geo_links)} links")

    blocks = []
    labels = []
    for link in geo_links:
        mesh = meshes[link]
        if len(mesh.triangles) == 0:
            raise DataError(f"link '{link}' has an empty mesh")
        pts = sample_mesh_surface(mesh, cfg.n_per_link, substream(cfg.seed, f"link:{link}"))
        blocks.append(pts)
        labels.extend([link] * cfg.n_per_link)
    allpts = np.vstack(blocks)

    # reserve a local farthest-point core per link, then fill globally
    initial = []
    for bi, link in enumerate(geo_links):
        base = bi * cfg.n_per_link
        local = _greedy_fps(blocks[bi], reserve, [0])
        initial.extend(base + i for i in local)
    chosen = _greedy_fps(allpts, cfg.n_total, initial)

    keep = np.sort(np.array(chosen))
    out: dict[str, np.ndarray] = {}
    for bi, link in enumerate(geo_links):
        base = bi * cfg.n_per_link
        sel = keep[(keep >= base) & (keep < base + cfg.n_per_link)]
        out[link] = allpts[sel]
    return out


def cloud_fk(model: KinematicModel, q, canonical: dict[str, np.ndarray]) -> PointCloud:
    """Map canonical per-link clouds through the link poses at q.

    Point order is stable across configurations: index i always names the
    same canonical point of the same link.
    """
    if not canonical:
        raise ContractError("canonical clouds are empty")
    for link in canonical:
        if link not in model._link_index:
            raise ContractError(f"canonical cloud for unknown link '{link}'")
    q = as_config(model, q)
    rot, trans = _fk_arrays(model, q)
    parts = []
    labels = []
    for link in model.links:
        if link not in canonical:
            continue
        pts = np.asarray(canonical[link], dtype=float)
        i = model._link_index[link]
        parts.append(pts @ rot[i].T + trans[i])
        labels.extend([link] * len(pts))
    return PointCloud(np.vstack(parts), labels)


def sample_object_cloud(mesh: TriangleMesh, cfg: SamplingConfig) -> PointCloud:
    """Object cloud: draw ``n_object`` points without replacement from an
    ``object_pool``-sized surface pool, then add isotropic Gaussian noise."""
    if cfg.n_object > cfg.object_pool:
        raise ContractError("n_object exceeds object_pool")
    rng = substream(cfg.seed, "object")
    pool = sample_mesh_surface(mesh, cfg.object_pool, rng)
    pick = rng.choice(cfg.object_pool, size=cfg.n_object, replace=False)
    pts = pool[pick]
    if cfg.object_noise_sigma > 0.0:
        pts = pts + rng.normal(0.0, cfg.object_noise_sigma, size=pts.shape)
    return PointCloud(pts)


def partial_cloud(points: np.ndarray, seed: int) -> np.ndarray:
    """Keep the half of the cloud facing a random view direction.

    A point is drawn uniformly on the unit sphere; ``r`` is the direction
    from it to the origin.  Points score by the dot product of ``r`` with
    their unit direction from the cloud centroid; the larger half survives.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n % 2 != 0:
        raise ContractError("partial_cloud needs an even point count")
    rng = substream(seed, "partial")
    v = rng.normal(size=3)
    norm = np.linalg.norm(v)
    while norm < 1e-12:
        v = rng.normal(size=3)
        norm = np.linalg.norm(v)
    r = -v / norm

    centroid = points.mean(axis=0)
    d = points - centroid
    lens = np.linalg.norm(d, axis=1)
    safe = lens > 1e-15
    dirs = np.zeros_like(d)
    dirs[safe] = d[safe] / lens[safe, None]
    scores = dirs @ r

    order = np.argsort(-scores, kind="stable")
    keep = np.sort(order[: n // 2])
    return points[keep]
