"""Per-point surface normals from k-nearest-neighbour plane fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError, NormalEstimationError
from .recon_io import ObservationSet, Reconstruction, ScenePoint

# smallest-to-middle eigenvalue ratio guard; below this the neighbourhood is a line
RANK_TOLERANCE = 1e-12


@dataclass(frozen=True)
class NormalConfig:
    p: int = 10
    min_neighbors: int = 4
    orientation_rule: str = "toward-mean-camera-center"

    def __post_init__(self):
        if not self.p >= self.min_neighbors >= 3:
            raise InputError("need p >= min_neighbors >= 3")


def knn(positions: np.ndarray, ids: np.ndarray, query_id: int, p: int) -> np.ndarray:
    """Ids of the ``p`` points closest to ``query_id`` (itself excluded).

    Ties in distance go to the smaller point id.
    """
    ids = np.asarray(ids)
    q = int(np.flatnonzero(ids == query_id)[0])
    d2 = np.sum((positions - positions[q]) ** 2, axis=1)
    order = np.lexsort((ids, d2))
    order = order[order != q]
    return ids[order[:p]]


def _knn_all(positions: np.ndarray, p: int, slack: int = 8) -> np.ndarray:
    """Row i holds indices of the p nearest neighbours of point i (same tie rule as knn)."""
    n = len(positions)
    k = min(n, p + 1 + slack)
    _, cand = cKDTree(positions).query(positions, k=k)
    cand = np.asarray(cand).reshape(n, k)
    out = np.empty((n, p), dtype=np.int64)
    idx = np.arange(n)
    for i in range(n):
        c = cand[i][cand[i] != i]
        d2 = np.sum((positions[c] - positions[i]) ** 2, axis=1)
        order = np.lexsort((c, d2))
        if k < n and d2[order[p - 1]] >= d2.max():
            # a distance tie may continue past the candidate list
            d2 = np.sum((positions - positions[i]) ** 2, axis=1)
            order = np.lexsort((idx, d2))
            c = idx
            order = order[order != i]
        out[i] = c[order[:p]]
    return out


def fit_normal(neighbor_positions) -> np.ndarray:
    """Total-least-squares plane normal (sign arbitrary)."""
    P = np.asarray(neighbor_positions, dtype=float).reshape(-1, 3)
    if len(P) < 3:
        raise NormalEstimationError(f"plane fit needs 3 points, got {len(P)}")
    centered = P - P.mean(axis=0)
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    if not evals[2] > 0 or evals[1] <= RANK_TOLERANCE * evals[2]:
        raise NormalEstimationError("neighbourhood is collinear or coincident")
    n = evecs[:, 0]
    return n / np.linalg.norm(n)


def orient_normal(normal, position, viewpoint) -> np.ndarray:
    n = np.asarray(normal, dtype=float)
    if float(np.dot(n, np.asarray(viewpoint) - np.asarray(position))) < 0:
        return -n
    return n


def mean_observing_centers(recon: Reconstruction, obs: ObservationSet | None) -> dict[int, np.ndarray]:
    centers = {p.image_id: p.center for p in recon.poses}
    all_mean = np.mean([p.center for p in recon.poses], axis=0)
    out = {pid: all_mean for pid in recon.points}
    if obs is not None and len(obs):
        C = np.array([centers[i] for i in obs.image_ids])
        uniq, inv = np.unique(obs.point_ids, return_inverse=True)
        sums = np.zeros((len(uniq), 3))
        np.add.at(sums, inv, C)
        counts = np.bincount(inv, minlength=len(uniq))
        for k, pid in enumerate(uniq.tolist()):
            if pid in out:
                out[pid] = sums[k] / counts[k]
    return out


def orient_normals(recon: Reconstruction, obs: ObservationSet | None = None) -> Reconstruction:
    """Flip each normal to face the mean centre of the cameras observing it."""
    views = mean_observing_centers(recon, obs)
    points = {}
    for pid, pt in recon.points.items():
        n = pt.normal
        if n is not None:
            n = orient_normal(n, pt.position, views[pid])
        points[pid] = ScenePoint(pid, pt.position, n, pt.neighbor_count_used)
    return recon.replace(points=points)


def estimate_normals(recon: Reconstruction, obs: ObservationSet | None = None,
                     config: NormalConfig = NormalConfig()) -> tuple[Reconstruction, list[str]]:
    """Fit and orient a normal for every point.

    Points whose neighbourhood is degenerate keep ``normal=None`` and are
    listed in the returned warnings; callers drop them from the photometric
    problem.
    """
    ids, pos = recon.positions()
    n = len(ids)
    warnings = []
    if n - 1 < config.min_neighbors:
        raise NormalEstimationError(
            f"{n} points cannot supply {config.min_neighbors} neighbours each")
    p = min(config.p, n - 1)
    neighbours = _knn_all(pos, p)
    points = {}
    failed = []
    for k, pid in enumerate(ids.tolist()):
        nb = np.vstack([pos[k], pos[neighbours[k]]])
        try:
            normal = fit_normal(nb)
        except NormalEstimationError:
            failed.append(pid)
            normal = None
        points[pid] = ScenePoint(pid, pos[k], normal, p)
    if failed:
        warnings.append(f"normal estimation failed for {len(failed)} point(s): {failed[:10]}")
    return orient_normals(recon.replace(points=points), obs), warnings
