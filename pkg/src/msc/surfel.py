"""Surfel normal estimation for clouds that arrive without normals.

Classic PCA normals: per point, the smallest-eigenvalue eigenvector of the
k-nearest-neighbor covariance, sign-oriented toward a reference point
(scene centroid raised 2 m by default). Degenerate neighborhoods (rank <
2: collinear or coincident points) are flagged invalid so reconstruction
losses can exclude them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .cloud import PointCloud
from .errors import DataError

DEFAULT_K = 16
# lambda_mid <= RANK_TOL * lambda_max means the neighborhood has no plane
_RANK_TOL = 1e-9


@dataclass(frozen=True)
class NormalEstimate:
    normals: np.ndarray  # (n, 3), unit where valid
    valid: np.ndarray  # (n,) bool
    k: int
    reference: np.ndarray  # (3,) orientation target


def default_reference(cloud: PointCloud) -> np.ndarray:
    ref = cloud.positions.mean(axis=0)
    return ref + np.array([0.0, 0.0, 2.0])


def estimate_normals(
    cloud: PointCloud, k: int = DEFAULT_K, reference: np.ndarray | None = None
) -> NormalEstimate:
    """PCA normals from the k nearest neighbors of each point (self included)."""
    n = cloud.n
    if not 3 <= k <= n:
        raise DataError(f"need n >= k >= 3, got n={n}, k={k}")
    if reference is None:
        reference = default_reference(cloud)
    reference = np.asarray(reference, dtype=np.float64).reshape(3)

    idx = kernels.knn(cloud.positions, k)  # (n, k)
    nbr = cloud.positions[idx]  # (n, k, 3)
    mu = nbr.mean(axis=1, keepdims=True)
    centered = nbr - mu
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    normals = eigvecs[:, :, 0]
    valid = eigvals[:, 1] > _RANK_TOL * np.maximum(eigvals[:, 2], 1e-300)

    # orient toward the reference point; leave exact-tangent cases as-is
    toward = reference[None, :] - cloud.positions
    flip = np.sum(normals * toward, axis=1) < 0.0
    normals = np.where(flip[:, None], -normals, normals)
    norms = np.sqrt(np.sum(normals * normals, axis=1))
    normals = normals / np.where(norms > 0, norms, 1.0)[:, None]
    valid = valid & (norms > 0)
    return NormalEstimate(normals=normals, valid=valid, k=k, reference=reference)


def ensure_normals(cloud: PointCloud, k: int = DEFAULT_K) -> tuple[PointCloud, np.ndarray]:
    """Return ``(cloud_with_normals, valid_mask)``, estimating when absent.

    Degenerate points get a placeholder up-normal and ``valid=False`` so
    reconstruction losses can exclude them; clouds that already carry
    normals are fully valid.
    """
    if cloud.normals is not None:
        return cloud, np.ones(cloud.n, dtype=bool)
    est = estimate_normals(cloud, k=min(k, max(3, cloud.n)))
    normals = est.normals.copy()
    normals[~est.valid] = (0.0, 0.0, 1.0)
    return cloud.with_fields(normals=normals), est.valid.copy()
