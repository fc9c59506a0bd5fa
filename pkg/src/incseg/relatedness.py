"""Fréchet-style relatedness between image collections.

Each image is reduced to the mean of its per-pixel features; a
collection is summarized by the Gaussian (mu, sigma) fit to those
vectors, and two collections are compared with

    d^2 = ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2).

The matrix square root uses a cyclic Jacobi eigendecomposition so the
whole pipeline stays on plain ndarray ops, and negative eigenvalues
from rounding are clamped at zero.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .features import feature_map

EIGEN_WARN_SCALE = -1e-8  # warn when an eigenvalue dips below this times ||m||


@dataclass(frozen=True)
class FeatureStats:
    mu: np.ndarray  # (F,)
    sigma: np.ndarray  # (F, F) symmetric PSD up to rounding
    count: int


def pool_features(images):
    """(n, F) matrix of per-image mean feature vectors."""
    if not len(images):
        raise ContractViolation("no images to pool")
    rows = []
    for image in images:
        fm = feature_map(image)
        rows.append(fm.reshape(-1, fm.shape[-1]).mean(axis=0))
    return np.stack(rows)


def fit_stats(vectors):
    """Gaussian fit with the unbiased covariance, explicitly symmetrized."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2:
        raise ContractViolation("expected an (n, F) matrix")
    n = v.shape[0]
    if n < 2:
        raise ContractViolation("need >= 2 vectors for a covariance")
    mu = v.mean(axis=0)
    centered = v - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = (sigma + sigma.T) / 2.0
    return FeatureStats(mu, sigma, n)


def _jacobi_eigh(m, off_tol):
    """Cyclic Jacobi sweeps; returns (eigenvalues, column eigenvectors)."""
    a = m.copy()
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(100):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off <= off_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= off_tol / (n * n):
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    return np.diag(a).copy(), v


def sym_sqrt(m):
    """Symmetric PSD square root via Jacobi; clamps tiny negative spectrum."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolation("matrix must be square")
    scale = float(np.linalg.norm(m))
    asym_tol = 1e-9 * max(1.0, scale)
    if float(np.abs(m - m.T).max()) > asym_tol:
        raise ContractViolation("matrix is not symmetric")
    if scale == 0.0:
        return np.zeros_like(m)
    lam, vec = _jacobi_eigh((m + m.T) / 2.0, 1e-12 * scale)
    if lam.min() < EIGEN_WARN_SCALE * scale:
        warnings.warn(
            f"eigenvalue {lam.min():.3e} well below zero for a PSD matrix",
            RuntimeWarning,
            stacklevel=2,
        )
    root = vec @ np.diag(np.sqrt(np.maximum(lam, 0.0))) @ vec.T
    return (root + root.T) / 2.0


def frechet_distance(stats_a, stats_b):
    """Squared Fréchet distance between two Gaussian summaries (>= 0)."""
    if stats_a.mu.shape != stats_b.mu.shape:
        raise ContractViolation("feature dimensions differ")
    diff = stats_a.mu - stats_b.mu
    sb = sym_sqrt(stats_b.sigma)
    inner = sb @ stats_a.sigma @ sb
    cross = sym_sqrt((inner + inner.T) / 2.0)
    val = float(
        diff @ diff
        + np.trace(stats_a.sigma)
        + np.trace(stats_b.sigma)
        - 2.0 * np.trace(cross)
    )
    return max(val, 0.0)


def collection_stats(images):
    """Convenience: pool then fit."""
    return fit_stats(pool_features(images))
